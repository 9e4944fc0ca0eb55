"""Scale-detection datasets built from two-pixel images.

Two tasks are supported, in one or two spatial dimensions:

* task 1 labels an image by comparing the distance ``d`` between its two
  active pixels to a characteristic scale ``xi`` (``y = sign(xi - d)``), with
  distances inside the open band ``(xi - g/2, xi + g/2)`` never generated;
* task 2 partitions the image into non-overlapping patches of side ``xi``
  anchored at the origin and labels ``+1`` iff both pixels share a patch.

Active pixels carry the value ``sqrt(N/2)`` where ``N`` is the number of
pixels, so that every two-pixel image has squared norm ``N``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .errors import ParameterError

Coord = tuple[int, ...]


@dataclass(frozen=True)
class Input:
    pixels: np.ndarray
    active: tuple[Coord, ...]

    @property
    def dim(self) -> int:
        return self.pixels.ndim

    @property
    def L(self) -> int:
        return self.pixels.shape[0]


@dataclass(frozen=True)
class LabeledExample:
    input: Input
    label: int
    distance: float


def _check_dim(dim: int) -> None:
    if dim not in (1, 2):
        raise ParameterError(f"dim must be 1 or 2, got {dim}")


def _in_bounds(L: int, coord: Coord, dim: int) -> bool:
    return len(coord) == dim and all(0 <= c < L for c in coord)


def active_value(L: int, dim: int) -> float:
    """Intensity of an active pixel: squared norm equals the pixel count."""
    return math.sqrt(L**dim / 2)


def single_pixel(L: int, i: int | Sequence[int], dim: int = 1) -> Input:
    """Unit impulse at coordinate ``i``."""
    _check_dim(dim)
    coord = (int(i),) if np.isscalar(i) else tuple(int(c) for c in i)
    if not _in_bounds(L, coord, dim):
        raise ParameterError(f"coordinate {coord} out of bounds for L={L}, dim={dim}")
    pixels = np.zeros((L,) * dim)
    pixels[coord] = 1.0
    return Input(pixels, (coord,))


def two_pixel(L: int, a: Sequence[int] | int, b: Sequence[int] | int, dim: int = 1) -> Input:
    """Normalized image ``sqrt(N/2) (delta_a + delta_b)``."""
    _check_dim(dim)
    ca = (int(a),) if np.isscalar(a) else tuple(int(c) for c in a)
    cb = (int(b),) if np.isscalar(b) else tuple(int(c) for c in b)
    if not (_in_bounds(L, ca, dim) and _in_bounds(L, cb, dim)):
        raise ParameterError(f"coordinates {ca}, {cb} out of bounds for L={L}")
    if ca == cb:
        raise ParameterError("active pixels must be distinct")
    pixels = np.zeros((L,) * dim)
    v = active_value(L, dim)
    pixels[ca] = v
    pixels[cb] = v
    return Input(pixels, (ca, cb))


def pixel_distance(a: Sequence[int], b: Sequence[int]) -> float:
    return float(math.dist(a, b))


def task1_label(d: float, xi: float) -> int:
    return 1 if xi - d > 0 else -1


def task2_label(a: Sequence[int], b: Sequence[int], xi: int) -> int:
    return 1 if all(p // xi == q // xi for p, q in zip(a, b)) else -1


@dataclass
class Dataset:
    """Examples stored as coordinate arrays; pixel arrays are built on demand.

    ``coords`` has shape ``(n, 2, dim)``.
    """

    coords: np.ndarray
    labels: np.ndarray
    distances: np.ndarray
    params: dict
    train: np.ndarray
    test: np.ndarray
    _examples: list | None = field(default=None, repr=False, compare=False)

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def L(self) -> int:
        return int(self.params["L"])

    @property
    def dim(self) -> int:
        return int(self.params["dim"])

    @property
    def examples(self) -> list[LabeledExample]:
        if self._examples is None:
            self._examples = [self.example(i) for i in range(len(self))]
        return self._examples

    def example(self, i: int) -> LabeledExample:
        a, b = (tuple(int(c) for c in row) for row in self.coords[i])
        return LabeledExample(two_pixel(self.L, a, b, self.dim), int(self.labels[i]), float(self.distances[i]))

    def pixels(self, idx: Sequence[int] | np.ndarray | None = None) -> np.ndarray:
        """Batch of images with a leading channel axis: ``(n, 1, L[, L])``."""
        idx = np.arange(len(self)) if idx is None else np.asarray(idx, dtype=int)
        L, dim = self.L, self.dim
        out = np.zeros((len(idx), 1) + (L,) * dim)
        v = active_value(L, dim)
        rows = np.arange(len(idx))
        for p in range(2):
            c = self.coords[idx, p]
            out[(rows, 0) + tuple(c[:, j] for j in range(dim))] = v
        return out

    def split_arrays(self, which: str) -> tuple[np.ndarray, np.ndarray]:
        idx = self.train if which == "train" else self.test
        return self.pixels(idx), self.labels[idx].astype(float)

    def to_jsonl(self, path: str | Path) -> None:
        write_jsonl(self, path)


def _split(n: int, labels: np.ndarray, n_train: int | None, train_fraction: float, rng) -> tuple[np.ndarray, np.ndarray]:
    """Class-stratified disjoint split."""
    if n_train is None:
        n_train = int(round(train_fraction * n))
    if not 0 <= n_train <= n:
        raise ParameterError(f"n_train={n_train} incompatible with n={n}")
    train = []
    pos = np.flatnonzero(labels > 0)
    neg = np.flatnonzero(labels < 0)
    n_pos = int(round(n_train * len(pos) / n)) if n else 0
    n_pos = min(n_pos, len(pos), n_train)
    n_neg = n_train - n_pos
    if n_neg > len(neg):
        n_neg = len(neg)
        n_pos = n_train - n_neg
    train = np.concatenate([rng.permutation(pos)[:n_pos], rng.permutation(neg)[:n_neg]])
    train = np.sort(train)
    test = np.setdiff1d(np.arange(n), train)
    return train, test


def _task1_offsets(L: int, dim: int) -> tuple[np.ndarray, np.ndarray]:
    """Canonical offsets of unordered pixel pairs and their squared lengths."""
    if dim == 1:
        off = np.arange(1, L)[:, None]
    else:
        dx, dy = np.meshgrid(np.arange(-(L - 1), L), np.arange(0, L), indexing="ij")
        keep = (dy > 0) | ((dy == 0) & (dx > 0))
        off = np.stack([dy[keep], dx[keep]], axis=1)
    return off, (off**2).sum(axis=1)


def gen_task1(
    L: int,
    xi: float,
    g: float,
    n: int,
    dim: int = 1,
    seed: int = 0,
    n_train: int | None = None,
    train_fraction: float = 0.8,
) -> Dataset:
    """Distance-versus-scale dataset with exactly alternating labels.

    For each example the label is fixed first, then a distance is drawn
    uniformly among the attainable distances of that class, and finally the
    pair is drawn uniformly among all pixel pairs at that distance.
    """
    _check_dim(dim)
    if g <= 0:
        raise ParameterError(f"gap must be positive, got g={g}")
    if L < 2 * xi:
        raise ParameterError(f"need L >= 2*xi, got L={L}, xi={xi}")
    offsets, sq = _task1_offsets(L, dim)
    d_all = np.sqrt(sq)
    lo, hi = xi - g / 2, xi + g / 2
    classes = {1: d_all <= lo, -1: d_all >= hi}
    for lab, mask in classes.items():
        if not mask.any():
            raise ParameterError(
                f"no attainable distance for label {lab:+d} with xi={xi}, g={g}, L={L}"
            )
    sampler, splitter = (np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(2))

    # For each class: distinct squared distances, and per offset the number of placements.
    placements = np.prod(L - np.abs(offsets), axis=1).astype(float)
    tables = {}
    for lab, mask in classes.items():
        values = np.unique(sq[mask])
        tables[lab] = values

    coords = np.zeros((n, 2, dim), dtype=int)
    labels = np.where(np.arange(n) % 2 == 0, 1, -1)
    distances = np.zeros(n)
    for t in range(n):
        values = tables[labels[t]]
        s = values[sampler.integers(len(values))]
        cand = np.flatnonzero(sq == s)
        w = placements[cand]
        o = offsets[cand[sampler.choice(len(cand), p=w / w.sum())]]
        start = np.array([sampler.integers(0, L - abs(c)) for c in o])
        if dim == 2 and o[1] < 0:
            start[1] -= o[1]
        a, b = start, start + o
        coords[t] = np.sort(np.stack([a, b]), axis=0) if dim == 1 else np.stack([a, b])
        distances[t] = math.sqrt(s)
    train, test = _split(n, labels, n_train, train_fraction, splitter)
    params = dict(task=1, L=L, xi=xi, g=g, n=n, dim=dim, seed=seed)
    return Dataset(coords, labels, distances, params, train, test)


def gen_task2(
    L: int,
    xi: int,
    n: int,
    dim: int = 1,
    seed: int = 0,
    n_train: int | None = None,
    train_fraction: float = 0.8,
) -> Dataset:
    """Same-patch dataset on the fixed grid of side-``xi`` patches."""
    _check_dim(dim)
    if xi < 1 or L % xi != 0:
        raise ParameterError(f"patch side xi={xi} must divide L={L}")
    if xi**dim < 2 or L // xi < 2:
        raise ParameterError(f"xi={xi}, L={L} leaves one of the classes empty")
    sampler, splitter = (np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(2))
    n_patch = L // xi
    coords = np.zeros((n, 2, dim), dtype=int)
    labels = np.where(np.arange(n) % 2 == 0, 1, -1)
    for t in range(n):
        if labels[t] > 0:
            corner = sampler.integers(0, n_patch, size=dim) * xi
            flat = sampler.choice(xi**dim, size=2, replace=False)
            a = corner + np.array(np.unravel_index(flat[0], (xi,) * dim))
            b = corner + np.array(np.unravel_index(flat[1], (xi,) * dim))
        else:
            a = sampler.integers(0, L, size=dim)
            while True:
                b = sampler.integers(0, L, size=dim)
                if np.any(a // xi != b // xi):
                    break
        coords[t] = np.stack([a, b])
    distances = np.array([1.0 if lab > 0 else 0.0 for lab in labels])
    train, test = _split(n, labels, n_train, train_fraction, splitter)
    params = dict(task=2, L=L, xi=xi, n=n, dim=dim, seed=seed)
    return Dataset(coords, labels, distances, params, train, test)


def relabel(ds: Dataset) -> np.ndarray:
    """Recompute labels from the stored coordinates."""
    p = ds.params
    if p["task"] == 1:
        return np.array([task1_label(pixel_distance(a, b), p["xi"]) for a, b in ds.coords])
    return np.array([task2_label(a, b, p["xi"]) for a, b in ds.coords])


def write_jsonl(ds: Dataset, path: str | Path) -> None:
    """One header line with params and split, then one record per example."""
    path = Path(path)
    with path.open("w") as fh:
        header = {"params": ds.params, "train": ds.train.tolist(), "test": ds.test.tolist()}
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for c, y, d in zip(ds.coords, ds.labels, ds.distances):
            rec = {"coords": c.tolist(), "label": int(y), "distance": float(d)}
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def _records(path: Path) -> Iterator[dict]:
    with path.open() as fh:
        for line in fh:
            if line.strip():
                yield json.loads(line)


def read_jsonl(path: str | Path) -> Dataset:
    recs = _records(Path(path))
    header = next(recs)
    coords, labels, dists = [], [], []
    for r in recs:
        coords.append(r["coords"])
        labels.append(r["label"])
        dists.append(r["distance"])
    params = header["params"]
    dim = int(params["dim"])
    return Dataset(
        np.asarray(coords, dtype=int).reshape(-1, 2, dim),
        np.asarray(labels, dtype=int),
        np.asarray(dists, dtype=float),
        params,
        np.asarray(header["train"], dtype=int),
        np.asarray(header["test"], dtype=int),
    )
