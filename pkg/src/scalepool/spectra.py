"""Projection of convolution filters on the Laplacian eigenmodes of the filter grid."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .convnet import Network
from .errors import ParameterError

GROUP_TOL = 1e-9


@dataclass(frozen=True)
class LaplacianModes:
    eigenvalues: np.ndarray  # ascending, one per mode
    vectors: np.ndarray  # (n_modes, F**dim), unit rows
    groups: tuple[np.ndarray, ...]  # mode indices of each eigenspace
    F: int
    dim: int

    @property
    def group_eigenvalues(self) -> np.ndarray:
        return np.array([self.eigenvalues[g[0]] for g in self.groups])


def path_laplacian(F: int) -> np.ndarray:
    A = np.zeros((F, F))
    i = np.arange(F - 1)
    A[i, i + 1] = A[i + 1, i] = 1.0
    return np.diag(A.sum(axis=1)) - A


def grid_laplacian_modes(F: int, dim: int = 1) -> LaplacianModes:
    """Eigenpairs of the free-boundary graph Laplacian of the F-path or F x F grid."""
    if F < 2 or dim not in (1, 2):
        raise ParameterError(f"need F >= 2 and dim in (1, 2), got F={F}, dim={dim}")
    lap = path_laplacian(F)
    if dim == 2:
        eye = np.eye(F)
        lap = np.kron(lap, eye) + np.kron(eye, lap)
    vals, vecs = np.linalg.eigh(lap)
    vals = np.where(np.abs(vals) < GROUP_TOL, 0.0, vals)
    vecs = vecs.T.copy()
    for v in vecs:
        j = int(np.argmax(np.abs(v) > 1e-12))
        if v[j] < 0:
            v *= -1
    groups = []
    start = 0
    for j in range(1, len(vals) + 1):
        if j == len(vals) or vals[j] - vals[start] > GROUP_TOL:
            groups.append(np.arange(start, j))
            start = j
    return LaplacianModes(vals, vecs, tuple(groups), F, dim)


def filter_gamma(weight: np.ndarray, modes: LaplacianModes) -> np.ndarray:
    """Channel-averaged squared projection on each eigenspace (summed within it)."""
    taps = weight.shape[2:]
    if taps != (modes.F,) * modes.dim:
        raise ParameterError(f"filter taps {taps} do not match modes for F={modes.F}, dim={modes.dim}")
    w = weight.reshape(-1, modes.F**modes.dim)
    per_mode = np.mean((w @ modes.vectors.T) ** 2, axis=0)
    return np.array([per_mode[g].sum() for g in modes.groups])


def filter_spectrum(net: Network, layer: int, modes: LaplacianModes) -> np.ndarray:
    """Gamma per eigenspace for the filters producing ``f_layer`` (1-based)."""
    if not 1 <= layer <= net.depth:
        raise ParameterError(f"layer must be in 1..{net.depth}, got {layer}")
    return filter_gamma(net.layers[layer - 1].weight, modes)


@dataclass
class SpectrumTrace:
    """``gamma[k][t]`` per eigenspace for layers k = 1..K and snapshot times t."""

    times: list[int]
    gamma: dict[int, dict[int, np.ndarray]]
    modes: LaplacianModes
    excluded: dict[int, np.ndarray] = field(default_factory=dict)

    def ratio(self, k: int, t: int) -> np.ndarray:
        g0 = self.gamma[k][self.times[0]]
        r = np.full_like(g0, np.nan)
        ok = ~self.excluded[k]
        r[ok] = self.gamma[k][t][ok] / g0[ok]
        return r

    def final_ratios(self, k: int) -> np.ndarray:
        return self.ratio(k, self.times[-1])

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["layer", "eigenvalue", "eigenspace", "t", "gamma", "ratio"])
            ev = self.modes.group_eigenvalues
            for k in sorted(self.gamma):
                for t in self.times:
                    r = self.ratio(k, t)
                    for l, (g, q) in enumerate(zip(self.gamma[k][t], r)):
                        w.writerow([k, repr(float(ev[l])), l, t, repr(float(g)), repr(float(q))])


def spectrum_evolution(snapshots: dict[int, list[np.ndarray]], modes: LaplacianModes) -> SpectrumTrace:
    """Track gamma over training; eigenspaces with zero initial projection are excluded."""
    times = sorted(snapshots)
    if not times or times[0] != 0:
        raise ParameterError("snapshots must include t = 0")
    n_layers = len(snapshots[0])
    gamma = {k: {t: filter_gamma(snapshots[t][k - 1], modes) for t in times} for k in range(1, n_layers + 1)}
    excluded = {}
    for k in gamma:
        g0 = gamma[k][0]
        excluded[k] = g0 <= 1e-12 * max(g0.sum(), 1e-300)
    return SpectrumTrace(times, gamma, modes, excluded)
