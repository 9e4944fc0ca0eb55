"""Pixel-displacement deformations and norm-matched Gaussian noise."""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .errors import GeometryError
from .scaledata import Coord, Input

# Per-pixel noise variance matching E||tau(x) - x||^2 = 2N for two disjoint
# unit moves of pixels of value sqrt(N/2): sigma^2 = 2N / N.
NOISE_VARIANCE = 2.0


@dataclass(frozen=True)
class PerturbationPair:
    original: Input
    perturbed: np.ndarray
    kind: str  # "diffeo" | "noise" | "rectified-noise"
    displacement_norm: float


def _moves(dim: int) -> list[tuple[int, ...]]:
    unit = []
    for axis in range(dim):
        for step in (-1, 1):
            m = [0] * dim
            m[axis] = step
            unit.append(tuple(m))
    return unit


def legal_moves(a: Coord, b: Coord, L: int) -> list[tuple[Coord, Coord]]:
    """All joint unit moves of both pixels that stay in bounds and do not collide."""
    dim = len(a)
    out = []
    for ma, mb in itertools.product(_moves(dim), repeat=2):
        na = tuple(p + q for p, q in zip(a, ma))
        nb = tuple(p + q for p, q in zip(b, mb))
        if na == nb:
            continue
        if all(0 <= c < L for c in na + nb):
            out.append((na, nb))
    return out


def displace(x: Input, rng: np.random.Generator) -> tuple[np.ndarray, tuple[Coord, Coord]]:
    """Move each active pixel by one step in a random direction.

    Rejection-resampling of out-of-bounds or colliding moves is equivalent to
    a uniform draw over the legal joint moves, which is what is done here.
    """
    a, b = x.active
    options = legal_moves(a, b, x.L)
    if not options:
        raise GeometryError(f"no legal displacement for pixels {a}, {b} at L={x.L}")
    na, nb = options[rng.integers(len(options))]
    out = np.zeros_like(x.pixels)
    out[na] = x.pixels[a]
    out[nb] = x.pixels[b]
    return out, (na, nb)


def diffeo(x: Input, seed: int | np.random.Generator) -> PerturbationPair:
    rng = np.random.default_rng(seed)
    out, _ = displace(x, rng)
    return PerturbationPair(x, out, "diffeo", float(np.linalg.norm(out - x.pixels)))


def noise_sigma() -> float:
    return float(np.sqrt(NOISE_VARIANCE))


def sample_noise(shape, rng: np.random.Generator, rectified: bool = True) -> np.ndarray:
    eta = rng.normal(0.0, np.sqrt(NOISE_VARIANCE), size=shape)
    return np.maximum(eta, 0.0) if rectified else eta


def matched_noise(x: Input, rectified: bool = True, seed: int | np.random.Generator = 0) -> PerturbationPair:
    """``x + eta`` (or ``x + max(0, eta)``) with eta i.i.d. N(0, 2) per pixel."""
    rng = np.random.default_rng(seed)
    eta = sample_noise(x.pixels.shape, rng, rectified)
    kind = "rectified-noise" if rectified else "noise"
    return PerturbationPair(x, x.pixels + eta, kind, float(np.linalg.norm(eta)))


def batch_displace(coords: np.ndarray, L: int, rng: np.random.Generator) -> np.ndarray:
    """Vectorised ``displace`` on coordinate arrays of shape ``(n, 2, dim)``."""
    n, _, dim = coords.shape
    moves = np.array(_moves(dim))
    pairs = np.array(list(itertools.product(range(len(moves)), repeat=2)))
    na = coords[:, None, 0, :] + moves[pairs[:, 0]][None]
    nb = coords[:, None, 1, :] + moves[pairs[:, 1]][None]
    ok = np.all((na >= 0) & (na < L) & (nb >= 0) & (nb < L), axis=2) & np.any(na != nb, axis=2)
    counts = ok.sum(axis=1)
    if np.any(counts == 0):
        bad = coords[np.argmax(counts == 0)]
        raise GeometryError(f"no legal displacement for pixels {bad.tolist()} at L={L}")
    # pick the r-th legal option per row
    r = (rng.random(n) * counts).astype(int)
    pick = np.argmax(np.cumsum(ok, axis=1) > r[:, None], axis=1)
    rows = np.arange(n)
    return np.stack([na[rows, pick], nb[rows, pick]], axis=1)
