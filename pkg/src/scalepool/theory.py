"""Diffusion picture of homogeneous stride-1 layers and the predicted scaling exponents.

A stride-1 layer with every tap equal to ``1/F`` is the circulant stochastic
matrix of a random walk; ``k`` layers applied to a unit impulse give the
walk's distribution after ``k`` steps. For large ``k`` this approaches a
(drifting, for even ``F``) Gaussian.

Two sets of Gaussian coefficients are provided:

* ``diffusion_params`` -- the closed forms obtained by integrating a flat
  jump density ``1/F`` over a continuous interval,
  ``D = (F-1)^3 / (12F)`` (odd) or ``(F^3 - 3F^2 + 6F - 4) / (12F)`` (even),
  ``v = (1-F)/(2F)`` (even);
* ``walk_diffusion_params`` -- the exact first two moments of the discrete
  jump distribution, ``D = (F^2 - 1)/24`` and ``v = (F-1)/2 - left``, which
  are what the iterated profile actually converges to.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ParameterError


@dataclass(frozen=True)
class DiffusionParams:
    F: int
    parity: str
    D: float
    v: float


@dataclass(frozen=True)
class Profile:
    values: np.ndarray
    k: int
    i: int

    @property
    def L(self) -> int:
        return len(self.values)


@dataclass(frozen=True)
class ExponentTable:
    task: int
    stride: str
    alpha_D: float
    alpha_G: float
    alpha_R: float

    def slopes(self) -> dict[str, float]:
        """Expected log-log slopes of D, G, R against A_k."""
        return {"D": -self.alpha_D, "G": self.alpha_G, "R": -self.alpha_R}


def _left(F: int) -> int:
    return (F - 1) // 2 if F % 2 else F // 2


def diffusion_params(F: int) -> DiffusionParams:
    """Continuous-interval closed forms for the diffusion and drift coefficients."""
    if F < 2:
        raise ParameterError(f"F must be >= 2, got {F}")
    if F % 2:
        return DiffusionParams(F, "odd", (F - 1) ** 3 / (12 * F), 0.0)
    D = (F**3 - 3 * F**2 + 6 * F - 4) / (12 * F)
    return DiffusionParams(F, "even", D, (1 - F) / (2 * F))


def walk_diffusion_params(F: int) -> DiffusionParams:
    """Exact moments of one homogeneous layer viewed as a random-walk step.

    Mass at ``a + t`` flows to ``a`` for ``t in [-left, F-1-left]``, so a
    step displaces the walker by ``-t``: mean ``left - (F-1)/2``, variance
    ``(F^2 - 1)/12``. In the convention ``exp(-(v k + a - i)^2 / (4 D k))``
    this gives ``D = var / 2`` and ``v = -mean``.
    """
    if F < 2:
        raise ParameterError(f"F must be >= 2, got {F}")
    mean = _left(F) - (F - 1) / 2
    return DiffusionParams(F, "odd" if F % 2 else "even", (F**2 - 1) / 24, -mean)


def circulant_power(L: int, F: int, k: int, i: int) -> Profile:
    """Iterate the master equation ``k`` times from a unit impulse at ``i``."""
    if not L > F >= 2 or k < 0:
        raise ParameterError(f"need L > F >= 2 and k >= 0, got L={L}, F={F}, k={k}")
    if not 0 <= i < L:
        raise ParameterError(f"origin {i} out of range for L={L}")
    p = np.zeros(L)
    p[i] = 1.0
    offsets = range(-_left(F), F - _left(F))
    for _ in range(k):
        p = sum(np.roll(p, -t) for t in offsets) / F
    return Profile(p, k, i)


def circulant_matrix(L: int, F: int) -> np.ndarray:
    """Dense ``L x L`` transition matrix with the same anchoring (small ``L``)."""
    M = np.zeros((L, L))
    for a in range(L):
        for t in range(-_left(F), F - _left(F)):
            M[a, (a + t) % L] += 1.0 / F
    return M


def gaussian_profile(
    L: int, F: int, k: int, i: int, params: DiffusionParams | None = None
) -> Profile:
    """Large-depth Gaussian approximation, wrapped on the periodic lattice.

    ``params`` defaults to the closed forms of ``diffusion_params``. The
    periodic sum is truncated to the three nearest images.
    """
    if k < 1:
        raise ParameterError("the Gaussian limit needs k >= 1")
    p = diffusion_params(F) if params is None else params
    a = np.arange(L)
    var_term = 4 * p.D * k
    vals = np.zeros(L)
    for m in (-1, 0, 1):
        u = p.v * k + a - i + m * L
        vals += np.exp(-(u**2) / var_term)
    return Profile(vals / (2 * np.sqrt(np.pi * p.D * k)), k, i)


def profile_moments(p: Profile) -> tuple[float, float]:
    """Circular-aware mean position (mod L) and centred second moment."""
    L = p.L
    shift = L // 2 - int(np.argmax(p.values))
    vals = np.roll(p.values, shift)
    w = vals / vals.sum()
    a = np.arange(L)
    mean = float(w @ a)
    var = float(w @ (a - mean) ** 2)
    return (mean - shift) % L, var


def predicted_exponents(task: int) -> ExponentTable:
    """``D ~ A^-aD``, ``G ~ A^aG``, ``R ~ A^-aR`` for the homogeneous solution."""
    if task == 1:
        return ExponentTable(1, "1", 2.0, 1.0, 3.0)
    if task == 2:
        return ExponentTable(2, "F", 1.0, 1.0, 2.0)
    raise ParameterError(f"unknown task {task}")


def write_profile_csv(path: str | Path, exact: Profile, prediction: Profile) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["position", "value", "prediction"])
        for a, (x, y) in enumerate(zip(exact.values, prediction.values)):
            w.writerow([a, repr(float(x)), repr(float(y))])
