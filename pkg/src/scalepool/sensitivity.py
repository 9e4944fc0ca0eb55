"""Monte Carlo sensitivities of layer representations to deformations and noise.

For a representation ``f`` (a layer ``f_k`` of a network, or its scalar
output) the three measures are

    D = E_{x,tau} ||f(tau x) - f(x)||^2 / E_{x1,x2} ||f(x1) - f(x2)||^2
    G = E_{x,eta} ||f(x + eta) - f(x)||^2 / E_{x1,x2} ||f(x1) - f(x2)||^2
    R = D / G

with ``tau`` a random one-pixel displacement of each active pixel and
``eta`` Gaussian noise of matching magnitude (rectified by default).
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .convnet import Network, iter_reps, readout
from .errors import DegenerateError, ParameterError
from .perturb import batch_displace, sample_noise
from .scaledata import Dataset, active_value

log = logging.getLogger(__name__)


@dataclass
class SensitivityReport:
    D: np.ndarray
    D_se: np.ndarray
    G: np.ndarray
    G_se: np.ndarray
    R: np.ndarray
    R_se: np.ndarray
    A: np.ndarray
    degenerate: np.ndarray
    output: dict | None = None
    meta: dict = field(default_factory=dict)

    @property
    def layers(self) -> np.ndarray:
        return np.arange(len(self.D))

    def to_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["layer", "A_k", "D_k", "D_k_se", "G_k", "G_k_se", "R_k"])
            for k in self.layers:
                row = [self.A[k], self.D[k], self.D_se[k], self.G[k], self.G_se[k], self.R[k]]
                w.writerow([int(k)] + [_fmt(v) for v in row])


def _fmt(v: float) -> str:
    return repr(float(v))


@dataclass(frozen=True)
class SlopeFit:
    slope: float
    intercept: float
    r2: float
    window: tuple[int, ...]


def _coords_to_pixels(coords: np.ndarray, L: int, dim: int, dtype=float) -> np.ndarray:
    n = len(coords)
    out = np.zeros((n, 1) + (L,) * dim, dtype=dtype)
    rows = np.arange(n)
    v = active_value(L, dim)
    for p in range(2):
        c = coords[:, p]
        out[(rows, 0) + tuple(c[:, j] for j in range(dim))] = v
    return out


def _means_and_se(num: np.ndarray, den: np.ndarray) -> tuple[float, float, float, float]:
    n_mean, d_mean = num.mean(), den.mean()
    n_se = num.std(ddof=1) / np.sqrt(len(num)) if len(num) > 1 else 0.0
    d_se = den.std(ddof=1) / np.sqrt(len(den)) if len(den) > 1 else 0.0
    return n_mean, n_se, d_mean, d_se


def _layer_sq_diff(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    d = (a - b).reshape(a.shape[0], -1)
    return np.einsum("ij,ij->i", d, d)


def sensitivity_report(
    net: Network,
    testset: Dataset,
    n_inputs: int = 256,
    n_perturbs: int = 16,
    seed: int = 0,
    n_pairs: int = 4096,
    rectified: bool = True,
    chunk_rows: int = 4096,
    A: np.ndarray | None = None,
) -> SensitivityReport:
    """Estimate D_k, G_k, R_k for every representation f_0..f_K (and the output).

    Inputs are drawn uniformly from the test split; each gets ``n_perturbs``
    fresh displacements and noise draws. Denominators use ``n_pairs`` pairs of
    distinct test inputs. Layers whose denominator vanishes are flagged
    degenerate and reported as NaN.
    """
    if n_inputs < 1 or n_perturbs < 1 or n_pairs < 1:
        raise ParameterError("sample counts must be >= 1")
    test = np.asarray(testset.test)
    if len(test) < 2:
        raise ParameterError("need at least two test inputs")
    L, dim = testset.L, testset.dim
    if L != net.L or dim != net.dim:
        raise ParameterError("dataset geometry does not match the network")
    s_inputs, s_pert, s_pairs = np.random.SeedSequence(seed).spawn(3)
    rng_in = np.random.default_rng(s_inputs)
    rng_pairs = np.random.default_rng(s_pairs)
    pick = rng_in.choice(len(test), size=n_inputs, replace=n_inputs > len(test))
    coords = testset.coords[test[pick]]
    n_rep = net.depth + 1
    has_out = net.readout_w is not None
    n_slots = n_rep + (1 if has_out else 0)

    # numerators: per input, averaged over its perturbations
    num_d = np.zeros((n_slots, n_inputs))
    num_g = np.zeros((n_slots, n_inputs))
    per_chunk = max(1, chunk_rows // (1 + 2 * n_perturbs))
    pert_streams = s_pert.spawn(n_inputs)
    for s in range(0, n_inputs, per_chunk):
        sl = slice(s, min(n_inputs, s + per_chunk))
        c = coords[sl]
        m = len(c)
        clean = _coords_to_pixels(c, L, dim)
        moved, noisy = [], []
        # one independent stream per input keeps results independent of chunking
        rngs = [np.random.default_rng(pert_streams[s + j]) for j in range(m)]
        for j in range(m):
            cj = np.repeat(c[j : j + 1], n_perturbs, axis=0)
            moved.append(_coords_to_pixels(batch_displace(cj, L, rngs[j]), L, dim))
            eta = sample_noise((n_perturbs, 1) + (L,) * dim, rngs[j], rectified)
            noisy.append(clean[j : j + 1] + eta)
        batch = np.concatenate([clean] + moved + noisy)
        for k, rep in enumerate(_reps_with_output(net, batch, has_out)):
            base = rep[:m]
            tau = rep[m : m + m * n_perturbs].reshape((m, n_perturbs) + rep.shape[1:])
            eta = rep[m + m * n_perturbs :].reshape((m, n_perturbs) + rep.shape[1:])
            sq_d = ((tau - base[:, None]) ** 2).reshape(m, n_perturbs, -1).sum(axis=2)
            sq_g = ((eta - base[:, None]) ** 2).reshape(m, n_perturbs, -1).sum(axis=2)
            num_d[k, sl] = sq_d.mean(axis=1)
            num_g[k, sl] = sq_g.mean(axis=1)

    # denominators over random pairs of distinct test inputs
    i1 = rng_pairs.integers(0, len(test), size=n_pairs)
    i2 = (i1 + rng_pairs.integers(1, len(test), size=n_pairs)) % len(test)
    den = np.zeros((n_slots, n_pairs))
    per_chunk = max(1, chunk_rows // 2)
    for s in range(0, n_pairs, per_chunk):
        sl = slice(s, min(n_pairs, s + per_chunk))
        a = _coords_to_pixels(testset.coords[test[i1[sl]]], L, dim)
        b = _coords_to_pixels(testset.coords[test[i2[sl]]], L, dim)
        m = len(a)
        for k, rep in enumerate(_reps_with_output(net, np.concatenate([a, b]), has_out)):
            den[k, sl] = _layer_sq_diff(rep[:m], rep[m:])

    out = {name: np.full(n_slots, np.nan) for name in ("D", "D_se", "G", "G_se", "R", "R_se")}
    degenerate = np.zeros(n_slots, dtype=bool)
    for k in range(n_slots):
        nd, nd_se, dd, dd_se = _means_and_se(num_d[k], den[k])
        ng, ng_se, _, _ = _means_and_se(num_g[k], den[k])
        scale = max(np.abs(num_d[k]).max(), np.abs(den[k]).max(), 1e-300)
        if dd <= 1e-13 * scale or dd == 0:
            degenerate[k] = True
            continue
        D, G = nd / dd, ng / dd
        out["D"][k] = D
        out["G"][k] = G
        out["D_se"][k] = D * np.hypot(nd_se / nd if nd else 0.0, dd_se / dd)
        out["G_se"][k] = G * np.hypot(ng_se / ng if ng else 0.0, dd_se / dd)
        if G > 0:
            R = D / G
            out["R"][k] = R
            if n_inputs > 1 and nd > 0:
                cov = np.cov(num_d[k], num_g[k])
                rel = cov[0, 0] / nd**2 + cov[1, 1] / ng**2 - 2 * cov[0, 1] / (nd * ng)
                out["R_se"][k] = R * np.sqrt(max(rel, 0.0) / n_inputs)
    if degenerate.any():
        log.warning("degenerate (constant) representations at %s", np.flatnonzero(degenerate).tolist())

    if A is None:
        try:
            A = effective_receptive_field(net)
        except DegenerateError:
            A = np.full(n_rep, np.nan)
    layer_part = {key: val[:n_rep] for key, val in out.items()}
    output = None
    if has_out:
        output = {key: float(val[-1]) for key, val in out.items()}
        output["degenerate"] = bool(degenerate[-1])
    meta = dict(n_inputs=n_inputs, n_perturbs=n_perturbs, n_pairs=n_pairs, seed=seed, rectified=rectified)
    return SensitivityReport(A=np.asarray(A, dtype=float), degenerate=degenerate[:n_rep], output=output, meta=meta, **layer_part)


def _reps_with_output(net: Network, batch: np.ndarray, has_out: bool):
    rep = None
    for rep in iter_reps(net, batch):
        yield rep
    if has_out:
        yield readout(net, rep)[:, None]


def _profile_width(profile: np.ndarray) -> float:
    """Standard deviation of a nonnegative profile, unwrapped around its peak."""
    total = profile.sum()
    if not total > 0:
        return float("nan")
    dim = profile.ndim
    peak = np.unravel_index(int(np.argmax(profile)), profile.shape)
    shifted = np.roll(profile, [s // 2 - p for s, p in zip(profile.shape, peak)], axis=tuple(range(dim)))
    w = shifted / total
    var = 0.0
    for ax in range(dim):
        marg = w.sum(axis=tuple(a for a in range(dim) if a != ax))
        pos = np.arange(len(marg))
        mu = marg @ pos
        var += marg @ (pos - mu) ** 2
    return float(np.sqrt(var / dim))


def effective_receptive_field(
    net: Network,
    probes: Sequence[int | Sequence[int]] | None = None,
    amplitude: float = 1.0,
) -> np.ndarray:
    """Width A_k of the response of each layer to a single active pixel.

    For networks whose every layer has stride ``F > 1``, ``A_k`` is the block
    size ``F^k``. Otherwise ``A_k`` is the standard deviation of the
    channel-averaged profile ``|f_k(a delta_i) - f_k(0)|``, averaged over the
    probes (default: the central pixel).
    """
    strides = [l.stride for l in net.layers]
    if all(s > 1 for s in strides):
        return np.concatenate([[1.0], np.cumprod(strides).astype(float)])
    L, dim = net.L, net.dim
    if probes is None:
        probes = [(L // 2,) * dim]
    xs = np.zeros((len(probes) + 1, 1) + (L,) * dim)
    for j, p in enumerate(probes):
        coord = (int(p),) if np.isscalar(p) else tuple(int(c) for c in p)
        if len(coord) != dim or not all(0 <= c < L for c in coord):
            raise ParameterError(f"probe {coord} out of bounds")
        xs[(j, 0) + coord] = amplitude
    widths = []
    for k, rep in enumerate(iter_reps(net, xs)):
        prof = np.abs(rep[:-1] - rep[-1:]).mean(axis=1)
        w = np.array([_profile_width(p) for p in prof])
        if np.isnan(w).any():
            raise DegenerateError(f"layer {k} has an all-zero single-pixel response")
        widths.append(w.mean())
    return np.array(widths)


def loglog_slope(xs, ys, window: Sequence[int] | np.ndarray | None = None) -> SlopeFit:
    """Least-squares line through ``(log x, log y)`` over the index window."""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    idx = np.arange(len(xs)) if window is None else np.asarray(window, dtype=int)
    if len(idx) < 3:
        raise ParameterError("a slope fit needs at least 3 points")
    x, y = xs[idx], ys[idx]
    if np.any(~(x > 0)) or np.any(~(y > 0)):
        raise ParameterError("log-log fit needs strictly positive values")
    lx, ly = np.log(x), np.log(y)
    slope, intercept = np.polyfit(lx, ly, 1)
    resid = ly - (slope * lx + intercept)
    ss_tot = float(((ly - ly.mean()) ** 2).sum())
    r2 = 1.0 - float((resid**2).sum()) / ss_tot if ss_tot > 0 else 1.0
    return SlopeFit(float(slope), float(intercept), r2, tuple(int(i) for i in idx))


def asymptotic_window(A: np.ndarray, F: int, *values: np.ndarray, k_min: int = 1) -> np.ndarray:
    """Layers with ``A_k >= 2F`` and finite positive values everywhere."""
    A = np.asarray(A, dtype=float)
    ok = (A >= 2 * F) & (np.arange(len(A)) >= k_min)
    for v in values:
        v = np.asarray(v, dtype=float)
        ok &= np.isfinite(v) & (v > 0)
    return np.flatnonzero(ok)


def log_correlation(errors, values) -> float:
    """Pearson correlation between ``log(errors)`` and ``log(values)``."""
    e = np.asarray(errors, dtype=float)
    v = np.asarray(values, dtype=float)
    if e.shape != v.shape or len(e) < 3:
        raise ParameterError("need two equal-length sequences of at least 3 values")
    if np.any(~(e > 0)) or np.any(~(v > 0)):
        raise ParameterError("log correlation needs strictly positive values")
    le, lv = np.log(e), np.log(v)
    if np.ptp(le) == 0 or np.ptp(lv) == 0:
        raise DegenerateError("zero variance: correlation undefined")
    return float(np.corrcoef(le, lv)[0, 1])
