"""Optional SVG plots; matplotlib is imported only when a plot is requested."""

from __future__ import annotations

from pathlib import Path

import numpy as np


def _pyplot():
    try:
        import matplotlib
    except ImportError as exc:  # pragma: no cover - depends on the environment
        raise RuntimeError("plotting needs matplotlib (pip install 'artifact[plot]')") from exc
    matplotlib.use("Agg")
    matplotlib.rcParams["svg.hashsalt"] = "scalepool"
    import matplotlib.pyplot as plt

    return plt


def _save(fig, path: Path) -> None:
    fig.savefig(path, format="svg", metadata={"Date": None})


def plot_sensitivities(report, exponents: dict, path: str | Path) -> None:
    """D_k, G_k, R_k against A_k on log-log axes, with the predicted slopes as dashed lines."""
    plt = _pyplot()
    fig, axes = plt.subplots(1, 3, figsize=(11, 3.4))
    window = exponents.get("window", [])
    for ax, key in zip(axes, ("D", "G", "R")):
        A, y = report.A, getattr(report, key)
        ok = (A > 0) & np.isfinite(y) & (y > 0)
        ax.loglog(A[ok], y[ok], "o-", ms=3)
        if len(window) >= 3:
            w = np.asarray(window)
            slope = exponents["predicted"][key]
            logc = np.mean(np.log(y[w]) - slope * np.log(A[w]))
            ax.loglog(A[w], np.exp(logc) * A[w] ** slope, "k--", label=f"slope {slope:+g}")
            ax.legend()
        ax.set_xlabel("A_k")
        ax.set_ylabel(f"{key}_k")
    fig.tight_layout()
    _save(fig, Path(path))
    plt.close(fig)


def plot_scatter(errors, values: dict, path: str | Path) -> None:
    """Test error against each output sensitivity across an ensemble."""
    plt = _pyplot()
    fig, axes = plt.subplots(1, len(values), figsize=(3.6 * len(values), 3.4))
    for ax, (key, v) in zip(np.atleast_1d(axes), values.items()):
        ax.loglog(v, errors, "o")
        ax.set_xlabel(f"{key}_f")
        ax.set_ylabel("test error")
    fig.tight_layout()
    _save(fig, Path(path))
    plt.close(fig)
