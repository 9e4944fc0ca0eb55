"""Command line entry point: ``scalepool <command> [options]``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from ..errors import ParameterError
from ..theory import circulant_power, diffusion_params, gaussian_profile, predicted_exponents, walk_diffusion_params, write_profile_csv
from .config import ExperimentConfig, load_config
from .figures import FIGURES, SCALES, reproduce_figure
from .run import StageError, run_experiment

STAGE_OF = {"gen": "generate", "train": "model", "sens": "sensitivities", "spectra": "spectra", "run": "fits"}


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="INI experiment config")
    p.add_argument("--seed", type=int, help="master seed (overrides the config)")
    p.add_argument("--out", type=Path, help="output directory (overrides the config)")
    p.add_argument("--plot", action="store_true", help="also write SVG plots")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="scalepool", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "gen": "generate the dataset",
        "train": "generate and train (or build the analytic network)",
        "sens": "compute layer sensitivities",
        "spectra": "track filter projections on Laplacian modes during training",
        "run": "run every stage and write the summary",
    }
    for name, text in helps.items():
        _common(sub.add_parser(name, help=text))
    th = sub.add_parser("theory", help="write the diffusion profile and its Gaussian limit")
    _common(th)
    th.add_argument("--F", type=int, default=3)
    th.add_argument("--L", type=int, default=1024)
    th.add_argument("--k", type=int, default=64)
    th.add_argument("--i", type=int, default=None, help="input pixel (default L/2)")
    th.add_argument("--coefficients", choices=("walk", "closed-form"), default="walk")
    rp = sub.add_parser("repro", help="regenerate a preset figure bundle")
    _common(rp)
    rp.add_argument("figure", choices=FIGURES)
    rp.add_argument("--scale", choices=SCALES, default="desk")
    return parser


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    if args.out is not None:
        cfg = cfg.with_out(args.out)
    return cfg


def _theory(args) -> int:
    out = args.out or Path("runs/theory")
    out.mkdir(parents=True, exist_ok=True)
    i = args.L // 2 if args.i is None else args.i
    params = walk_diffusion_params(args.F) if args.coefficients == "walk" else diffusion_params(args.F)
    c = circulant_power(args.L, args.F, args.k, i)
    g = gaussian_profile(args.L, args.F, args.k, i, params)
    write_profile_csv(out / "profile.csv", c, g)
    info = {
        "F": args.F,
        "L": args.L,
        "k": args.k,
        "i": i,
        "coefficients": args.coefficients,
        "D": params.D,
        "v": params.v,
        "peak_rel_error": float(abs(g.values[i] - c.values[i]) / c.values[i]) if c.values[i] > 0 else None,
        "exponents": {str(t): predicted_exponents(t).slopes() for t in (1, 2)},
    }
    (out / "theory.json").write_text(json.dumps(info, indent=2, sort_keys=True) + "\n")
    print(json.dumps(info, sort_keys=True))
    return 0


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "theory":
            return _theory(args)
        if args.command == "repro":
            out = args.out or Path("runs") / args.figure
            m = reproduce_figure(args.figure, out, scale=args.scale, seed=args.seed or 0, plot=args.plot)
            print(f"{args.figure}: wrote {len(m.files)} files to {out}")
            return 0
        cfg = _config(args)
        res = run_experiment(cfg, stages=(STAGE_OF[args.command],), plot=args.plot)
        print(f"{args.command}: wrote {len(res.manifest.files)} files to {cfg.out}")
        if res.summary:
            print(json.dumps(res.summary.get("exponents", {}), sort_keys=True))
        return 0
    except StageError as exc:
        print(f"error in stage {exc.stage}: {exc.cause}", file=sys.stderr)
        return 2
    except (ParameterError, OSError) as exc:
        print(f"error in stage config: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":  # pragma: no cover
    raise SystemExit(main())
