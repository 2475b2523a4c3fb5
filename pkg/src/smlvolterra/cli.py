"""Command-line entry point: ``smlvolterra <experiment> [--config FILE] ...``."""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import experiments as ex

SUBCOMMANDS = {
    "identify": ("identification", ex.run_identification),
    "stability": ("stability-table", ex.run_stability_table),
    "sdcompare": ("sd-comparison", ex.run_sd_comparison),
    "rhosweep": ("rho-sweep", ex.run_rho_sweep),
    "chaos": ("chaos-sweep", ex.run_chaos_sweep),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="smlvolterra",
        description="Adaptive identification experiments with separable Volterra filters.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (kind, _) in SUBCOMMANDS.items():
        p = sub.add_parser(name, help=f"run the {kind} experiment")
        p.add_argument("--config", type=Path, help="key = value scenario file")
        p.add_argument("--out", type=Path, help="output directory (default: config 'out')")
        p.add_argument("--seed", type=int, help="master seed (overrides the config)")
        p.add_argument("--threads", type=int, help="worker threads (results do not depend on it)")
    return parser


def _summary(command: str, result) -> str:
    if command == "identify":
        curves, info = result
        lines = [f"{name}: used={c.used} diverged={c.diverged} "
                 f"final_mse_db={float(ex.to_db(c.mean_mse[-1])):.3f}" for name, c in curves.items()]
        lines += [f"warning: {w}" for w in info["warnings"]]
        return "\n".join(lines)
    if command == "stability":
        table, mu0 = result
        lines = [f"mu0 = {mu0!r}"] if mu0 is not None else []
        lines += [f"{name} x{mult:g}: {div}/{total} diverged" for (name, mult), (div, total) in table.items()]
        return "\n".join(lines)
    if command == "sdcompare":
        sd, curve, mu = result
        gap = abs(ex.to_db(sd) - ex.to_db(curve.mean_mse))
        return f"mu = {mu!r}; max gap = {float(gap.max()):.3f} dB"
    if command == "rhosweep":
        return "\n".join(f"rho={r['rho']:g}: steady MSE {r['steady_mse']:.4e} "
                         f"(svd residual {r['svd_residual']:.4e})" for r in result)
    mus, _, regimes = result
    return "\n".join(f"mu={m:g}: {r}" for m, r in zip(mus, regimes))


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    kind, runner = SUBCOMMANDS[args.command]
    overrides = {"seed": args.seed, "threads": args.threads, "experiment": kind}
    try:
        if args.config is not None:
            cfg = ex.load_config(args.config, **overrides)
        else:
            cfg = ex.ScenarioConfig(**{k: v for k, v in overrides.items() if v is not None})
    except (OSError, ValueError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    out = args.out if args.out is not None else Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        result = runner(cfg, out)
    except ValueError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    print(_summary(args.command, result))
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
