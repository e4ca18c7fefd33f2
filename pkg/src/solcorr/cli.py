"""Command-line entry point: ``solcorr {relax,correlate,figure,sweep,selftest}``.

Exit codes: 0 success, 1 other failure, 2 relaxation failure, 3 bound-state
instability, 4 divergence, 5 every sweep point failed, 64 configuration error,
65 contract violation (grid mismatch, checkpoint outside the trajectory).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

from . import io
from .config import load_config, validate
from .errors import ContractError, SolcorrError
from .pipeline import FIGURES, check_checkpoints, prepare_state, run_figure, run_pipeline, run_sweep
from .selftest import run_all
from .states import validate_field_grid

OUTPUT_ENV = "SOLCORR_OUTPUT_DIR"
EXIT_ALL_POINTS_FAILED = 5

log = logging.getLogger("solcorr")


def output_dir(cfg_dir: str | None, cli_dir: str | None) -> Path:
    """Precedence: --output, then $SOLCORR_OUTPUT_DIR, then the config value."""
    return Path(cli_dir or os.environ.get(OUTPUT_ENV) or cfg_dir or "out")


def cmd_relax(args) -> int:
    cfg = load_config(args.config)
    if args.mode:
        cfg = validate(replace(cfg, state=replace(cfg.state, mode=args.mode)))
    outdir = output_dir(cfg.output.directory, args.output)
    state, info = prepare_state(cfg)
    info["config"] = cfg.as_dict()
    files = io.save_state(outdir / "state.bin", state, info)
    io.write_metadata(outdir / "metadata.json", {"config": cfg.as_dict(), "state": info}, files)
    seps = info.get("separations")
    print(f"state saved to {outdir / 'state.bin'}"
          + (f"; separations {[round(s, 6) for s in seps]}" if seps else ""))
    return 0


def cmd_correlate(args) -> int:
    cfg = load_config(args.config)
    check_checkpoints(cfg)
    outdir = output_dir(cfg.output.directory, args.output)
    try:
        state, state_info = io.load_state(args.state)
    except FileNotFoundError:
        raise ContractError(f"state file not found: {args.state}") from None
    validate_field_grid(state, cfg.make_grid())
    meta = run_pipeline(cfg, outdir, state=state, state_info=state_info,
                        extra_meta={"state_file": str(args.state)})
    _print_final(meta)
    return 0


def cmd_figure(args) -> int:
    outdir = Path(args.output) if args.output else output_dir(None, None) / args.which
    meta = run_figure(args.which, outdir, separation=args.separation,
                      denominator=args.denominator)
    _print_final(meta)
    print(f"outputs written to {outdir}")
    return 0


def cmd_sweep(args) -> int:
    cfg = load_config(args.config)
    outdir = output_dir(cfg.output.directory, args.output)
    rows, _ = run_sweep(cfg, outdir, workers=args.workers)
    for r in rows:
        status = f"C_12={r['C_12']:.6f}" if r["ok"] else r["error"]
        print(f"point {r['index']}: {status}")
    if not any(r["ok"] for r in rows):
        return EXIT_ALL_POINTS_FAILED
    return 0


def cmd_selftest(args) -> int:
    results = run_all()
    for r in results:
        mark = "PASS" if r["passed"] else "FAIL"
        print(f"{mark} {r['name']}: {r['value']:.3e} (tolerance {r['tolerance']:.0e})")
    return 0 if all(r["passed"] for r in results) else 1


def _print_final(meta: dict) -> None:
    corr = meta["correlation"]
    print(json.dumps({"final": corr["final"], "denominator": corr["denominator"],
                      "plateau_C_12": corr.get("plateau_C_12")}, indent=2))


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="solcorr", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("relax", help="relax a single soliton, pair or train and save it")
    r.add_argument("--config", help="TOML run configuration (defaults if omitted)")
    r.add_argument("--mode", choices=["single", "pair", "train"], help="override state.mode")
    r.add_argument("--output", help="output directory")
    r.set_defaults(func=cmd_relax)

    c = sub.add_parser("correlate", help="propagate a saved state and compute correlations")
    c.add_argument("state", help="state file written by 'relax'")
    c.add_argument("--config", help="TOML run configuration (defaults if omitted)")
    c.add_argument("--output", help="output directory")
    c.set_defaults(func=cmd_correlate)

    f = sub.add_parser("figure", help="run a figure recipe with its built-in defaults")
    f.add_argument("which", choices=FIGURES)
    f.add_argument("--output", help="output directory (default: <out>/<figure>)")
    f.add_argument("--separation", type=float, help="fixed soliton separation instead of relaxing")
    f.add_argument("--denominator", choices=["full", "normal"], help="eta/C denominator")
    f.set_defaults(func=cmd_figure)

    s = sub.add_parser("sweep", help="saturated C_12 over parameter ranges")
    s.add_argument("--config", help="TOML configuration with a [sweep] table")
    s.add_argument("--workers", type=int, help="parallel worker processes")
    s.add_argument("--output", help="output directory")
    s.set_defaults(func=cmd_sweep)

    t = sub.add_parser("selftest", help="adjoint, Jacobian and oracle checks on a small grid")
    t.set_defaults(func=cmd_selftest)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "workers", None) is not None and args.workers < 1:
        print("error: --workers must be at least 1", file=sys.stderr)
        return 64
    try:
        return args.func(args)
    except SolcorrError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
