"""Command-line entry point ``aaee``.

Exit codes: 0 success, 1 a check failed, 2 configuration error,
3 solver failure, 4 IO error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import __version__

EXIT_OK, EXIT_CHECK_FAILED, EXIT_CONFIG, EXIT_SOLVER, EXIT_IO = 0, 1, 2, 3, 4


def _classify(exc: BaseException) -> int:
    from .config import ConfigError
    from .io import SnapshotError
    from .operators import SolverError, SPDError

    if isinstance(exc, ConfigError):
        return EXIT_CONFIG
    if isinstance(exc, (OSError, SnapshotError)):
        return EXIT_IO
    if isinstance(exc, (SolverError, SPDError, FloatingPointError, ArithmeticError)):
        return EXIT_SOLVER
    return EXIT_SOLVER


def cmd_run(args) -> int:
    from .config import load_config
    from .timestepping import SimulationError, run_simulation

    cfg = load_config(args.config)
    out = args.out or cfg.output_dir
    try:
        result = run_simulation(cfg, out_dir=out)
    except SimulationError as err:
        print(f"error: {err}", file=sys.stderr)
        return _classify(err.cause)
    last = result.records[-1]
    print(f"completed {result.steps} steps to t={result.state.t:.6g}; "
          f"energy={last.energy:.12g}; output in {out}")
    return EXIT_OK


def cmd_check(args) -> int:
    from .config import initial_state, load_config
    from .variational_oracle import OracleReport, reduction_checks, run_check_suite

    cfg = load_config(args.config)
    n = min(cfg.nx, cfg.ny, 64)
    alpha = cfg.alpha if cfg.alpha > 0 else 0.3
    reports = run_check_suite(n=n - n % 2, alpha=alpha, seed=cfg.ic_seed)
    state = initial_state(cfg)
    reports.append(reduction_checks(state.u, alpha))
    rep = reports[-1]
    rep.name = "reductions on configured initial velocity"
    for r in reports:
        print(r.line())
    ok = all(r.passed for r in reports)
    payload = {"pass": ok, "checks": [r.to_dict() for r in reports]}
    if args.json:
        Path(args.json).write_text(json.dumps(payload, indent=2) + "\n")
    else:
        print(json.dumps(payload))
    return EXIT_OK if ok else EXIT_CHECK_FAILED


def cmd_img(args) -> int:
    from .diagnostics import vorticity
    from .io import emit_field_image, read_snapshot

    state = read_snapshot(args.snapshot)
    field = vorticity(state.u) if args.field == "vorticity" else state.F.det().data
    emit_field_image(field, args.out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="aaee",
                                description="Anisotropic averaged Euler simulator on the periodic torus.")
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run a simulation")
    r.add_argument("--config", required=True)
    r.add_argument("--out", help="output directory (overrides output_dir)")
    r.set_defaults(func=cmd_run)
    c = sub.add_parser("check", help="run the variational and invariant checks")
    c.add_argument("--config", required=True)
    c.add_argument("--json", help="write the machine-readable report here instead of stdout")
    c.set_defaults(func=cmd_check)
    i = sub.add_parser("img", help="render a snapshot field as PGM")
    i.add_argument("--snapshot", required=True)
    i.add_argument("--field", choices=("vorticity", "detF"), required=True)
    i.add_argument("--out", required=True)
    i.set_defaults(func=cmd_img)
    v = sub.add_parser("version", help="print the version")
    v.set_defaults(func=lambda a: print(__version__) or EXIT_OK)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # noqa: BLE001 - mapped to an exit code
        print(f"error: {exc}", file=sys.stderr)
        return _classify(exc)


if __name__ == "__main__":
    sys.exit(main())
