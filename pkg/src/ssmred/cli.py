"""Command-line entry point.

Commands: ``pipeline``, ``oracle-compare``, ``orderscan``, ``simulate`` and
``frc``. Each reads one JSON config; exit codes are 1 for I/O, 2 for chart
fitting, 3 for normal-form (and oracle) failures and 4 for analytics.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import serialize
from .forced import backbone
from .normalform import to_polar
from .pipeline import (StageError, load_config, run_analytics, run_oracle_compare,
                       run_orderscan, run_pipeline, run_simulate, write_backbone_csv,
                       write_frc_csv, write_orderscan_csv)

log = logging.getLogger("ssmred")


def _out_dir(args, cfg) -> Path:
    return Path(args.out or cfg["outputs"]["directory"])


def cmd_pipeline(args, cfg) -> int:
    out = _out_dir(args, cfg)
    result = run_pipeline(cfg, out)
    log.info("test NMTE %s", result.metrics.get("nmte_test"))
    print(f"wrote chart.json, model.json, metrics.json to {out}")
    return 0


def cmd_oracle_compare(args, cfg) -> int:
    out = _out_dir(args, cfg)
    report = run_oracle_compare(cfg)
    out.mkdir(parents=True, exist_ok=True)
    serialize.write_json(report, out / "comparison.json")
    for row in report["coefficients"]:
        print(f"{row['coefficient']:>8}: oracle {row['oracle']:+.6g}  data {row['data']:+.6g}"
              f"  {row['error_kind']} error {row['error']:.3g}  {'pass' if row['pass'] else 'FAIL'}")
    print("PASS" if report["pass"] else "FAIL")
    return 0


def cmd_orderscan(args, cfg) -> int:
    out = _out_dir(args, cfg)
    rows = run_orderscan(cfg)
    out.mkdir(parents=True, exist_ok=True)
    write_orderscan_csv(rows, out / "orderscan.csv")
    for N, tr, te in rows:
        print(f"N={N}: train {tr:.6g}  test {te:.6g}")
    return 0


def cmd_simulate(args, cfg) -> int:
    out = _out_dir(args, cfg)
    names = run_simulate(cfg, out)
    print(f"wrote {len(names)} trajectories to {out}")
    return 0


def cmd_frc(args, cfg) -> int:
    out = _out_dir(args, cfg)
    path = cfg.get("model")
    if not path:
        raise StageError("io", "frc needs a 'model' entry pointing to model.json")
    path = Path(path)
    if not path.is_absolute():
        path = Path(cfg["_base_dir"]) / path
    try:
        model = serialize.model_from_dict(serialize.read_json(path))
    except (OSError, KeyError, ValueError) as exc:
        raise StageError("io", f"cannot load model {path}: {exc}") from exc
    try:
        polar = to_polar(model)
    except ValueError as exc:
        raise StageError("analytics", str(exc)) from exc
    spec = cfg.get("forcing")
    if not spec:
        raise StageError("analytics", "frc needs a 'forcing' block")
    curves, bb = run_analytics(polar, spec, float(model.metadata.get("max_amplitude", 1.0)))
    out.mkdir(parents=True, exist_ok=True)
    write_frc_csv(curves, out / "frc.csv")
    write_backbone_csv(bb, out / "backbone.csv")
    print(f"wrote frc.csv and backbone.csv to {out}")
    return 0


COMMANDS = {
    "pipeline": cmd_pipeline,
    "oracle-compare": cmd_oracle_compare,
    "orderscan": cmd_orderscan,
    "simulate": cmd_simulate,
    "frc": cmd_frc,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ssmred", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", required=True, help="path to the JSON config")
    parser.add_argument("--out", help="output directory (overrides outputs.directory)")
    parser.add_argument("--seed", type=int, help="random seed (overrides config seed)")
    parser.add_argument("--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg["seed"] = args.seed
        return COMMANDS[args.command](args, cfg)
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
