"""Command line entry point: ``linfdse {synthesize,run,bench,bounds}``.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .harness import (ConfigError, ScenarioConfig, _jsonable, case_preset, design_for,
                      nominal_model, run_case)
from .synthesis import RelaxationBounds, SynthesisError, SynthesisInput, relax_lower

log = logging.getLogger("linfdse")

EXIT_OK, EXIT_FAILURE, EXIT_USAGE = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _load_config(args) -> ScenarioConfig:
    if args.config and args.case:
        raise ConfigError("give either --config or --case, not both")
    if args.case:
        cfg = case_preset(args.case)
    elif args.config:
        cfg = ScenarioConfig.from_json(args.config)
    else:
        raise ConfigError("a scenario is required: --config PATH or --case NAME")
    over = {}
    if args.seed is not None:
        over["seed"] = args.seed
    if getattr(args, "estimators", None):
        over["estimators"] = [e.strip() for e in args.estimators.split(",") if e.strip()]
    if over:
        cfg = ScenarioConfig.from_dict({**cfg.to_dict(), **over})
    return cfg


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _bounds(cfg: ScenarioConfig, design, info):
    """Lower bound from the lifted relaxation on the box around ``design``."""
    model, _ = nominal_model(cfg)
    d = cfg.design
    inp = SynthesisInput.from_plant(model, info["gamma_f"], info["gamma_l"],
                                    Z=float(d.get("z_scale", 2e-4)) * np.eye(model.n_x),
                                    nu4=float(d.get("nu4", 1.0)), nu2=float(d.get("nu2", 50.0)))
    return relax_lower(inp, RelaxationBounds.around(design, inp.z_scale))


def cmd_synthesize(args) -> int:
    cfg = _load_config(args)
    design, info = design_for(cfg)
    out = _out_dir(args)
    doc = {"design": design.to_dict(), "info": _jsonable(info)}
    if not args.no_bounds:
        cert = _bounds(cfg, design, info)
        doc["J_lower"] = cert.J_lower
    path = out / "design.json"
    path.write_text(json.dumps(doc, indent=2))
    print(f"mu_bar={design.mu_bar:.6g} J_bar={design.J_bar:.6g} status={design.status}")
    if "J_lower" in doc:
        print(f"J_lower={doc['J_lower']:.6g}")
    print(f"wrote {path}")
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = _load_config(args)
    rep = run_case(cfg)
    paths = rep.write(_out_dir(args))
    s = rep.summary()
    for name, e in s["estimators"].items():
        print(f"{name:9s} rmse={e['rmse']:.6g} time={e['wall_time']:.3f}s"
              + (" DIVERGED" if e["diverged"] else ""))
    if rep.stg is not None:
        print(f"STG {'yes' if rep.stg.verdict else 'no'}: max|z|={rep.stg.z_max:.4g} "
              f"bound={rep.stg.bound:.4g}")
    for p in paths:
        print(f"wrote {p}")
    return EXIT_OK


def cmd_bench(args) -> int:
    cfg = _load_config(args)
    if not getattr(args, "estimators", None):
        cfg = ScenarioConfig.from_dict({**cfg.to_dict(),
                                        "estimators": ["observer", "ekf", "ukf", "srukf"]})
    design, info = design_for(cfg)
    rows = []
    for k in range(args.seeds):
        c = ScenarioConfig.from_dict({**cfg.to_dict(), "seed": cfg.seed + k})
        rep = run_case(c, design, info)
        for name, r in rep.results.items():
            rows.append({"seed": c.seed, "estimator": name, "rmse": r.rmse,
                         "wall_time": r.wall_time, "diverged": r.diverged})
    print(f"{'estimator':9s} {'rmse':>10s} {'time[s]':>9s}  (median over {args.seeds} seeds)")
    for name in cfg.estimators:
        sel = [r for r in rows if r["estimator"] == name]
        print(f"{name:9s} {np.median([r['rmse'] for r in sel]):10.4g} "
              f"{np.median([r['wall_time'] for r in sel]):9.3f}")
    path = _out_dir(args) / f"{cfg.case}_bench.csv"
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    print(f"wrote {path}")
    return EXIT_OK


def cmd_bounds(args) -> int:
    cfg = _load_config(args)
    design, info = design_for(cfg)
    cert = _bounds(cfg, design, info)
    doc = {"case": cfg.case, "J_lower": cert.J_lower, "J_bar": design.J_bar,
           "mu_bar": design.mu_bar, "gamma_f": info["gamma_f"], "gamma_l": info["gamma_l"],
           "ordered": bool(cert.J_lower <= design.J_bar + 1e-9)}
    print(f"{'gamma_f':>10s} {'gamma_l':>10s} {'J_lower':>12s} {'J_bar':>12s}")
    print(f"{doc['gamma_f']:10.4g} {doc['gamma_l']:10.4g} {cert.J_lower:12.4g} "
          f"{design.J_bar:12.4g}")
    path = _out_dir(args) / f"{cfg.case}_bounds.json"
    path.write_text(json.dumps(doc, indent=2))
    print(f"wrote {path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="scenario JSON file")
    common.add_argument("--case", choices=["case1", "case2", "case3", "case4"],
                        help="built-in scenario instead of --config")
    common.add_argument("--seed", type=int, help="override the scenario seed")
    common.add_argument("--out", metavar="DIR", default="out", help="output directory")
    common.add_argument("-v", "--verbose", action="store_true")

    p = _Parser(prog="linfdse", description="Robust observer design and estimator comparison.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    s = sub.add_parser("synthesize", parents=[common], help="design the observer gain")
    s.add_argument("--no-bounds", action="store_true", help="skip the lower-bound relaxation")
    s.set_defaults(func=cmd_synthesize)
    s = sub.add_parser("run", parents=[common], help="run one scenario and write a report")
    s.add_argument("--estimators", metavar="LIST", help="comma-separated, e.g. observer,ekf")
    s.set_defaults(func=cmd_run)
    s = sub.add_parser("bench", parents=[common], help="RMSE and wall time per estimator")
    s.add_argument("--estimators", metavar="LIST")
    s.add_argument("--seeds", type=int, default=5, help="number of consecutive seeds")
    s.set_defaults(func=cmd_bench)
    s = sub.add_parser("bounds", parents=[common], help="upper and lower performance bounds")
    s.set_defaults(func=cmd_bounds)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"linfdse: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (SynthesisError, RuntimeError, ValueError, ArithmeticError) as exc:
        print(f"linfdse: failed: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
