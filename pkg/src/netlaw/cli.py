"""Command-line entry point: ``netlaw <subcommand> --config run.json``.

Exit codes: 0 success, 2 configuration error, 3 stage failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .config import ConfigError, load_config

EXIT_OK, EXIT_CONFIG, EXIT_STAGE = 0, 2, 3

# subcommand -> last pipeline stage it runs
_UNTIL = {"simulate": "corrupt", "preprocess": "preprocess", "train": "train", "regress": "regress",
          "evaluate": None, "pipeline": None}


def _load(args):
    cfg = load_config(args.config)
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.out is not None:
        changes["out"] = args.out
    return cfg.replace(**changes) if changes else cfg


def run_bifurcation(cfg, run_dir: Path) -> dict:
    """Poincare scans of the true and/or discovered family named in the config; writes CSV + JSON."""
    from .chaos import SectionConfig, bifurcation_scan, discovered_family, rossler_family
    from .pipeline import build_topology, topology_from_json
    from .symreg.regress import DiscoveredModel

    bb = cfg.bifurcation
    if bb is None:
        raise ConfigError("config has no bifurcation block")
    run_dir.mkdir(parents=True, exist_ok=True)
    top_path = run_dir / "topology.json"
    top = topology_from_json(json.loads(top_path.read_text())) if top_path.exists() else build_topology(cfg)
    section = SectionConfig(bb.section_dim, bb.section_value, "rising", bb.transient, bb.record_dim, bb.node)
    d = 3
    x0 = [[bb.x0] * d for _ in range(top.n)]
    params = {k: v for k, v in cfg.dynamics.params.items() if k in ("a", "b", "eps")}
    families = {}
    if bb.family in ("true", "both"):
        families["true"] = rossler_family(top, **params)
    out = {"cluster_counts": {}, "distinct_counts": {}, "failures": {}}
    if bb.family in ("discovered", "both"):
        path = run_dir / "discovered.json"
        if not path.exists():
            raise FileNotFoundError(f"{path} is required for the discovered family")
        fam, c_hat = discovered_family(DiscoveredModel.load(path), top, bb.param_term, bb.param_dim)
        families["discovered"] = fam
        out["c_hat"] = c_hat
    for label, fam in families.items():
        res = bifurcation_scan(fam, top, x0, section, bb.t_end, c_range=bb.c_range, c_steps=bb.c_steps,
                               c_values=bb.c_values, dt_out=bb.dt_out, rtol=bb.rtol, atol=bb.atol)
        res.save_csv(run_dir / f"bifurcation_{label}.csv")
        out["cluster_counts"][label] = {repr(c): n for c, n in res.cluster_counts(bb.gap_frac).items()}
        out["distinct_counts"][label] = {repr(c): n for c, n in res.distinct_counts(bb.distinct_frac).items()}
        out["failures"][label] = {repr(c): msg for c, msg in res.failures.items()}
    (run_dir / "bifurcation.json").write_text(json.dumps(out, indent=2, sort_keys=True) + "\n")
    return out


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="netlaw", description="Discover network dynamics equations from trajectories.")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {"simulate": "simulate (and corrupt) observations",
             "preprocess": "select the interval and build training pairs",
             "train": "train the decoupler (round 0)",
             "regress": "regress closed-form expressions (round 0)",
             "evaluate": "integrate discovered equations and score them",
             "pipeline": "run the whole loop",
             "bifurcate": "Poincare-section scan of true and discovered models",
             "report": "summarise a run directory"}
    for name, text in helps.items():
        p = sub.add_parser(name, help=text)
        if name == "report":
            p.add_argument("--out", required=True, help="run directory")
            continue
        p.add_argument("--config", required=True, help="JSON config file")
        p.add_argument("--seed", type=int, default=None, help="override the root seed")
        p.add_argument("--out", default=None, help="override the run directory")
        p.add_argument("--resume", action="store_true", help="reuse completed stage artifacts")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    from .pipeline import StageError, emit_report, run_pipeline

    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    if args.command == "report":
        print(emit_report(args.out))
        return EXIT_OK
    try:
        cfg = _load(args)
        if args.command == "bifurcate":
            run_bifurcation(cfg, Path(cfg.out))
            emit_report(cfg.out)
            return EXIT_OK
        # stand-alone stage commands always build on what is already on disk
        resume = args.resume or args.command not in ("pipeline", "simulate")
        run_dir = run_pipeline(cfg, resume=resume, until=_UNTIL[args.command])
        if args.command in ("evaluate", "pipeline"):
            emit_report(run_dir)
        print(run_dir)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STAGE
    except (OSError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
