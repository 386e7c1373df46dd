"""Command-line entry points.

Every experiment subcommand takes an optional ``--config`` JSON file (the
same document stored in run manifests) plus a handful of flag overrides for
the common knobs.  Failures print a one-line JSON error record to stderr and
exit nonzero, so shell pipelines can tell what broke.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

from .attack import AttackConfig
from .data import SynthSpec, save_csv, save_schema, synth_generate
from .errors import ShapshiftError
from .harness import (
    ExperimentConfig,
    load_config,
    run_experiment,
    write_attack_summary,
    write_sensitivity_summary,
)


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON experiment config; flags override it")
    p.add_argument("--out", help="run directory")
    p.add_argument("--seed", type=int, help="root seed for all randomness")
    p.add_argument("--csv", help="input data CSV (requires --schema)")
    p.add_argument("--schema", help="schema JSON for --csv")
    p.add_argument("--rows", type=int, help="synthetic row count when no CSV is given")
    p.add_argument("--protected", help="protected feature name")
    p.add_argument("--folds", type=int, help="cross-validation folds")
    p.add_argument("--background-size", type=int, help="explainer background rows")
    p.add_argument("--explain-limit", type=int, help="cap on explained rows per fold")
    p.add_argument("--method", choices=("exact", "sampled"), help="explainer method")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="shapshift",
                                     description="bucketing sensitivity of Shapley explanations")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset")
    p.add_argument("--rows", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--protected", default="age")
    p.add_argument("--out", required=True, help="output CSV path")
    p.add_argument("--schema-out", help="also write the schema JSON here")

    p = sub.add_parser("train", help="grid-search, train, and save a model")
    _add_common(p)

    p = sub.add_parser("explain", help="explain rows under a trained or fresh model")
    _add_common(p)
    p.add_argument("--model", help="load this model instead of training")
    p.add_argument("--transform", help="apply this transform spec before explaining")
    p.add_argument("--grouped", action="store_true", help="one player per logical feature")

    p = sub.add_parser("sensitivity", help="sweep bucket counts and trace rank shifts")
    _add_common(p)
    p.add_argument("--policy", choices=("index", "midpoint", "median"),
                   help="bucket value policy")
    p.add_argument("--buckets", type=int, nargs="+", help="bucket counts to sweep")

    p = sub.add_parser("attack", help="search for a rank-hiding representation")
    attack_sub = p.add_subparsers(dest="attack_kind", required=True)
    for kind, extra in (("bucket", "numeric boundaries via Bayesian optimization"),
                        ("merge", "categorical merges via exhaustive enumeration")):
        q = attack_sub.add_parser(kind, help=extra)
        _add_common(q)
        q.add_argument("--domain", type=float, nargs=2, metavar=("LO", "HI"),
                       help="attack domain for bucket boundaries")
        q.add_argument("--buckets", type=int, nargs="+", help="bucket counts to attack")
        q.add_argument("--mode", choices=("fixed-model", "retrain"))
        q.add_argument("--budget", type=int, help="objective evaluations per attack")
        q.add_argument("--epsilon-policy", choices=("match-equi-width", "absolute"))
        q.add_argument("--epsilon", type=float, help="absolute fidelity floor")

    p = sub.add_parser("report", help="recompute aggregate summaries for a finished run")
    p.add_argument("run_dir")

    return parser


def _experiment_config(args, protocol: str) -> ExperimentConfig:
    if args.config:
        cfg = replace(load_config(args.config), protocol=protocol)
    else:
        if not args.out:
            raise ShapshiftError("--out is required without a config file")
        cfg = ExperimentConfig(protocol=protocol, out_dir=args.out)

    overrides = {}
    for flag, field_name in (
        ("out", "out_dir"), ("seed", "seed"), ("csv", "csv"), ("schema", "schema"),
        ("rows", "synth_rows"), ("protected", "protected"), ("folds", "folds"),
        ("background_size", "background_size"), ("explain_limit", "explain_limit"),
        ("method", "method"),
    ):
        value = getattr(args, flag, None)
        if value is not None:
            overrides[field_name] = value
    if getattr(args, "model", None):
        overrides["model_path"] = args.model
    if getattr(args, "transform", None):
        overrides["transform_path"] = args.transform
    if getattr(args, "grouped", False):
        overrides["grouped_players"] = True
    if getattr(args, "policy", None):
        overrides["policy"] = args.policy
    if getattr(args, "buckets", None) and protocol in ("sensitivity", "attack-bucket"):
        overrides["bucket_counts"] = tuple(args.buckets)
    if overrides:
        cfg = replace(cfg, **overrides)

    if protocol.startswith("attack-"):
        cfg = replace(cfg, attack=_attack_config(args, cfg))
    return cfg


def _attack_config(args, cfg: ExperimentConfig) -> AttackConfig:
    base = cfg.attack
    if base is None:
        if not cfg.protected:
            raise ShapshiftError("attacks need --protected (or a config with one)")
        if cfg.protocol == "attack-bucket" and not getattr(args, "domain", None):
            raise ShapshiftError("bucket attacks need --domain LO HI")
        base = AttackConfig(protected=cfg.protected,
                            domain=tuple(args.domain) if getattr(args, "domain", None) else (0.0, 1.0))
    overrides = {}
    if getattr(args, "domain", None):
        overrides["domain"] = tuple(args.domain)
    if getattr(args, "mode", None):
        overrides["mode"] = args.mode
    if getattr(args, "budget", None):
        overrides["budget"] = args.budget
    if getattr(args, "epsilon_policy", None):
        overrides["epsilon_policy"] = args.epsilon_policy
    if getattr(args, "epsilon", None) is not None:
        overrides["epsilon"] = args.epsilon
    if cfg.protected:
        overrides["protected"] = cfg.protected
    if cfg.protocol == "attack-merge" and base.epsilon_policy != "absolute" \
            and "epsilon_policy" not in overrides:
        if "epsilon" not in overrides and base.epsilon is None:
            raise ShapshiftError("merge attacks need --epsilon (absolute fidelity floor)")
        overrides["epsilon_policy"] = "absolute"
    return replace(base, **overrides) if overrides else base


def _cmd_synth(args) -> None:
    dataset = synth_generate(SynthSpec(rows=args.rows, protected=args.protected), seed=args.seed)
    save_csv(dataset, args.out)
    if args.schema_out:
        save_schema(dataset.schema, args.schema_out)
    print(json.dumps({"rows": len(dataset), "csv": args.out,
                      "positive_rate": sum(dataset.targets) / len(dataset)}))


def _cmd_report(args) -> None:
    written = []
    run_dir = Path(args.run_dir)
    if (run_dir / "metrics" / "sensitivity.csv").exists():
        written.append(write_sensitivity_summary(run_dir))
    if (run_dir / "attack" / "summary.csv").exists():
        written.append(write_attack_summary(run_dir))
    if not written:
        raise ShapshiftError(f"{args.run_dir}: no per-fold report files to aggregate")
    print(json.dumps({"written": written}))


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "synth":
            _cmd_synth(args)
        elif args.command == "report":
            _cmd_report(args)
        else:
            protocol = args.command
            if protocol == "attack":
                protocol = f"attack-{args.attack_kind}"
            out = run_experiment(_experiment_config(args, protocol))
            print(json.dumps({"run_dir": str(out)}))
    except (ShapshiftError, ValueError, OSError) as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
