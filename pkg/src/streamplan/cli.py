"""Command-line entry point: train, predict, allocate, simulate, calibrate.

Every command prints machine-readable JSON on stdout (exit 0) and keeps
human diagnostics on stderr. Exit codes: 0 ok, 1 domain error (infeasible
target, undertrained model, ...), 2 usage error (bad flags, missing or
malformed files). The STREAMPLAN_SEED environment variable overrides
``--seed`` so wrapper scripts can pin determinism globally.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from streamplan import allocator, calibrate, dag as dagmod, flow, metrics, sim, training
from streamplan.errors import DagError, StreamPlanError

SEED_ENV = "STREAMPLAN_SEED"


class UsageError(Exception):
    pass


def _load_json(path: str, what: str) -> dict:
    p = Path(path)
    if not p.exists():
        raise UsageError(f"{what} file not found: {path}")
    try:
        return json.loads(p.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read {what} file {path}: {exc}") from exc


def _load_dag(path: str) -> dagmod.LogicalDag:
    try:
        dag = dagmod.dag_from_json(_load_json(path, "DAG"))
    except DagError as exc:
        raise UsageError(str(exc)) from exc
    report = dagmod.validate_dag(dag)
    if not report.ok:
        raise UsageError("invalid DAG: " + "; ".join(report.problems))
    return dag


def _load_models(path: str) -> dict[str, training.NodeModel]:
    return training.models_from_json(_load_json(path, "models"))


def _load_config(path: str) -> dagmod.Configuration:
    try:
        return dagmod.config_from_json(_load_json(path, "configuration"))
    except DagError as exc:
        raise UsageError(str(exc)) from exc


def _seed(args: argparse.Namespace) -> int:
    env = os.environ.get(SEED_ENV)
    if env is not None:
        try:
            return int(env)
        except ValueError as exc:
            raise UsageError(f"{SEED_ENV} must be an integer, got {env!r}") from exc
    return args.seed


def _emit(payload: dict) -> None:
    print(json.dumps(payload, indent=2, sort_keys=True))


def cmd_train(args: argparse.Namespace) -> int:
    dag = _load_dag(args.dag)
    if not Path(args.metrics).exists():
        raise UsageError(f"metrics file not found: {args.metrics}")
    parsed = metrics.parse_metrics(args.metrics)
    aligned = metrics.align(parsed.samples, window=args.window)
    models = training.train(dag, aligned, sm_cpu_cap=args.sm_cpu_cap)
    training.save_models(models, args.out)
    for name in sorted(models):
        m = models[name]
        print(
            f"{name}: r2={m.cpu.r_squared:.4f} gamma={m.gamma:.3f} "
            f"class={m.classification}",
            file=sys.stderr,
        )
    _emit(
        {
            "models": str(args.out),
            "nodes": {
                name: {
                    "r2": m.cpu.r_squared,
                    "gamma": m.gamma,
                    "classification": m.classification,
                }
                for name, m in models.items()
            },
            "malformed_lines": parsed.malformed,
        }
    )
    return 0


def cmd_predict(args: argparse.Namespace) -> int:
    dag = _load_dag(args.dag)
    models = _load_models(args.models)
    config = _load_config(args.config)
    prediction = flow.predict_rate(
        dag,
        config,
        models,
        locality_aware_shuffle=args.locality_aware_shuffle,
        dump_lp=args.dump_lp,
    )
    _emit(flow.prediction_to_json(prediction))
    return 0


def cmd_allocate(args: argparse.Namespace) -> int:
    if args.target <= 0:
        raise UsageError("--target must be > 0")
    dag = _load_dag(args.dag)
    models = _load_models(args.models)
    policy = allocator.AllocationPolicy()
    if args.policy:
        doc = _load_json(args.policy, "policy")
        policy = allocator.AllocationPolicy(
            preferred_container_cpu=doc.get("preferred_container_cpu"),
            candidate_dims=doc.get("candidate_dims"),
            overprovision_factor=float(doc.get("overprovision_factor", 1.0)),
        )
    if args.container_cpu is not None:
        policy.preferred_container_cpu = args.container_cpu
    config = allocator.allocate(dag, models, args.target, policy)
    verdict = allocator.verify_allocation(dag, models, config, args.target)
    doc = dagmod.config_to_json(config)
    if args.out:
        Path(args.out).write_text(json.dumps(doc, indent=2, sort_keys=True))
    print(
        f"containers={config.containers} cpu={config.container_cpu:.2f} "
        f"mem={config.container_mem / 2**20:.0f}MiB "
        f"parallelism={config.parallelism} predicted={verdict.predicted:.1f}",
        file=sys.stderr,
    )
    if not verdict.ok:
        print(
            f"allocation falls short of target {args.target}: "
            f"predicted {verdict.predicted:.1f} (gap {verdict.gap:.1f})",
            file=sys.stderr,
        )
        return 1
    _emit(
        {
            "config": doc,
            "predicted": verdict.predicted,
            "target": args.target,
            "headroom": verdict.predicted - args.target,
        }
    )
    return 0


def cmd_simulate(args: argparse.Namespace) -> int:
    dag = _load_dag(args.dag)
    gt = sim.gt_from_json(_load_json(args.gt, "ground truth"))
    config = _load_config(args.config)
    seed = _seed(args)
    if args.find_max:
        max_rate = sim.find_max_rate(dag, gt, config, seed=seed, duration=args.duration)
        _emit({"max_rate": max_rate})
        return 0
    if not args.rate:
        raise UsageError("either --rate or --find-max is required")
    if len(args.rate) == 1 and not args.emit_metrics:
        result = sim.simulate(dag, gt, config, args.rate[0], args.duration, seed)
        _emit(result.to_json())
        return 0
    results, rows = sim.run_rate_sweep(
        dag, gt, config, args.rate, args.duration, seed, path=args.emit_metrics
    )
    _emit(
        {
            "runs": [r.to_json() for r in results],
            "metrics": args.emit_metrics,
            "metric_rows": len(rows),
        }
    )
    return 0


def cmd_calibrate(args: argparse.Namespace) -> int:
    ledger = Path(args.ledger)
    if args.record:
        config_id, predicted, measured = args.record
        calibrate.append_record(
            ledger,
            calibrate.CalibrationRecord(
                config_id=config_id,
                predicted=float(predicted),
                measured=float(measured),
            ),
        )
    if not ledger.exists():
        raise UsageError(f"calibration ledger not found: {ledger}")
    records = calibrate.read_ledger(ledger)
    if not records:
        raise StreamPlanError("calibration ledger is empty")
    factor = calibrate.overprovision_factor(records)
    verdict = calibrate.check_drift(records, threshold=args.threshold)
    if args.policy:
        policy_path = Path(args.policy)
        doc = json.loads(policy_path.read_text()) if policy_path.exists() else {}
        doc["overprovision_factor"] = factor
        policy_path.write_text(json.dumps(doc, indent=2, sort_keys=True))
    _emit(
        {
            "overprovision_factor": factor,
            "drift": verdict.retrain,
            "error": verdict.error,
            "records": len(records),
        }
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="streamplan",
        description="Capacity planning for stream-processing DAGs",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="fit node models from runtime metrics")
    p.add_argument("--dag", required=True)
    p.add_argument("--metrics", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--window", type=float, default=10.0)
    p.add_argument("--sm-cpu-cap", type=float, default=1.0)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="predict the sustainable rate of a configuration")
    p.add_argument("--dag", required=True)
    p.add_argument("--models", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--locality-aware-shuffle", action="store_true")
    p.add_argument("--dump-lp", default=None)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("allocate", help="produce a configuration for a target rate")
    p.add_argument("--dag", required=True)
    p.add_argument("--models", required=True)
    p.add_argument("--target", type=float, required=True)
    p.add_argument("--container-cpu", type=float, default=None)
    p.add_argument("--policy", default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_allocate)

    p = sub.add_parser("simulate", help="run the simulation oracle")
    p.add_argument("--dag", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--rate", type=float, action="append", default=None)
    p.add_argument("--find-max", action="store_true")
    p.add_argument("--duration", type=float, default=300.0)
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--emit-metrics", default=None)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("calibrate", help="update the over-provisioning factor")
    p.add_argument("--ledger", required=True)
    p.add_argument("--record", nargs=3, metavar=("ID", "PREDICTED", "MEASURED"))
    p.add_argument("--threshold", type=float, default=calibrate.DRIFT_THRESHOLD)
    p.add_argument("--policy", default=None)
    p.set_defaults(func=cmd_calibrate)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except StreamPlanError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
