"""Command-line entry point.

Subcommands: gen (synthetic bundle), precompute (hop cache), train (one
trial), hpsearch (greedy axis search), bench (throughput + memory preset),
report (aggregate trial files into a table). Every subcommand honors
--seed, --out and --config FILE.

Config files are flat key=value text ('#' comments allowed). Values parse
as JSON scalars when possible, else strings. Precedence, lowest to
highest: built-in defaults, config file, command-line flags. Keys that are
not run-level options are treated as hyperparameters on train/hpsearch/
bench and rejected elsewhere.

Hyperparameter keys are validated against the method's known knobs, and
values of searched axes against their candidate lists; --allow-custom
lifts the candidate restriction. Usage problems exit 2, runtime failures
exit 1.

Each run takes an exclusive lock (.lock file) on the output directory and
writes resolved_config.json recording every effective setting, which is
sufficient to reproduce the run with the same build. The environment
variable SCALEGNN_NUM_THREADS caps BLAS/OpenMP thread pools; it is applied
before numeric libraries load, so it only takes effect through this entry
point.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

RUN_KEYS = {
    "gen": {"nodes", "classes", "p_in", "p_out", "feature_dim", "separation",
            "noise", "fractions", "name", "seed", "out"},
    "precompute": {"bundle", "k", "norm", "seed", "out"},
    "train": {"method", "bundle", "repeats", "stages", "allow_custom",
              "seed", "out"},
    "hpsearch": {"method", "bundle", "budget", "repeats", "axes", "stages",
                 "allow_custom", "seed", "out"},
    "bench": {"bundle", "methods", "epochs", "seed", "out"},
    "report": {"inputs", "seed", "out"},
}


class UsageError(Exception):
    pass


class DirectoryLock:
    """Single-writer guard: .lock with O_EXCL, removed on release."""

    def __init__(self, directory: Path):
        self.path = Path(directory) / ".lock"
        self.fd = None

    def __enter__(self):
        self.path.parent.mkdir(parents=True, exist_ok=True)
        try:
            self.fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise RuntimeError(
                f"output directory is locked by another run ({self.path}); "
                "remove the stale .lock file if no run is active")
        os.write(self.fd, str(os.getpid()).encode())
        return self

    def __exit__(self, *exc):
        if self.fd is not None:
            os.close(self.fd)
            self.path.unlink(missing_ok=True)


def _apply_thread_env() -> None:
    threads = os.environ.get("SCALEGNN_NUM_THREADS")
    if threads:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS",
                    "MKL_NUM_THREADS", "NUMEXPR_NUM_THREADS"):
            os.environ.setdefault(var, threads)


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def read_config_file(path) -> dict:
    out = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key=value")
        key, val = line.split("=", 1)
        out[key.strip()] = _parse_value(val.strip())
    return out


def _parse_hp_pairs(pairs) -> dict:
    out = {}
    for item in pairs or []:
        if "=" not in item:
            raise UsageError(f"--hp expects key=value, got {item!r}")
        key, val = item.split("=", 1)
        out[key.strip()] = _parse_value(val.strip())
    return out


def _merge(command: str, args: argparse.Namespace, defaults: dict):
    """defaults < config file < explicit flags; returns (options, hp)."""
    options = dict(defaults)
    hp = {}
    if args.config:
        for key, val in read_config_file(args.config).items():
            if key in RUN_KEYS[command]:
                options[key] = val
            elif command in ("train", "hpsearch", "bench"):
                hp[key] = val
            else:
                raise UsageError(f"config key {key!r} not valid for "
                                 f"'{command}'")
    for key in RUN_KEYS[command]:
        flag_val = getattr(args, key, None)
        if flag_val is not None:
            options[key] = flag_val
    hp.update(_parse_hp_pairs(getattr(args, "hp", None)))
    if options.get("stages") is not None:
        hp["num_layers"] = int(options["stages"])
    return options, hp


def _validate_hp(method: str, hp: dict, allow_custom: bool) -> dict:
    from scalegnn.harness import default_space
    from scalegnn.trainers import default_config
    known = set(default_config(method))
    unknown = sorted(set(hp) - known)
    if unknown:
        raise UsageError(f"unknown hyperparameters for {method}: "
                         f"{', '.join(unknown)}")
    if not allow_custom:
        for axis in default_space(method).axes:
            if axis.name in hp and hp[axis.name] not in axis.candidates:
                raise UsageError(
                    f"{axis.name}={hp[axis.name]!r} is outside the declared "
                    f"candidates {list(axis.candidates)}; pass --allow-custom"
                    " to override")
    return hp


def _write_resolved(out_dir: Path, command: str, options: dict, hp: dict,
                    resolved_hp: dict | None = None) -> None:
    payload = {
        "schema_version": 1,
        "command": command,
        "options": {k: (str(v) if isinstance(v, Path) else v)
                    for k, v in options.items()},
        "hyperparameters": hp,
    }
    if resolved_hp is not None:
        payload["resolved_hyperparameters"] = resolved_hp
    with open(out_dir / "resolved_config.json", "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True, default=str)
        fh.write("\n")


def _load_dataset(bundle_dir):
    from scalegnn.bundle import load_bundle, read_manifest
    from scalegnn.trainers import Dataset
    g, x, labels, split = load_bundle(bundle_dir)
    name = read_manifest(bundle_dir)["name"]
    return Dataset(g, x, labels, split, name=name)


# ------------------------------------------------------------ subcommands


def _cmd_gen(args) -> int:
    options, _ = _merge("gen", args, {
        "nodes": 1000, "classes": 2, "p_in": 0.1, "p_out": 0.01,
        "feature_dim": 16, "separation": 1.0, "noise": 1.0,
        "fractions": "0.1,0.2,0.7", "name": None, "seed": 0, "out": None})
    if options["out"] is None:
        raise UsageError("gen requires --out (bundle directory)")
    from scalegnn.bundle import write_synthetic_bundle
    from scalegnn.synth import SyntheticSpec
    fr = options["fractions"]
    fractions = tuple(float(f) for f in
                      (fr.split(",") if isinstance(fr, str) else fr))
    spec = SyntheticSpec(int(options["nodes"]), int(options["classes"]),
                         float(options["p_in"]), float(options["p_out"]),
                         feature_dim=int(options["feature_dim"]),
                         separation=float(options["separation"]),
                         noise=float(options["noise"]),
                         split_fractions=fractions, seed=int(options["seed"]))
    out = Path(options["out"])
    with DirectoryLock(out):
        write_synthetic_bundle(spec, out, name=options["name"])
        _write_resolved(out, "gen", options, {})
    print(f"bundle written to {out}")
    return 0


def _cmd_precompute(args) -> int:
    options, _ = _merge("precompute", args, {
        "bundle": None, "k": 2, "norm": "sym", "seed": 0, "out": None})
    if options["bundle"] is None:
        raise UsageError("precompute requires --bundle")
    from scalegnn.bundle import build_hop_cache
    bundle = Path(options["bundle"])
    out = Path(options["out"]) if options["out"] else bundle
    with DirectoryLock(out):
        cache = build_hop_cache(bundle, options["norm"], int(options["k"]))
        _write_resolved(out, "precompute", options, {})
    print(f"hop cache written to {cache}")
    return 0


def _cmd_train(args) -> int:
    options, hp = _merge("train", args, {
        "method": None, "bundle": None, "repeats": 1, "stages": None,
        "allow_custom": False, "seed": 0, "out": None})
    if options["method"] is None or options["bundle"] is None:
        raise UsageError("train requires --method and --bundle")
    if options["out"] is None:
        raise UsageError("train requires --out")
    method = options["method"]
    hp = _validate_hp(method, hp, bool(options["allow_custom"]))
    from scalegnn.harness import write_curves, write_trials_jsonl
    from scalegnn.trainers import default_config, run_trial
    dataset = _load_dataset(options["bundle"])
    out = Path(options["out"])
    with DirectoryLock(out):
        result = run_trial(method, hp, dataset, seed=int(options["seed"]),
                           repeats=int(options["repeats"]))
        write_trials_jsonl([result], out / "trials.jsonl")
        write_curves([result], out / "curves")
        resolved = default_config(method)
        resolved.update(hp)
        if method == "engcn":
            _write_stage_curves(out / "stage_curves.csv", result,
                                int(resolved["epochs"]))
        _write_resolved(out, "train", options, hp, resolved)
    print(f"{method}: val_acc={result.val_acc:.4f} "
          f"test_acc={result.test_acc:.4f} ({out}/trials.jsonl)")
    return 0


def _write_stage_curves(path: Path, result, epochs_per_stage: int) -> None:
    """Stage-segmented curve: consecutive blocks of epochs_per_stage rows
    share a stage id (one row per stage when no epochs were trained)."""
    with open(path, "w") as fh:
        fh.write("stage,epoch,loss,val_acc\n")
        for i, (loss, acc) in enumerate(zip(result.loss_curve,
                                            result.val_acc_curve)):
            if epochs_per_stage > 0:
                stage, epoch = divmod(i, epochs_per_stage)
            else:
                stage, epoch = i, 0
            fh.write(f"{stage},{epoch},{loss},{acc}\n")


def _cmd_hpsearch(args) -> int:
    options, hp = _merge("hpsearch", args, {
        "method": None, "bundle": None, "budget": None, "repeats": 1,
        "axes": None, "stages": None, "allow_custom": False, "seed": 0,
        "out": None})
    if options["method"] is None or options["bundle"] is None:
        raise UsageError("hpsearch requires --method and --bundle")
    if options["out"] is None:
        raise UsageError("hpsearch requires --out")
    method = options["method"]
    hp = _validate_hp(method, hp, bool(options["allow_custom"]))
    from scalegnn.harness import (default_space, greedy_search, write_curves,
                                  write_search_log, write_trials_jsonl)
    from scalegnn.trainers import run_trial
    space = default_space(method)
    if options["axes"]:
        wanted = [a.strip() for a in str(options["axes"]).split(",")]
        missing = sorted(set(wanted) - set(space.axis_names()))
        if missing:
            raise UsageError(f"unknown axes for {method}: "
                             f"{', '.join(missing)}")
        for name in space.axis_names():
            if name not in wanted:
                space = space.without(name)
    # fixed overrides ride along under every trial of the search
    runner = (lambda m, cfg, ds, seed, repeats=1:
              run_trial(m, {**cfg, **hp}, ds, seed, repeats=repeats))
    dataset = _load_dataset(options["bundle"])
    out = Path(options["out"])
    with DirectoryLock(out):
        log = greedy_search(method, space, dataset, seed=int(options["seed"]),
                            budget=options["budget"],
                            repeats=int(options["repeats"]), runner=runner)
        write_search_log(log, out / "search_log.json")
        write_trials_jsonl(log.trials, out / "trials.jsonl")
        write_curves(log.trials, out / "curves")
        _write_resolved(out, "hpsearch", options, hp, log.final_config)
    print(f"{method}: {log.trial_count} trials, best val_acc="
          f"{log.final_val_acc:.4f}, complete={log.complete} "
          f"({out}/search_log.json)")
    return 0


def _cmd_bench(args) -> int:
    options, hp = _merge("bench", args, {
        "bundle": None, "methods": "sgc,graphsage", "epochs": 3, "seed": 0,
        "out": None})
    if options["bundle"] is None or options["out"] is None:
        raise UsageError("bench requires --bundle and --out")
    from scalegnn.harness import estimate_complexity, write_bench_report
    from scalegnn.trainers import default_config, run_trial
    dataset = _load_dataset(options["bundle"])
    methods = [m.strip() for m in str(options["methods"]).split(",")]
    for m in methods:
        _validate_hp(m, {k: v for k, v in hp.items()
                         if k in default_config(m)}, allow_custom=True)
    out = Path(options["out"])
    rows = []
    with DirectoryLock(out):
        for m in methods:
            cfg = {k: v for k, v in hp.items() if k in default_config(m)}
            cfg["epochs"] = int(options["epochs"])
            r = run_trial(m, cfg, dataset, seed=int(options["seed"]))
            merged = default_config(m)
            merged.update(cfg)
            est = estimate_complexity(
                m, b=int(merged.get("batch_size", 0)),
                r=int(merged.get("fanout", 0)),
                L=int(merged.get("num_layers",
                                 merged.get("num_mlp_layers", 0))),
                D=int(merged.get("hidden_dim", dataset.feature_dim)),
                num_nodes=dataset.num_nodes, nnz=dataset.graph.num_edges)
            rows.append({
                "method": m, "val_acc": r.val_acc, "test_acc": r.test_acc,
                "iterations_per_second": r.iterations_per_second,
                "mean_epoch_seconds": sum(r.epoch_seconds) / len(r.epoch_seconds),
                "activation_bytes": r.activation_bytes,
                "estimated_time_ops": est.time_ops,
                "estimated_space_bytes": est.space_bytes,
            })
        write_bench_report({"dataset": dataset.name, "rows": rows},
                           out / "bench_report.json")
        _write_resolved(out, "bench", options, hp)
    header = f"{'method':<12} {'val':>6} {'it/s':>9} {'act bytes':>12}"
    print(header)
    for row in rows:
        print(f"{row['method']:<12} {row['val_acc']:>6.3f} "
              f"{row['iterations_per_second']:>9.1f} "
              f"{row['activation_bytes']:>12d}")
    print(f"report: {out}/bench_report.json")
    return 0


def _cmd_report(args) -> int:
    options, _ = _merge("report", args, {"inputs": None, "seed": 0,
                                         "out": None})
    inputs = options["inputs"] or []
    if isinstance(inputs, str):
        inputs = [inputs]
    if not inputs:
        raise UsageError("report requires at least one trials.jsonl path")
    from scalegnn.harness import read_trials_jsonl, write_bench_report
    by_method: dict = {}
    for path in inputs:
        for row in read_trials_jsonl(path):
            by_method.setdefault(row["method"], []).append(row)
    rows = []
    for method in sorted(by_method):
        vals = [r["val_acc"] for r in by_method[method]]
        tests = [r["test_acc"] for r in by_method[method]]
        rows.append({"method": method, "trials": len(vals),
                     "mean_val_acc": sum(vals) / len(vals),
                     "best_val_acc": max(vals),
                     "mean_test_acc": sum(tests) / len(tests)})
    print(f"{'method':<12} {'trials':>6} {'mean val':>9} {'best val':>9} "
          f"{'mean test':>9}")
    for row in rows:
        print(f"{row['method']:<12} {row['trials']:>6d} "
              f"{row['mean_val_acc']:>9.4f} {row['best_val_acc']:>9.4f} "
              f"{row['mean_test_acc']:>9.4f}")
    if options["out"]:
        out = Path(options["out"])
        out.mkdir(parents=True, exist_ok=True)
        write_bench_report({"rows": rows}, out / "report.json")
        print(f"report: {out}/report.json")
    return 0


# ----------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="scalegnn", description="CPU toolkit for scalable GNN training")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", default=None)
        p.add_argument("--config", default=None,
                       help="flat key=value config file")

    p = sub.add_parser("gen", help="generate a synthetic bundle")
    common(p)
    p.add_argument("--nodes", type=int, default=None)
    p.add_argument("--classes", type=int, default=None)
    p.add_argument("--p-in", dest="p_in", type=float, default=None)
    p.add_argument("--p-out", dest="p_out", type=float, default=None)
    p.add_argument("--feature-dim", dest="feature_dim", type=int, default=None)
    p.add_argument("--separation", type=float, default=None)
    p.add_argument("--noise", type=float, default=None)
    p.add_argument("--fractions", default=None,
                   help="train,val,test fractions, e.g. 0.1,0.2,0.7")
    p.add_argument("--name", default=None)

    p = sub.add_parser("precompute", help="persist a hop-feature cache")
    common(p)
    p.add_argument("--bundle", default=None)
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--norm", choices=["row", "col", "sym"], default=None)

    from scalegnn.harness import METHODS  # names only, cheap import
    method_names = sorted(METHODS)

    p = sub.add_parser("train", help="run one training trial")
    common(p)
    p.add_argument("--method", choices=method_names, default=None)
    p.add_argument("--bundle", default=None)
    p.add_argument("--repeats", type=int, default=None)
    p.add_argument("--stages", type=int, default=None,
                   help="propagation stages (alias for num_layers)")
    p.add_argument("--hp", action="append", metavar="KEY=VALUE")
    p.add_argument("--allow-custom", dest="allow_custom",
                   action="store_const", const=True, default=None,
                   help="accept axis values outside the declared candidates")

    p = sub.add_parser("hpsearch", help="greedy axis-by-axis search")
    common(p)
    p.add_argument("--method", choices=method_names, default=None)
    p.add_argument("--bundle", default=None)
    p.add_argument("--budget", type=int, default=None)
    p.add_argument("--repeats", type=int, default=None)
    p.add_argument("--axes", default=None,
                   help="comma-separated subset of axes to search")
    p.add_argument("--stages", type=int, default=None)
    p.add_argument("--hp", action="append", metavar="KEY=VALUE",
                   help="fixed overrides applied to every trial")
    p.add_argument("--allow-custom", dest="allow_custom",
                   action="store_const", const=True, default=None)

    p = sub.add_parser("bench", help="throughput and memory preset")
    common(p)
    p.add_argument("--bundle", default=None)
    p.add_argument("--methods", default=None, help="comma-separated methods")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--hp", action="append", metavar="KEY=VALUE")

    p = sub.add_parser("report", help="aggregate trials.jsonl files")
    common(p)
    p.add_argument("inputs", nargs="*", default=None,
                   help="trials.jsonl paths")
    return parser


_HANDLERS = {
    "gen": _cmd_gen,
    "precompute": _cmd_precompute,
    "train": _cmd_train,
    "hpsearch": _cmd_hpsearch,
    "bench": _cmd_bench,
    "report": _cmd_report,
}


def main(argv=None) -> int:
    _apply_thread_env()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _HANDLERS[args.command](args)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 2
    except Exception as e:  # runtime failure contract: message + exit 1
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
