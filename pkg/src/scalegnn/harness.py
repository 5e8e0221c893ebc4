"""Benchmark orchestration: greedy axis-by-axis hyperparameter search,
throughput measurement, analytic activation-memory and complexity
accounting, convergence curves, and the JSON/CSV artifact writers.

The greedy search walks the axes in their declared order; within an axis
every candidate is trialed with already-searched axes fixed to their
winners and unsearched axes at their defaults, so the total trial count is
the sum of candidate-list lengths, not their product. Trials are
deterministic per seed, which makes the winner chain exact: each axis's
candidate set contains the incumbent value, so the final config's
validation accuracy can never fall below any logged trial.
"""

from __future__ import annotations

import csv
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

SCHEMA_VERSION = 1


# ------------------------------------------------------------ method table


@dataclass(frozen=True)
class MethodSpec:
    """Registry row: training category plus what the batch-size knob counts
    for this method (the raw knob is normalized to 'active nodes per batch'
    by the trainer and both are recorded)."""

    name: str
    category: str  # node-wise | layer-wise | subgraph-wise | precompute | labelprop | stagewise
    batch_semantics: str


METHODS = {
    m.name: m for m in [
        MethodSpec("graphsage", "node-wise", "training seed nodes per step"),
        MethodSpec("fastgcn", "layer-wise", "training seed nodes per step"),
        MethodSpec("ladies", "layer-wise", "training seed nodes per step"),
        MethodSpec("clustergcn", "subgraph-wise",
                   "target nodes per step, rounded to whole clusters"),
        MethodSpec("saint-node", "subgraph-wise", "node draws per subgraph"),
        MethodSpec("saint-edge", "subgraph-wise",
                   "target nodes per subgraph (half as many edge draws)"),
        MethodSpec("saint-rw", "subgraph-wise",
                   "target nodes per subgraph (roots = size / walk length)"),
        MethodSpec("sgc", "precompute", "input rows per step"),
        MethodSpec("sign", "precompute", "input rows per step"),
        MethodSpec("sagn", "precompute", "input rows per step"),
        MethodSpec("lp", "labelprop", "not batched"),
        MethodSpec("cs", "labelprop", "input rows per step (base predictor)"),
        MethodSpec("engcn", "stagewise", "pseudo-training nodes per step"),
    ]
}


# ------------------------------------------------------------ search space


@dataclass(frozen=True)
class Axis:
    name: str
    candidates: tuple
    default: object

    def __post_init__(self):
        if not self.candidates:
            raise ValueError(f"axis {self.name!r} has no candidates")
        if self.default not in self.candidates:
            raise ValueError(f"axis {self.name!r} default not in candidates")


@dataclass(frozen=True)
class HPSpace:
    axes: tuple

    def __post_init__(self):
        names = [a.name for a in self.axes]
        if len(set(names)) != len(names):
            raise ValueError("duplicate axis names")

    def defaults(self) -> dict:
        return {a.name: a.default for a in self.axes}

    def axis_names(self) -> list:
        return [a.name for a in self.axes]

    def without(self, *names) -> "HPSpace":
        return HPSpace(tuple(a for a in self.axes if a.name not in names))


GNN_SEARCH_SPACE = HPSpace((
    Axis("learning_rate", (1e-2, 1e-3, 1e-4), 1e-2),
    Axis("weight_decay", (1e-4, 2e-4, 4e-4), 1e-4),
    Axis("dropout", (0.1, 0.2, 0.5, 0.7), 0.2),
    Axis("epochs", (20, 30, 40, 50), 50),
    Axis("hidden_dim", (128, 256, 512), 128),
    Axis("num_layers", (2, 4, 6), 2),
    Axis("batch_size", (1000, 2000, 5000), 1000),
))

LP_SEARCH_SPACE = HPSpace((
    Axis("diffusion_type", ("residual", "zeros"), "residual"),
    Axis("num_propagations", (2, 20, 50), 20),
    Axis("alpha", (0.5, 0.75, 0.9, 0.99), 0.75),
    Axis("norm_kind", ("row", "col", "sym"), "sym"),
    Axis("autoscale", (True, False), True),
    Axis("num_mlp_layers", (2, 3, 4), 2),
))


def default_space(method: str) -> HPSpace:
    """Table-ordered search space for a method. Label-diffusion methods get
    the diffusion axes; precompute methods drop the batch-size axis (their
    mini-batching is over precomputed rows, so the knob is not searched)."""
    spec = METHODS[method]
    if spec.category == "labelprop":
        return LP_SEARCH_SPACE
    if spec.category == "precompute":
        return GNN_SEARCH_SPACE.without("batch_size")
    return GNN_SEARCH_SPACE


# ---------------------------------------------------------------- results


@dataclass
class TrialResult:
    """One end-to-end train+evaluate run.

    val_acc is the metric axis winners compete on: for epoch-trained methods
    it is the best epoch's validation accuracy (train/test accuracy are
    reported at that same epoch); single-shot methods report their one
    evaluation. Wall-clock fields are populated only when instrumented.
    """

    method: str
    config: dict
    seed: int
    train_acc: float
    val_acc: float
    test_acc: float
    best_epoch: int
    loss_curve: list
    val_acc_curve: list
    epoch_seconds: list
    iterations_per_second: float
    activation_bytes: int
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.loss_curve or not self.val_acc_curve:
            raise ValueError("completed trials must carry non-empty curves")

    def to_dict(self) -> dict:
        return _jsonable({
            "schema_version": SCHEMA_VERSION,
            "method": self.method,
            "config": self.config,
            "seed": self.seed,
            "train_acc": self.train_acc,
            "val_acc": self.val_acc,
            "test_acc": self.test_acc,
            "best_epoch": self.best_epoch,
            "loss_curve": self.loss_curve,
            "val_acc_curve": self.val_acc_curve,
            "epoch_seconds": self.epoch_seconds,
            "iterations_per_second": self.iterations_per_second,
            "activation_bytes": self.activation_bytes,
            "extras": self.extras,
        })


@dataclass
class AxisVisit:
    axis: str
    candidates: list
    results: list
    chosen: object


@dataclass
class GreedySearchLog:
    method: str
    seed: int
    axis_visits: list
    trials: list
    final_config: dict
    final_val_acc: float
    complete: bool

    @property
    def trial_count(self) -> int:
        return len(self.trials)

    def to_dict(self) -> dict:
        return _jsonable({
            "schema_version": SCHEMA_VERSION,
            "method": self.method,
            "seed": self.seed,
            "complete": self.complete,
            "trial_count": self.trial_count,
            "final_config": self.final_config,
            "final_val_acc": self.final_val_acc,
            "axis_visits": [{
                "axis": v.axis,
                "candidates": v.candidates,
                "chosen": v.chosen,
                "val_accs": [r.val_acc for r in v.results],
            } for v in self.axis_visits],
            "trials": [t.to_dict() for t in self.trials],
        })


def greedy_search(method: str, space: HPSpace, dataset, seed: int = 0,
                  budget: int | None = None, repeats: int = 1,
                  runner=None) -> GreedySearchLog:
    """Axis-by-axis search. Winner per axis = highest validation accuracy,
    first candidate on exact ties. A budget (max trials) cuts the search
    short and flags the log incomplete."""
    if not space.axes:
        raise ValueError("empty search space")
    if runner is None:
        from scalegnn.trainers import run_trial as runner
    from scalegnn.trainers import default_config
    base = default_config(method)
    base.update(space.defaults())
    chosen: dict = {}
    visits, trials = [], []
    complete = True
    final_val = float("nan")
    for axis in space.axes:
        results = []
        for cand in axis.candidates:
            if budget is not None and len(trials) >= budget:
                complete = False
                break
            cfg = dict(base)
            cfg.update(chosen)
            cfg[axis.name] = cand
            res = runner(method, cfg, dataset, seed, repeats=repeats)
            results.append(res)
            trials.append(res)
        if not results:
            break
        accs = [r.val_acc for r in results]
        win = int(np.argmax(accs))  # first maximum: earlier candidate on ties
        chosen[axis.name] = axis.candidates[win]
        final_val = results[win].val_acc
        visits.append(AxisVisit(axis.name, list(axis.candidates), results,
                                axis.candidates[win]))
        if not complete:
            break
    final_config = dict(base)
    final_config.update(chosen)
    return GreedySearchLog(method, seed, visits, trials, final_config,
                           final_val, complete)


# ------------------------------------------------------------ measurement


def measure_throughput(step, warmup_steps: int, timed_steps: int) -> float:
    """Iterations per second of a zero-argument step closure, monotonic
    clock, warmup excluded."""
    if timed_steps < 1:
        raise ValueError("timed_steps must be >= 1")
    if warmup_steps < 0:
        raise ValueError("warmup_steps must be >= 0")
    for _ in range(warmup_steps):
        step()
    t0 = time.perf_counter()
    for _ in range(timed_steps):
        step()
    elapsed = time.perf_counter() - t0
    return timed_steps / max(elapsed, 1e-12)


def estimate_activation_memory(method: str, b: int, r: int, L: int, D: int,
                               bytes_per_scalar: int = 8) -> int:
    """Analytic bytes of cached per-layer activations for a training step.

    Scaling by category: node-wise b*r^L*D, layer-wise b*r*L*D, everything
    trained as plain mini-batch MLP layers (subgraph-wise, precompute,
    stagewise, residual-diffusion base predictor) b*L*D. A one-layer linear
    readout on fixed precomputed features caches nothing for backward (the
    input matrix is not an activation), so sgc reports 0; plain diffusion
    (lp) has no backward pass at all.
    """
    if min(b, L, D) < 0 or r < 0:
        raise ValueError("estimate needs non-negative parameters")
    spec = METHODS[method] if isinstance(method, str) else method
    if spec.name in ("sgc", "lp"):
        return 0
    if spec.category == "node-wise":
        return int(b * r ** L * D * bytes_per_scalar)
    if spec.category == "layer-wise":
        return int(b * r * L * D * bytes_per_scalar)
    return int(b * L * D * bytes_per_scalar)


@dataclass(frozen=True)
class ComplexityEstimate:
    method: str
    category: str
    time_ops: float   # multiply-accumulate estimate for one full pass
    space_bytes: float

    def __post_init__(self):
        if self.time_ops < 0 or self.space_bytes < 0:
            raise ValueError("complexity estimates must be non-negative")


def estimate_complexity(method: str, b: int, r: int, L: int, D: int,
                        num_nodes: int, nnz: int,
                        bytes_per_scalar: int = 8) -> ComplexityEstimate:
    """Per-category cost model evaluated with concrete run parameters:
    node-wise r^L*N*D^2, layer-wise r*L*N*D^2, subgraph-wise
    L*nnz*D + L*N*D^2, precompute (and everything trained as an MLP)
    L*N*D^2; space terms match estimate_activation_memory."""
    spec = METHODS[method]
    n, d = float(num_nodes), float(D)
    if spec.category == "node-wise":
        t = (r ** L) * n * d * d
    elif spec.category == "layer-wise":
        t = r * L * n * d * d
    elif spec.category == "subgraph-wise":
        t = L * float(nnz) * d + L * n * d * d
    else:
        t = L * n * d * d
    s = estimate_activation_memory(method, b, r, L, D, bytes_per_scalar)
    return ComplexityEstimate(spec.name, spec.category, t, float(s))


# ------------------------------------------------------------ convergence


@dataclass
class ConvergenceCurve:
    method: str
    seed: int
    losses: list
    val_accs: list

    def __post_init__(self):
        if len(self.losses) != len(self.val_accs):
            raise ValueError("loss and accuracy curves must align")

    @property
    def num_epochs(self) -> int:
        return len(self.losses)

    def epochs_to_fraction_of_final(self, fraction: float = 0.95) -> int:
        """First epoch (1-based) whose validation accuracy reaches the given
        fraction of the final value."""
        target = fraction * self.val_accs[-1]
        for i, v in enumerate(self.val_accs):
            if v >= target:
                return i + 1
        return self.num_epochs

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "loss", "val_acc"])
            for i, (l, v) in enumerate(zip(self.losses, self.val_accs)):
                w.writerow([i, repr(float(l)), repr(float(v))])


def record_convergence(result: TrialResult) -> ConvergenceCurve:
    return ConvergenceCurve(result.method, result.seed,
                            list(result.loss_curve),
                            list(result.val_acc_curve))


# ---------------------------------------------------------------- writers


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if np.isfinite(v) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_trials_jsonl(results: list, path) -> None:
    with open(path, "w") as fh:
        for r in results:
            fh.write(json.dumps(r.to_dict()) + "\n")


def read_trials_jsonl(path) -> list:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def write_search_log(log: GreedySearchLog, path) -> None:
    with open(path, "w") as fh:
        json.dump(log.to_dict(), fh, indent=2)


def write_curves(results: list, directory) -> list:
    """One curves/<method>_<seed>_<index>.csv per result; returns paths."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    paths = []
    for i, r in enumerate(results):
        p = directory / f"{r.method}_{r.seed}_{i}.csv"
        record_convergence(r).to_csv(p)
        paths.append(p)
    return paths


def write_bench_report(report: dict, path) -> None:
    payload = dict(report)
    payload["schema_version"] = SCHEMA_VERSION
    with open(path, "w") as fh:
        json.dump(_jsonable(payload), fh, indent=2)
