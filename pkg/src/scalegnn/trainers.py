"""End-to-end trainers behind the benchmark harness.

Every registered method maps (flat config dict, dataset, seed) to a fully
instrumented TrialResult through run_trial. Epoch-trained methods evaluate
on the full graph once per epoch and report accuracies at the best
validation epoch; single-shot methods (plain label diffusion, the
correct-and-smooth pipeline, stage-wise ensembling) report their one final
evaluation. Wall-clock fields time the training portion only; for
precompute methods the one-off propagation cost is reported separately in
extras["precompute_seconds"].
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from scalegnn.engcn import SLEConfig, engcn_run
from scalegnn.graph import (DataSplit, Graph, LabelVector,
                            normalize_adjacency)
from scalegnn.harness import (METHODS, TrialResult, default_space,
                              estimate_activation_memory)
from scalegnn.labelprop import (DiffusionConfig, build_zeros_source,
                                correct_and_smooth, lp_iterate)
from scalegnn.models import (HopFeatures, SAGNConfig, SampledGNNConfig,
                             SGCConfig, SIGNConfig, init_sagn,
                             init_sampled_gnn, init_sgc, init_sign,
                             precompute_hops, sagn_backward, sagn_forward,
                             sampled_gnn_backward, sampled_gnn_forward,
                             sgc_backward, sgc_forward, sign_backward,
                             sign_forward)
from scalegnn.nn import (AdamState, MLPConfig, accuracy, adam_step,
                         cross_entropy, init_mlp, mlp_backward, mlp_forward,
                         softmax_row)
from scalegnn.rng import spawn_rngs
from scalegnn.samplers import (BatchPlan, layer_wise_sample, node_wise_sample,
                               partition_graph, random_walk_sample,
                               saint_edge_sample, saint_node_sample,
                               subgraph_batch)
from scalegnn.synth import SyntheticSpec, generate_sbm


@dataclass
class Dataset:
    graph: Graph
    features: np.ndarray
    labels: LabelVector
    split: DataSplit
    name: str = "synthetic"

    @property
    def num_nodes(self) -> int:
        return self.graph.num_nodes

    @property
    def num_classes(self) -> int:
        return self.labels.num_classes

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]


def dataset_from_sbm(spec: SyntheticSpec) -> Dataset:
    g, x, labels, split = generate_sbm(spec)
    return Dataset(g, x, labels, split, name=f"sbm-{spec.num_nodes}")


def default_config(method: str) -> dict:
    """Full default config: the method's search-space defaults plus the
    fixed knobs the axes do not cover."""
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; known: "
                         f"{sorted(METHODS)}")
    spec = METHODS[method]
    cfg = default_space(method).defaults()
    if spec.category == "labelprop":
        # base-predictor knobs for the residual pipeline
        cfg.update(hidden_dim=64, learning_rate=0.01, weight_decay=0.0,
                   dropout=0.0, epochs=30, batch_size=512)
        return cfg
    cfg.setdefault("batch_size", 1000)  # precompute: knob exists, not searched
    cfg["norm_kind"] = "sym"
    if spec.category in ("node-wise", "layer-wise"):
        cfg["fanout"] = 10
    if method == "clustergcn":
        cfg["num_clusters"] = 16
    if method == "saint-rw":
        cfg["walk_length"] = 2
    if method == "engcn":
        cfg.update(threshold=0.9, warm_start=True)
    return cfg


# ------------------------------------------------------------------ common


def _epoch_chunks(rng, idx: np.ndarray, batch_size: int):
    order = idx[rng.permutation(idx.size)]
    for start in range(0, order.size, batch_size):
        yield order[start:start + batch_size]


def _checksum(trainable: dict) -> float:
    return float(sum(np.abs(v).sum() for v in trainable.values()))


def _finish(method, cfg, dataset, seed, *, eval_logits_fn, loss_curve,
            val_curve, best, epoch_seconds, steps, train_seconds, extras):
    """Assemble the TrialResult from the per-epoch tracking state."""
    spec = METHODS[method]
    b = int(cfg.get("batch_size", 0))
    est = estimate_activation_memory(
        method, b=b, r=int(cfg.get("fanout", 0)),
        L=int(cfg.get("num_layers", cfg.get("num_mlp_layers", 0))),
        D=int(cfg.get("hidden_dim", dataset.feature_dim)))
    its = steps / train_seconds if train_seconds > 0 else 0.0
    extras = dict(extras)
    extras.setdefault("category", spec.category)
    extras.setdefault("batch_semantics", spec.batch_semantics)
    return TrialResult(
        method=method, config=dict(cfg), seed=seed,
        train_acc=best["train_acc"], val_acc=best["val_acc"],
        test_acc=best["test_acc"], best_epoch=best["epoch"],
        loss_curve=loss_curve, val_acc_curve=val_curve,
        epoch_seconds=epoch_seconds, iterations_per_second=its,
        activation_bytes=est, extras=extras)


def _track_best(best, epoch, logits, dataset):
    split, y = dataset.split, dataset.labels.labels
    val = accuracy(logits[split.val], y[split.val])
    if np.isnan(val):
        val = 0.0
    if best["epoch"] < 0 or val > best["val_acc"]:
        best.update(epoch=epoch, val_acc=val,
                    train_acc=accuracy(logits[split.train], y[split.train]),
                    test_acc=accuracy(logits[split.test], y[split.test]))
    return val


def full_plan(a, depth: int) -> BatchPlan:
    """Whole-graph plan: every layer holds all nodes and the full normalized
    adjacency, which makes the sampled forward a plain full-batch forward."""
    nodes = np.arange(a.num_nodes, dtype=np.int64)
    mat = a.to_scipy()
    return BatchPlan([nodes] * (depth + 1), [mat] * depth, kind="full")


# ----------------------------------------------------------- sampled GNNs


def _make_plan(method, cfg, dataset, a, batch, rng):
    g = dataset.graph
    if method == "graphsage":
        return node_wise_sample(g, a, batch, cfg["fanout"], cfg["num_layers"], rng)
    if method in ("fastgcn", "ladies"):
        return layer_wise_sample(g, a, batch, cfg["fanout"], cfg["num_layers"],
                                 method, rng)
    raise ValueError(f"not a per-batch sampler: {method}")


def _subgraph_nodes(method, cfg, dataset, a, rng, parts, cluster_order, step):
    g = dataset.graph
    if method == "clustergcn":
        per = max(1, int(round(cfg["batch_size"] /
                               (dataset.num_nodes / cfg["num_clusters"]))))
        ids = cluster_order[step * per:(step + 1) * per]
        if ids.size == 0:
            return None
        return np.concatenate([parts.cluster_nodes(c) for c in ids])
    if method == "saint-node":
        return saint_node_sample(a, cfg["batch_size"], rng)
    if method == "saint-edge":
        return saint_edge_sample(g, max(1, cfg["batch_size"] // 2), rng)
    if method == "saint-rw":
        walk = cfg["walk_length"]
        roots = max(1, cfg["batch_size"] // (walk + 1))
        return random_walk_sample(g, roots, walk, rng)
    raise ValueError(f"not a subgraph sampler: {method}")


def _train_sampled(method, cfg, dataset, seed):
    spec = METHODS[method]
    g, x, y = dataset.graph, dataset.features.astype(np.float64), dataset.labels.labels
    split = dataset.split
    a = normalize_adjacency(g, cfg["norm_kind"])
    L = int(cfg["num_layers"])
    dims = [dataset.feature_dim] + [int(cfg["hidden_dim"])] * (L - 1) + [dataset.num_classes]
    model_cfg = SampledGNNConfig(dims, dropout=float(cfg["dropout"]), seed=seed)
    params = init_sampled_gnn(model_cfg)
    opt = AdamState(cfg["learning_rate"], cfg["weight_decay"])
    sample_rng, drop_rng = spawn_rngs(seed, 2)
    eval_plan = full_plan(a, L)
    subgraph = spec.category == "subgraph-wise"
    parts = partition_graph(g, cfg["num_clusters"]) if method == "clustergcn" else None
    loss_curve, val_curve, epoch_seconds = [], [], []
    best = {"epoch": -1, "val_acc": 0.0, "train_acc": 0.0, "test_acc": 0.0}
    total_steps = 0
    train_seconds = 0.0
    active_sizes = []
    train_set = np.zeros(dataset.num_nodes, dtype=bool)
    train_set[split.train] = True
    for epoch in range(int(cfg["epochs"])):
        t0 = time.perf_counter()
        losses = []
        if subgraph:
            if method == "clustergcn":
                cluster_order = sample_rng.permutation(cfg["num_clusters"])
                per = max(1, int(round(cfg["batch_size"] /
                                       (dataset.num_nodes / cfg["num_clusters"]))))
                steps = int(np.ceil(cfg["num_clusters"] / per))
            else:
                cluster_order = None
                steps = max(1, int(round(dataset.num_nodes / cfg["batch_size"])))
            for s in range(steps):
                nodes = _subgraph_nodes(method, cfg, dataset, a, sample_rng,
                                        parts, cluster_order, s)
                if nodes is None or nodes.size == 0:
                    continue
                plan = subgraph_batch(g, a, nodes)
                mask = train_set[plan.target_nodes]
                if not mask.any():
                    continue
                logits, trace = sampled_gnn_forward(plan, x, params, model_cfg,
                                                    mode="train", rng=drop_rng)
                loss, grad = cross_entropy(logits[mask],
                                           y[plan.target_nodes[mask]])
                full_grad = np.zeros_like(logits)
                full_grad[mask] = grad
                grads = sampled_gnn_backward(plan, params, model_cfg, trace,
                                             full_grad)
                adam_step(opt, params.trainable(), grads)
                losses.append(loss)
                total_steps += 1
                if epoch == 0:
                    active_sizes.append(plan.target_nodes.size)
        else:
            for batch in _epoch_chunks(sample_rng, split.train, int(cfg["batch_size"])):
                plan = _make_plan(method, cfg, dataset, a, batch, sample_rng)
                logits, trace = sampled_gnn_forward(plan, x, params, model_cfg,
                                                    mode="train", rng=drop_rng)
                loss, grad = cross_entropy(logits, y[plan.target_nodes])
                grads = sampled_gnn_backward(plan, params, model_cfg, trace, grad)
                adam_step(opt, params.trainable(), grads)
                losses.append(loss)
                total_steps += 1
                if epoch == 0:
                    active_sizes.append(plan.nodes(L).size)
        train_seconds += time.perf_counter() - t0
        epoch_seconds.append(time.perf_counter() - t0)
        loss_curve.append(float(np.mean(losses)) if losses else float("nan"))
        logits, _ = sampled_gnn_forward(eval_plan, x, params, model_cfg)
        val_curve.append(_track_best(best, epoch, logits, dataset))
    extras = {"active_input_nodes": float(np.mean(active_sizes)) if active_sizes else 0.0,
              "param_checksum": _checksum(params.trainable())}
    return _finish(method, cfg, dataset, seed, eval_logits_fn=None,
                   loss_curve=loss_curve, val_curve=val_curve, best=best,
                   epoch_seconds=epoch_seconds, steps=total_steps,
                   train_seconds=train_seconds, extras=extras)


# ------------------------------------------------------------- precompute


def _subset_hops(hops: HopFeatures, idx: np.ndarray) -> HopFeatures:
    return HopFeatures([h[idx] for h in hops.hops], hops.K, hops.norm_kind)


def _train_precompute(method, cfg, dataset, seed):
    x = dataset.features.astype(np.float64)
    y = dataset.labels.labels
    split = dataset.split
    K = int(cfg["num_layers"])
    if method == "sagn" and K < 1:
        raise ValueError("sagn needs num_layers >= 1 (hop attention)")
    a = normalize_adjacency(dataset.graph, cfg["norm_kind"])
    t0 = time.perf_counter()
    hops = precompute_hops(a, x, K)
    precompute_seconds = time.perf_counter() - t0
    d, c, hid = dataset.feature_dim, dataset.num_classes, int(cfg["hidden_dim"])
    if method == "sgc":
        model_cfg = SGCConfig(K, d, c, seed=seed)
        params = init_sgc(model_cfg)
        fwd = lambda h, mode, rng: (sgc_forward(h, params, model_cfg), None)
        bwd = lambda h, tr, gr: sgc_backward(h, params, model_cfg, gr)
    elif method == "sign":
        model_cfg = SIGNConfig(K, d, hid, c, dropout=float(cfg["dropout"]), seed=seed)
        params = init_sign(model_cfg)
        fwd = lambda h, mode, rng: sign_forward(h, params, model_cfg, mode, rng)
        bwd = lambda h, tr, gr: sign_backward(h, params, model_cfg, tr, gr)
    else:
        model_cfg = SAGNConfig(K, d, c, mlp_hidden=[hid],
                               dropout=float(cfg["dropout"]), seed=seed)
        params = init_sagn(model_cfg)
        fwd = lambda h, mode, rng: sagn_forward(h, params, model_cfg, mode, rng)
        bwd = lambda h, tr, gr: sagn_backward(h, params, model_cfg, tr, gr)
    opt = AdamState(cfg["learning_rate"], cfg["weight_decay"])
    shuffle_rng, drop_rng = spawn_rngs(seed, 2)
    loss_curve, val_curve, epoch_seconds = [], [], []
    best = {"epoch": -1, "val_acc": 0.0, "train_acc": 0.0, "test_acc": 0.0}
    total_steps = 0
    train_seconds = 0.0
    for epoch in range(int(cfg["epochs"])):
        t0 = time.perf_counter()
        losses = []
        for batch in _epoch_chunks(shuffle_rng, split.train, int(cfg["batch_size"])):
            sub = _subset_hops(hops, batch)
            logits, trace = fwd(sub, "train", drop_rng)
            loss, grad = cross_entropy(logits, y[batch])
            grads = bwd(sub, trace, grad)
            adam_step(opt, params.trainable(), grads)
            losses.append(loss)
            total_steps += 1
        train_seconds += time.perf_counter() - t0
        epoch_seconds.append(time.perf_counter() - t0)
        loss_curve.append(float(np.mean(losses)) if losses else float("nan"))
        logits, _ = fwd(hops, "eval", None)
        val_curve.append(_track_best(best, epoch, logits, dataset))
    hops.release()
    extras = {"active_input_nodes": float(min(int(cfg["batch_size"]), split.train.size)),
              "precompute_seconds": precompute_seconds,
              "param_checksum": _checksum(params.trainable())}
    return _finish(method, cfg, dataset, seed, eval_logits_fn=None,
                   loss_curve=loss_curve, val_curve=val_curve, best=best,
                   epoch_seconds=epoch_seconds, steps=total_steps,
                   train_seconds=train_seconds, extras=extras)


# -------------------------------------------------------- label diffusion


def _train_mlp_base(cfg, dataset, seed):
    """Plain feature MLP used by the residual diffusion pipeline."""
    x = dataset.features.astype(np.float64)
    y = dataset.labels.labels
    split = dataset.split
    depth = int(cfg["num_mlp_layers"])
    dims = [dataset.feature_dim] + [int(cfg["hidden_dim"])] * (depth - 1) + [dataset.num_classes]
    mlp_cfg = MLPConfig(dims, dropout_rate=float(cfg["dropout"]), seed=seed)
    params = init_mlp(mlp_cfg)
    opt = AdamState(cfg["learning_rate"], cfg["weight_decay"])
    shuffle_rng, drop_rng = spawn_rngs(seed, 2)
    loss_curve, val_curve = [], []
    steps = 0
    t0 = time.perf_counter()
    for _ in range(int(cfg["epochs"])):
        losses = []
        for batch in _epoch_chunks(shuffle_rng, split.train, int(cfg["batch_size"])):
            logits, trace = mlp_forward(params, mlp_cfg, x[batch], mode="train",
                                        rng=drop_rng)
            loss, grad = cross_entropy(logits, y[batch])
            grads, _ = mlp_backward(params, mlp_cfg, trace, grad)
            adam_step(opt, params.trainable(), grads)
            losses.append(loss)
            steps += 1
        loss_curve.append(float(np.mean(losses)) if losses else float("nan"))
        logits, _ = mlp_forward(params, mlp_cfg, x, mode="eval")
        val_curve.append(accuracy(logits[split.val], y[split.val]))
    train_seconds = time.perf_counter() - t0
    logits, _ = mlp_forward(params, mlp_cfg, x, mode="eval")
    return params, logits, loss_curve, val_curve, steps, train_seconds


def _train_labelprop(method, cfg, dataset, seed):
    y = dataset.labels
    split = dataset.split
    diff = DiffusionConfig(alpha=float(cfg["alpha"]),
                           num_propagations=int(cfg["num_propagations"]),
                           diffusion_type=str(cfg["diffusion_type"]),
                           autoscale=bool(cfg["autoscale"]),
                           norm_kind=str(cfg["norm_kind"]),
                           num_mlp_layers=int(cfg["num_mlp_layers"]))
    a = normalize_adjacency(dataset.graph, diff.norm_kind)
    extras = {}
    if diff.diffusion_type == "zeros":
        g0, cur = build_zeros_source(y, split)
        loss_curve, val_curve = [], []
        t0 = time.perf_counter()
        labels_arr = y.labels
        for _ in range(max(diff.num_propagations, 1)):
            nxt = lp_iterate(a, cur, g0, diff.alpha, 1, tol=0.0) \
                if diff.num_propagations else cur
            loss_curve.append(float(np.max(np.abs(nxt - cur))))
            cur = nxt
            val_curve.append(accuracy(cur[split.val], labels_arr[split.val]))
        train_seconds = time.perf_counter() - t0
        scores = cur
        steps = len(loss_curve)
        extras["param_checksum"] = 0.0
    else:
        params, base_logits, loss_curve, val_curve, steps, train_seconds = \
            _train_mlp_base(cfg, dataset, seed)
        z = softmax_row(base_logits)
        scores = correct_and_smooth(a, z, y, split, diff)
        extras["base_val_acc"] = accuracy(base_logits[split.val],
                                          y.labels[split.val])
        extras["param_checksum"] = _checksum(params.trainable())
    labels_arr = y.labels
    best = {"epoch": len(val_curve) - 1,
            "val_acc": accuracy(scores[split.val], labels_arr[split.val]),
            "train_acc": accuracy(scores[split.train], labels_arr[split.train]),
            "test_acc": accuracy(scores[split.test], labels_arr[split.test])}
    n_ep = len(loss_curve)
    return _finish(method, cfg, dataset, seed, eval_logits_fn=None,
                   loss_curve=loss_curve, val_curve=val_curve, best=best,
                   epoch_seconds=[train_seconds / n_ep] * n_ep,
                   steps=steps, train_seconds=train_seconds, extras=extras)


# --------------------------------------------------------------- stagewise


def _train_engcn(method, cfg, dataset, seed):
    d, c, hid = dataset.feature_dim, dataset.num_classes, int(cfg["hidden_dim"])
    sle = SLEConfig(threshold=float(cfg["threshold"]),
                    num_stages=int(cfg["num_layers"]),
                    epochs_per_stage=int(cfg["epochs"]),
                    phi=MLPConfig([d, hid, c], dropout_rate=float(cfg["dropout"]),
                                  seed=seed),
                    psi=MLPConfig([c, hid, c], seed=seed + 1),
                    batch_size=int(cfg["batch_size"]),
                    learning_rate=float(cfg["learning_rate"]),
                    weight_decay=float(cfg["weight_decay"]),
                    warm_start=bool(cfg["warm_start"]),
                    norm_kind=str(cfg["norm_kind"]), seed=seed)
    t0 = time.perf_counter()
    votes, metrics = engcn_run(dataset.features, dataset.graph, dataset.labels,
                               dataset.split, sle)
    train_seconds = time.perf_counter() - t0
    loss_curve = [e["train_loss"] for log in metrics["epoch_curves"] for e in log]
    val_curve = [e["val_acc"] for log in metrics["epoch_curves"] for e in log]
    if not loss_curve:  # zero-epoch stages: fall back to per-stage metrics
        loss_curve = [0.0] * len(metrics["stage_val_acc"])
        val_curve = list(metrics["stage_val_acc"])
    y, split = dataset.labels.labels, dataset.split
    best = {"epoch": int(np.argmax(val_curve)),
            "val_acc": metrics["vote_val_acc"],
            "train_acc": float((votes[split.train] == y[split.train]).mean()),
            "test_acc": metrics["vote_test_acc"]}
    stages = sle.num_stages + 1
    steps = sum(int(np.ceil(s / sle.batch_size)) * sle.epochs_per_stage
                for s in metrics["pseudo_sizes"])
    n_ep = max(len(loss_curve), 1)
    extras = {"stage_val_acc": metrics["stage_val_acc"],
              "stage_test_acc": metrics["stage_test_acc"],
              "pseudo_sizes": metrics["pseudo_sizes"],
              "final_pseudo_size": metrics["final_pseudo_size"],
              "active_input_nodes": float(np.mean(metrics["pseudo_sizes"])),
              "param_checksum": 0.0}
    return _finish(method, cfg, dataset, seed, eval_logits_fn=None,
                   loss_curve=loss_curve, val_curve=val_curve, best=best,
                   epoch_seconds=[train_seconds / n_ep] * n_ep,
                   steps=steps, train_seconds=train_seconds, extras=extras)


# ----------------------------------------------------------------- public


def run_trial(method: str, config: dict, dataset: Dataset, seed: int = 0,
              repeats: int = 1, instrument: bool = True) -> TrialResult:
    """Train and evaluate one method/config pair. repeats > 1 reruns with
    seeds seed..seed+repeats-1 and reports mean accuracies with per-run
    values and standard deviations in extras."""
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; known: {sorted(METHODS)}")
    if dataset.features.shape[0] != dataset.labels.labels.shape[0]:
        raise ValueError(f"method {method!r}: dataset features and labels "
                         "disagree on node count")
    cfg = default_config(method)
    cfg.update(config)
    if repeats > 1:
        runs = [run_trial(method, cfg, dataset, seed + i, repeats=1,
                          instrument=instrument) for i in range(repeats)]
        out = runs[0]
        vals = [r.val_acc for r in runs]
        tests = [r.test_acc for r in runs]
        out.val_acc = float(np.mean(vals))
        out.test_acc = float(np.mean(tests))
        out.train_acc = float(np.mean([r.train_acc for r in runs]))
        out.extras.update(repeat_val_accs=vals, repeat_test_accs=tests,
                          repeat_val_std=float(np.std(vals)),
                          repeat_test_std=float(np.std(tests)),
                          repeat_n=repeats)
        return out
    category = METHODS[method].category
    if category in ("node-wise", "layer-wise", "subgraph-wise"):
        result = _train_sampled(method, cfg, dataset, seed)
    elif category == "precompute":
        result = _train_precompute(method, cfg, dataset, seed)
    elif category == "labelprop":
        result = _train_labelprop(method, cfg, dataset, seed)
    else:
        result = _train_engcn(method, cfg, dataset, seed)
    if not instrument:
        result.epoch_seconds = [0.0] * len(result.epoch_seconds)
        result.iterations_per_second = 0.0
    return result
