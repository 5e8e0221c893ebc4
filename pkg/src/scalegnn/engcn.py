"""Stage-wise ensembling trainer: two shared MLPs retrained on successively
propagated feature and label matrices, a growing pseudo-labeled training set,
and centered log-softmax majority voting over per-stage snapshots.

Only two feature-width matrices are ever resident: the current propagated
features and, transiently inside a propagation step, their predecessor. The
voting cache holds per-stage logits, which are label-width and therefore
outside the feature-memory accounting (see instrument.MemoryMeter). Feature
propagation costs exactly one sparse product per stage for X and one for Y,
outside the training loop.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from scalegnn.graph import DataSplit, Graph, LabelVector, normalize_adjacency, spmm
from scalegnn.instrument import memory_meter
from scalegnn.nn import (AdamState, MLPConfig, MLPParams, accuracy, adam_step,
                         cross_entropy, init_mlp, log_softmax_row,
                         mlp_backward, mlp_forward, one_hot, softmax_row)
from scalegnn.rng import spawn_rngs


@dataclass
class SLEConfig:
    """Run settings: confidence threshold for pseudo-label admission, the
    number of propagation stages beyond stage 0 (a run executes stages
    0..num_stages), per-stage epoch budget, and the two model configs.

    phi maps features to class scores, psi maps propagated label embeddings
    to class scores; psi only participates from stage 1 on. warm_start
    continues the weights across stages (snapshots are taken either way);
    the optimizer state is always fresh per stage.
    """

    threshold: float
    num_stages: int
    epochs_per_stage: int
    phi: MLPConfig
    psi: MLPConfig
    batch_size: int
    learning_rate: float = 0.01
    weight_decay: float = 0.0
    warm_start: bool = True
    norm_kind: str = "sym"
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.threshold <= 1.0:
            raise ValueError("threshold must be in (0, 1]")
        if self.num_stages < 0:
            raise ValueError("num_stages must be >= 0")
        if self.epochs_per_stage < 0:
            raise ValueError("epochs_per_stage must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


@dataclass
class EnGCNState:
    """Mutable per-run state. stage is the index of the inputs currently
    held in x_cur/y_cur; sle_update advances it after a stage finishes."""

    stage: int
    x_cur: np.ndarray
    y_cur: np.ndarray
    pseudo_labels: np.ndarray  # int64, -1 where unset
    pseudo_train: np.ndarray   # sorted node indices, superset of train
    num_classes: int
    true_labels: np.ndarray
    split: DataSplit
    snapshots: list = field(default_factory=list)


def engcn_init(x: np.ndarray, labels: LabelVector, split: DataSplit,
               num_classes: int | None = None) -> EnGCNState:
    """Stage-0 state: raw features, one-hot label matrix on training rows
    (zero elsewhere), pseudo set = training set."""
    if split.train.size == 0:
        raise ValueError("training set is empty")
    c = labels.num_classes if num_classes is None else int(num_classes)
    n = x.shape[0]
    if labels.labels.shape[0] != n:
        raise ValueError("features and labels disagree on node count")
    y0 = np.zeros((n, c))
    y0[split.train] = one_hot(labels.labels[split.train], c)
    pseudo = np.full(n, -1, dtype=np.int64)
    pseudo[split.train] = labels.labels[split.train]
    memory_meter.alloc("engcn/x_cur", x)
    return EnGCNState(stage=0, x_cur=x, y_cur=y0, pseudo_labels=pseudo,
                      pseudo_train=np.sort(np.asarray(split.train, dtype=np.int64)),
                      num_classes=c, true_labels=labels.labels.copy(),
                      split=split)


def engcn_propagate(state: EnGCNState, a) -> EnGCNState:
    """One adjacency application each for features and label embeddings.

    Stage 0 consumes raw inputs, so this is only legal once sle_update has
    advanced the state to stage >= 1. The old and new feature matrices
    overlap for one step; the meter sees that transient pair and nothing
    wider, which is the whole point of stage-wise propagation.
    """
    if state.stage < 1:
        raise ValueError("stage 0 uses raw inputs; propagation starts at stage 1")
    new_x = spmm(a, state.x_cur)
    memory_meter.alloc("engcn/x_prev", state.x_cur)
    memory_meter.alloc("engcn/x_cur", new_x)
    memory_meter.free("engcn/x_prev")
    state.x_cur = new_x
    state.y_cur = spmm(a, state.y_cur)
    return state


def engcn_stage_forward(state: EnGCNState, phi_params: MLPParams,
                        psi_params: MLPParams, config: SLEConfig,
                        batch: np.ndarray) -> np.ndarray:
    """Eval-mode class scores for a node batch: phi on features, plus psi
    on label embeddings from stage 1 on (stage 0 ignores psi entirely)."""
    batch = np.asarray(batch, dtype=np.int64)
    if batch.size == 0:
        raise ValueError("empty batch")
    xb = state.x_cur[batch].astype(np.float64)
    logits, _ = mlp_forward(phi_params, config.phi, xb, mode="eval")
    if state.stage >= 1:
        psi_logits, _ = mlp_forward(psi_params, config.psi,
                                    state.y_cur[batch], mode="eval")
        logits = logits + psi_logits
    return logits


def engcn_train_stage(state: EnGCNState, phi_params: MLPParams,
                      psi_params: MLPParams, config: SLEConfig,
                      rng: np.random.Generator,
                      epoch_log: list | None = None):
    """Mini-batch AdamW over the pseudo training set with pseudo-label
    targets; psi trains only from stage 1 on. Appends a parameter snapshot
    (copies of both models) and returns the live params."""
    targets_all = state.pseudo_labels
    nodes = state.pseudo_train
    if (targets_all[nodes] < 0).any():
        raise ValueError("pseudo training set contains unlabeled nodes")
    opt_phi = AdamState(config.learning_rate, config.weight_decay)
    opt_psi = AdamState(config.learning_rate, config.weight_decay)
    use_psi = state.stage >= 1
    for _ in range(config.epochs_per_stage):
        order = nodes[rng.permutation(nodes.size)]
        losses = []
        for start in range(0, order.size, config.batch_size):
            batch = order[start:start + config.batch_size]
            xb = state.x_cur[batch].astype(np.float64)
            logits, trace_phi = mlp_forward(phi_params, config.phi, xb,
                                            mode="train", rng=rng)
            trace_psi = None
            if use_psi:
                psi_logits, trace_psi = mlp_forward(
                    psi_params, config.psi, state.y_cur[batch],
                    mode="train", rng=rng)
                logits = logits + psi_logits
            loss, grad = cross_entropy(logits, targets_all[batch])
            losses.append(loss)
            grads_phi, _ = mlp_backward(phi_params, config.phi, trace_phi, grad)
            adam_step(opt_phi, phi_params.trainable(), grads_phi)
            if use_psi:
                grads_psi, _ = mlp_backward(psi_params, config.psi,
                                            trace_psi, grad)
                adam_step(opt_psi, psi_params.trainable(), grads_psi)
        if epoch_log is not None:
            val_acc = float("nan")
            if state.split.val.size:
                val_logits = engcn_stage_forward(state, phi_params,
                                                 psi_params, config,
                                                 state.split.val)
                val_acc = accuracy(val_logits, state.true_labels[state.split.val])
            epoch_log.append({"train_loss": float(np.mean(losses)),
                              "val_acc": val_acc})
    state.snapshots.append((phi_params.copy(), psi_params.copy()))
    return phi_params, psi_params


def sle_update(state: EnGCNState, stage_logits: np.ndarray,
               threshold: float) -> EnGCNState:
    """Grow the pseudo training set with nodes whose softmax confidence
    clears the threshold; re-clearing nodes refresh their pseudo label,
    training nodes always keep the true label. Advances the stage index."""
    if stage_logits.shape[0] != state.true_labels.shape[0]:
        raise ValueError("stage logits must cover every node")
    probs = softmax_row(stage_logits)
    confident = np.flatnonzero(probs.max(axis=1) >= threshold)
    state.pseudo_labels[confident] = probs[confident].argmax(axis=1)
    train = state.split.train
    state.pseudo_labels[train] = state.true_labels[train]
    state.pseudo_train = np.union1d(state.pseudo_train, confident)
    state.stage += 1
    return state


def majority_vote(stage_logits: list, nodes: np.ndarray | None = None) -> np.ndarray:
    """Centered log-softmax vote: per snapshot, subtract each row's mean
    log-probability, sum the centered scores across snapshots, argmax
    (lowest class index on ties)."""
    if not stage_logits:
        raise ValueError("need at least one snapshot to vote")
    total = None
    for logits in stage_logits:
        rows = logits if nodes is None else logits[nodes]
        z = log_softmax_row(rows)
        centered = z - z.mean(axis=1, keepdims=True)
        total = centered if total is None else total + centered
    return np.argmax(total, axis=1)


def engcn_run(x: np.ndarray, g: Graph, labels: LabelVector, split: DataSplit,
              config: SLEConfig):
    """Full run: init, then per stage [propagate (stage >= 1), train,
    evaluate, grow pseudo set], then vote over the cached per-stage logits.

    Returns (per-node vote classes, metrics dict). Metrics carry per-stage
    train/val/test accuracy, per-epoch curves, pseudo-set sizes at training
    time, and the vote accuracies.
    """
    if config.phi.layer_dims[0] != x.shape[1]:
        raise ValueError("phi input dim must match feature dim")
    if config.phi.layer_dims[-1] != labels.num_classes:
        raise ValueError("phi output dim must match class count")
    if (config.psi.layer_dims[0] != labels.num_classes
            or config.psi.layer_dims[-1] != labels.num_classes):
        raise ValueError("psi must map class scores to class scores")
    a = normalize_adjacency(g, config.norm_kind)
    state = engcn_init(x, labels, split, labels.num_classes)
    phi_params = init_mlp(config.phi)
    psi_params = init_mlp(config.psi)
    stage_rngs = spawn_rngs(config.seed, config.num_stages + 1)
    all_nodes = np.arange(x.shape[0])
    cached_logits = []
    metrics = {"stage_train_acc": [], "stage_val_acc": [], "stage_test_acc": [],
               "pseudo_sizes": [], "epoch_curves": []}
    for stage in range(config.num_stages + 1):
        if stage >= 1:
            engcn_propagate(state, a)
            if not config.warm_start:
                phi_params = init_mlp(replace(config.phi,
                                              seed=config.phi.seed + stage))
                psi_params = init_mlp(replace(config.psi,
                                              seed=config.psi.seed + stage))
        metrics["pseudo_sizes"].append(int(state.pseudo_train.size))
        epoch_log = []
        engcn_train_stage(state, phi_params, psi_params, config,
                          stage_rngs[stage], epoch_log=epoch_log)
        metrics["epoch_curves"].append(epoch_log)
        logits = engcn_stage_forward(state, phi_params, psi_params, config,
                                     all_nodes)
        cached_logits.append(logits)
        y = state.true_labels
        metrics["stage_train_acc"].append(accuracy(logits[split.train], y[split.train]))
        metrics["stage_val_acc"].append(accuracy(logits[split.val], y[split.val]))
        metrics["stage_test_acc"].append(accuracy(logits[split.test], y[split.test]))
        sle_update(state, logits, config.threshold)
    votes = majority_vote(cached_logits)
    y = state.true_labels
    metrics["vote_val_acc"] = float((votes[split.val] == y[split.val]).mean()) \
        if split.val.size else float("nan")
    metrics["vote_test_acc"] = float((votes[split.test] == y[split.test]).mean()) \
        if split.test.size else float("nan")
    metrics["final_pseudo_size"] = int(state.pseudo_train.size)
    return votes, metrics
