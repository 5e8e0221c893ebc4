"""Precompute-based predictors (SGC, SIGN, SAGN) and the sampled GNN.

The precompute family trains plain feed-forward heads on hop-propagated
features computed once up front; the sampled GNN consumes BatchPlans from
the samplers module. All backward passes are hand-written and covered by
finite-difference checks in the tests.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from scalegnn.graph import NormalizedAdjacency, csr_matmul, spmm
from scalegnn.instrument import memory_meter
from scalegnn.nn import (
    MLPConfig,
    MLPParams,
    init_mlp,
    kaiming_uniform,
    mlp_backward,
    mlp_forward,
)
from scalegnn.rng import make_rng
from scalegnn.samplers import BatchPlan


# ---------------------------------------------------------------- hop cache


@dataclass(frozen=True)
class HopFeatures:
    hops: list  # X^0..X^K
    K: int
    norm_kind: str

    def dim(self) -> int:
        return self.hops[0].shape[1]

    def release(self) -> None:
        for l in range(self.K + 1):
            memory_meter.free(f"hop/{l}")


def precompute_hops(a: NormalizedAdjacency, x: np.ndarray, K: int) -> HopFeatures:
    """X^l = Â X^{l-1} for l = 1..K, all kept resident (that is the point of
    the cache, and what the memory meter records)."""
    if K < 0:
        raise ValueError("hop count must be >= 0")
    x = np.asarray(x)
    hops = [x]
    memory_meter.alloc("hop/0", x)
    for l in range(1, K + 1):
        nxt = spmm(a, hops[-1])
        memory_meter.alloc(f"hop/{l}", nxt)
        hops.append(nxt)
    return HopFeatures(hops, K, a.norm_kind)


# ---------------------------------------------------------------------- SGC


@dataclass
class SGCConfig:
    K: int
    in_dim: int
    num_classes: int
    seed: int = 0


def init_sgc(config: SGCConfig, dtype=np.float64) -> MLPParams:
    return MLPParams(
        [kaiming_uniform(make_rng(config.seed), config.in_dim, config.num_classes, dtype)],
        [np.zeros(config.num_classes, dtype=dtype)],
    )


def sgc_forward(hops: HopFeatures, params: MLPParams, config: SGCConfig) -> np.ndarray:
    if hops.K != config.K:
        raise ValueError(f"hop cache has K={hops.K}, model expects K={config.K}")
    x = hops.hops[config.K]
    if x.shape[1] != params.weights[0].shape[0]:
        raise ValueError("feature dim does not match readout")
    return x @ params.weights[0] + params.biases[0]


def sgc_backward(hops: HopFeatures, params: MLPParams, config: SGCConfig,
                 grad_logits: np.ndarray) -> dict:
    x = hops.hops[config.K]
    return {"W0": x.T @ grad_logits, "b0": grad_logits.sum(axis=0)}


# --------------------------------------------------------------------- SIGN


@dataclass
class SIGNConfig:
    K: int
    in_dim: int
    hidden: int
    num_classes: int
    dropout: float = 0.0
    activation: str = "relu"  # "relu" | "identity"
    seed: int = 0


@dataclass
class SIGNParams:
    omegas: list  # K+1 projections (in_dim, hidden)
    readout_w: np.ndarray
    readout_b: np.ndarray

    def trainable(self) -> dict:
        out = {f"omega{k}": w for k, w in enumerate(self.omegas)}
        out["readout_W"] = self.readout_w
        out["readout_b"] = self.readout_b
        return out


def init_sign(config: SIGNConfig, dtype=np.float64) -> SIGNParams:
    rng = make_rng(config.seed)
    omegas = [kaiming_uniform(rng, config.in_dim, config.hidden, dtype)
              for _ in range(config.K + 1)]
    readout_w = kaiming_uniform(rng, (config.K + 1) * config.hidden, config.num_classes, dtype)
    return SIGNParams(omegas, readout_w, np.zeros(config.num_classes, dtype=dtype))


def sign_forward(hops: HopFeatures, params: SIGNParams, config: SIGNConfig,
                 mode: str = "eval", rng=None):
    """Per-hop projection, concat, activation, optional dropout, readout."""
    if hops.K != config.K:
        raise ValueError(f"hop cache has K={hops.K}, model expects K={config.K}")
    pre = np.concatenate([hops.hops[k] @ params.omegas[k] for k in range(config.K + 1)], axis=1)
    if config.activation == "relu":
        h = np.maximum(pre, 0.0)
    else:
        h = pre
    mask = None
    if mode == "train" and config.dropout > 0:
        if rng is None:
            raise ValueError("train-mode dropout needs an rng")
        keep = 1.0 - config.dropout
        mask = (rng.random(h.shape) < keep).astype(h.dtype) / keep
        h = h * mask
    logits = h @ params.readout_w + params.readout_b
    trace = {"pre": pre, "h": h, "mask": mask}
    return logits, trace


def sign_backward(hops: HopFeatures, params: SIGNParams, config: SIGNConfig,
                  trace: dict, grad_logits: np.ndarray) -> dict:
    grads = {"readout_W": trace["h"].T @ grad_logits,
             "readout_b": grad_logits.sum(axis=0)}
    g = grad_logits @ params.readout_w.T
    if trace["mask"] is not None:
        g = g * trace["mask"]
    if config.activation == "relu":
        g = g * (trace["pre"] > 0)
    H = config.hidden
    for k in range(config.K + 1):
        grads[f"omega{k}"] = hops.hops[k].T @ g[:, k * H:(k + 1) * H]
    return grads


# --------------------------------------------------------------------- SAGN


@dataclass
class SAGNConfig:
    K: int
    in_dim: int
    num_classes: int
    mlp_hidden: list = field(default_factory=list)
    dropout: float = 0.0
    use_batchnorm: bool = False
    leaky_slope: float = 0.2
    seed: int = 0

    def mlp_config(self) -> MLPConfig:
        return MLPConfig([self.in_dim, *self.mlp_hidden, self.num_classes],
                         dropout_rate=self.dropout,
                         use_batchnorm=self.use_batchnorm,
                         seed=self.seed)


@dataclass
class SAGNParams:
    att_u: np.ndarray  # (in_dim,)
    att_v: list  # K vectors (in_dim,)
    skip: np.ndarray  # (in_dim, in_dim)
    mlp: MLPParams

    def trainable(self) -> dict:
        out = {"att_u": self.att_u}
        for k, v in enumerate(self.att_v):
            out[f"att_v{k}"] = v
        out["skip"] = self.skip
        for name, arr in self.mlp.trainable().items():
            out[f"mlp_{name}"] = arr
        return out


def init_sagn(config: SAGNConfig, dtype=np.float64) -> SAGNParams:
    if config.K < 1:
        raise ValueError("hop attention needs K >= 1")
    rng = make_rng(config.seed)
    d = config.in_dim
    att_u = kaiming_uniform(rng, d, 1, dtype).ravel()
    att_v = [kaiming_uniform(rng, d, 1, dtype).ravel() for _ in range(config.K)]
    skip = kaiming_uniform(rng, d, d, dtype)
    mlp = init_mlp(config.mlp_config(), dtype)
    return SAGNParams(att_u, att_v, skip, mlp)


def _leaky(z, slope):
    return np.where(z > 0, z, slope * z)


def _leaky_grad(z, slope):
    return np.where(z > 0, 1.0, slope)


def sagn_forward(hops: HopFeatures, params: SAGNParams, config: SAGNConfig,
                 mode: str = "eval", rng=None, update_running: bool = True):
    """Per-node softmax attention over hops 1..K, plus a raw-feature skip
    into the fusion MLP."""
    if hops.K < 1:
        raise ValueError("hop attention needs K >= 1 precomputed hops")
    if hops.K != config.K:
        raise ValueError(f"hop cache has K={hops.K}, model expects K={config.K}")
    x0 = hops.hops[0]
    base = x0 @ params.att_u  # (n,)
    hop_scores = np.stack([hops.hops[k + 1] @ params.att_v[k] for k in range(config.K)], axis=1)
    pre = base[:, None] + hop_scores  # (n, K)
    scores = _leaky(pre, config.leaky_slope)
    shifted = scores - scores.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    t = e / e.sum(axis=1, keepdims=True)  # attention weights (n, K)
    fused = np.zeros_like(x0)
    for k in range(config.K):
        fused += t[:, k:k + 1] * hops.hops[k + 1]
    mlp_in = fused + x0 @ params.skip
    logits, mlp_trace = mlp_forward(params.mlp, config.mlp_config(), mlp_in,
                                    mode="train" if mode == "train" else "eval",
                                    rng=rng, update_running=update_running)
    trace = {"t": t, "pre": pre, "mlp_trace": mlp_trace, "mlp_in": mlp_in}
    return logits, trace


def sagn_backward(hops: HopFeatures, params: SAGNParams, config: SAGNConfig,
                  trace: dict, grad_logits: np.ndarray) -> dict:
    mlp_grads, g_in = mlp_backward(params.mlp, config.mlp_config(),
                                   trace["mlp_trace"], grad_logits)
    grads = {f"mlp_{k}": v for k, v in mlp_grads.items()}
    x0 = hops.hops[0]
    grads["skip"] = x0.T @ g_in
    t, pre = trace["t"], trace["pre"]
    # dL/dT_{ik} = <g_in_i, X^{k+1}_i>
    dt = np.stack([np.einsum("nd,nd->n", g_in, hops.hops[k + 1]) for k in range(config.K)], axis=1)
    ds = t * (dt - (t * dt).sum(axis=1, keepdims=True))  # softmax jacobian
    dpre = ds * _leaky_grad(pre, config.leaky_slope)
    grads["att_u"] = x0.T @ dpre.sum(axis=1)
    for k in range(config.K):
        grads[f"att_v{k}"] = hops.hops[k + 1].T @ dpre[:, k]
    return grads


# -------------------------------------------------------------- sampled GNN


@dataclass
class SampledGNNConfig:
    dims: list  # input, hidden..., output
    dropout: float = 0.0
    seed: int = 0

    @property
    def depth(self) -> int:
        return len(self.dims) - 1


@dataclass
class SampledGNNParams:
    w_self: list
    w_neigh: list
    bias: list

    def trainable(self) -> dict:
        out = {}
        for i, (ws, wn, b) in enumerate(zip(self.w_self, self.w_neigh, self.bias)):
            out[f"W_self{i}"] = ws
            out[f"W_neigh{i}"] = wn
            out[f"b{i}"] = b
        return out


def init_sampled_gnn(config: SampledGNNConfig, dtype=np.float64) -> SampledGNNParams:
    rng = make_rng(config.seed)
    w_self, w_neigh, bias = [], [], []
    for i in range(config.depth):
        w_self.append(kaiming_uniform(rng, config.dims[i], config.dims[i + 1], dtype))
        w_neigh.append(kaiming_uniform(rng, config.dims[i], config.dims[i + 1], dtype))
        bias.append(np.zeros(config.dims[i + 1], dtype=dtype))
    return SampledGNNParams(w_self, w_neigh, bias)


def _gather_self(h: np.ndarray, pos: np.ndarray) -> np.ndarray:
    """h rows at pos, zero rows where pos is -1 (node absent from B_{l+1})."""
    out = h[np.clip(pos, 0, h.shape[0] - 1)]
    out[pos < 0] = 0.0
    return out


def sampled_gnn_forward(plan: BatchPlan, x: np.ndarray, params: SampledGNNParams,
                        config: SampledGNNConfig, mode: str = "eval", rng=None):
    """Mean-style aggregator with separate self and neighbor weights.

    Layer i maps features on B_{K-i} to B_{K-i-1}; relu between layers,
    final layer linear. Plan and model depth must agree (shared subgraph
    plans fit any depth by construction).
    """
    depth = config.depth
    if not plan.shared and len(plan.blocks) != depth:
        raise ValueError(f"plan has {len(plan.blocks)} blocks, model depth is {depth}")
    if mode == "train" and config.dropout > 0 and rng is None:
        raise ValueError("train-mode dropout needs an rng")
    h = np.asarray(x)[plan.nodes(depth)]
    layers = []
    for i in range(depth):
        l = depth - 1 - i  # block index: deepest first
        agg = csr_matmul(plan.block(l), h)
        pos = plan.self_positions(l)
        self_h = _gather_self(h, pos)
        z = self_h @ params.w_self[i] + agg @ params.w_neigh[i] + params.bias[i]
        rec = {"h": h, "agg": agg, "self_h": self_h, "pos": pos, "z": z, "mask": None}
        if i < depth - 1:
            h = np.maximum(z, 0.0)
            if mode == "train" and config.dropout > 0:
                keep = 1.0 - config.dropout
                mask = (rng.random(h.shape) < keep).astype(h.dtype) / keep
                h = h * mask
                rec["mask"] = mask
        else:
            h = z
        layers.append(rec)
    return h, {"layers": layers}


def sampled_gnn_backward(plan: BatchPlan, params: SampledGNNParams,
                         config: SampledGNNConfig, trace: dict,
                         grad_logits: np.ndarray) -> dict:
    depth = config.depth
    grads = {}
    g = np.asarray(grad_logits)
    for i in range(depth - 1, -1, -1):
        rec = trace["layers"][i]
        if i < depth - 1:
            if rec["mask"] is not None:
                g = g * rec["mask"]
            g = g * (rec["z"] > 0)
        grads[f"W_self{i}"] = rec["self_h"].T @ g
        grads[f"W_neigh{i}"] = rec["agg"].T @ g
        grads[f"b{i}"] = g.sum(axis=0)
        if i > 0:
            l = depth - 1 - i
            back = csr_matmul(plan.block(l).T.tocsr(), g @ params.w_neigh[i].T)
            self_part = g @ params.w_self[i].T
            pos = rec["pos"]
            ok = pos >= 0
            np.add.at(back, pos[ok], self_part[ok])
            g = back
    return grads
