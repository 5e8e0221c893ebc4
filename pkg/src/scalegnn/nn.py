"""Hand-rolled dense numerics: MLP forward/backward, losses, AdamW, gradcheck.

Everything is plain numpy. Arrays default to float64 because the gradient
checks need double precision; large training runs can pass dtype=float32 at
init. Backward passes are written out by hand and verified against central
finite differences, so there is no autodiff tape to trust.

Weight convention: x @ W + b with W of shape (fan_in, fan_out). Hidden
layers run linear -> batchnorm (optional) -> activation -> dropout; the
last layer is a bare linear producing logits.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from scalegnn.rng import make_rng

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


@dataclass
class MLPConfig:
    layer_dims: list  # [input, hidden..., output]
    dropout_rate: float = 0.0
    use_batchnorm: bool = False
    activation: str = "relu"  # "relu" | "leaky_relu"
    leaky_slope: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if len(self.layer_dims) < 2:
            raise ValueError("need at least input and output dims")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValueError("dropout_rate must be in [0, 1)")
        if self.activation not in ("relu", "leaky_relu"):
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def num_layers(self) -> int:
        return len(self.layer_dims) - 1


@dataclass
class MLPParams:
    weights: list
    biases: list
    bn_scale: list = field(default_factory=list)
    bn_shift: list = field(default_factory=list)
    bn_running_mean: list = field(default_factory=list)
    bn_running_var: list = field(default_factory=list)

    def trainable(self) -> dict:
        """Ordered name -> array view; Adam mutates these in place."""
        out = {}
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            out[f"W{i}"] = w
            out[f"b{i}"] = b
        for i, (g, s) in enumerate(zip(self.bn_scale, self.bn_shift)):
            out[f"bn_scale{i}"] = g
            out[f"bn_shift{i}"] = s
        return out

    def copy(self) -> "MLPParams":
        return MLPParams(
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            [g.copy() for g in self.bn_scale],
            [s.copy() for s in self.bn_shift],
            [m.copy() for m in self.bn_running_mean],
            [v.copy() for v in self.bn_running_var],
        )


@dataclass
class ForwardTrace:
    mode: str
    inputs: list  # input to each linear layer
    pre_bn: list  # linear output per layer (None where no BN)
    bn_xhat: list
    bn_inv_std: list
    pre_act: list  # activation input per hidden layer
    dropout_masks: list  # scaled masks, None where not applied
    consumed: bool = False


def kaiming_uniform(rng: np.random.Generator, fan_in: int, fan_out: int, dtype) -> np.ndarray:
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=(fan_in, fan_out)).astype(dtype)


def init_mlp(config: MLPConfig, dtype=np.float64) -> MLPParams:
    rng = make_rng(config.seed)
    dims = config.layer_dims
    weights, biases = [], []
    for l in range(config.num_layers):
        weights.append(kaiming_uniform(rng, dims[l], dims[l + 1], dtype))
        biases.append(np.zeros(dims[l + 1], dtype=dtype))
    params = MLPParams(weights, biases)
    if config.use_batchnorm:
        for l in range(config.num_layers - 1):  # hidden layers only
            d = dims[l + 1]
            params.bn_scale.append(np.ones(d, dtype=dtype))
            params.bn_shift.append(np.zeros(d, dtype=dtype))
            params.bn_running_mean.append(np.zeros(d, dtype=dtype))
            params.bn_running_var.append(np.ones(d, dtype=dtype))
    return params


def _activate(z: np.ndarray, config: MLPConfig) -> np.ndarray:
    if config.activation == "relu":
        return np.maximum(z, 0.0)
    return np.where(z > 0, z, config.leaky_slope * z)


def _activate_grad(z: np.ndarray, config: MLPConfig) -> np.ndarray:
    if config.activation == "relu":
        return (z > 0).astype(z.dtype)
    return np.where(z > 0, 1.0, config.leaky_slope).astype(z.dtype)


def mlp_forward(params: MLPParams, config: MLPConfig, x: np.ndarray, mode: str = "train",
                rng: np.random.Generator | None = None, update_running: bool = True):
    """Run the MLP. Returns (logits, trace) in train mode, (logits, None) in eval.

    Dropout in train mode needs an explicit rng; the caller owns the stream
    so repeated forwards draw fresh masks.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be train or eval, got {mode!r}")
    x = np.asarray(x)
    if x.shape[1] != config.layer_dims[0]:
        raise ValueError(f"input has {x.shape[1]} features, config expects {config.layer_dims[0]}")
    train = mode == "train"
    if train and config.dropout_rate > 0 and rng is None:
        raise ValueError("train-mode dropout needs an rng")

    trace = ForwardTrace(mode, [], [], [], [], [], []) if train else None
    h = x
    n_layers = config.num_layers
    for l in range(n_layers):
        if train:
            trace.inputs.append(h)
        z = h @ params.weights[l] + params.biases[l]
        last = l == n_layers - 1
        if last:
            h = z
            break
        if config.use_batchnorm:
            if train:
                mean = z.mean(axis=0)
                var = z.var(axis=0)  # biased, matches the backward formula
                if update_running:
                    params.bn_running_mean[l] *= 1.0 - BN_MOMENTUM
                    params.bn_running_mean[l] += BN_MOMENTUM * mean
                    params.bn_running_var[l] *= 1.0 - BN_MOMENTUM
                    params.bn_running_var[l] += BN_MOMENTUM * var
            else:
                mean = params.bn_running_mean[l]
                var = params.bn_running_var[l]
            inv_std = 1.0 / np.sqrt(var + BN_EPS)
            xhat = (z - mean) * inv_std
            a_in = xhat * params.bn_scale[l] + params.bn_shift[l]
            if train:
                trace.pre_bn.append(z)
                trace.bn_xhat.append(xhat)
                trace.bn_inv_std.append(inv_std)
        else:
            a_in = z
            if train:
                trace.pre_bn.append(None)
                trace.bn_xhat.append(None)
                trace.bn_inv_std.append(None)
        if train:
            trace.pre_act.append(a_in)
        h = _activate(a_in, config)
        if train and config.dropout_rate > 0:
            keep = 1.0 - config.dropout_rate
            mask = (rng.random(h.shape) < keep).astype(h.dtype) / keep
            h = h * mask
            trace.dropout_masks.append(mask)
        elif train:
            trace.dropout_masks.append(None)
    return h, trace


def mlp_backward(params: MLPParams, config: MLPConfig, trace: ForwardTrace,
                 grad_logits: np.ndarray):
    """Reverse-mode gradients. Returns (grads dict keyed like trainable(), grad_input)."""
    if trace is None or trace.mode != "train":
        raise ValueError("backward needs a train-mode trace")
    if trace.consumed:
        raise ValueError("trace already consumed by a previous backward")
    if len(trace.inputs) != config.num_layers:
        raise ValueError("trace does not match config")
    trace.consumed = True

    grads = {k: np.zeros_like(v) for k, v in params.trainable().items()}
    n_layers = config.num_layers
    g = np.asarray(grad_logits)
    for l in range(n_layers - 1, -1, -1):
        if l < n_layers - 1:
            if trace.dropout_masks[l] is not None:
                g = g * trace.dropout_masks[l]
            g = g * _activate_grad(trace.pre_act[l], config)
            if config.use_batchnorm:
                xhat = trace.bn_xhat[l]
                inv_std = trace.bn_inv_std[l]
                grads[f"bn_scale{l}"] = (g * xhat).sum(axis=0)
                grads[f"bn_shift{l}"] = g.sum(axis=0)
                dxhat = g * params.bn_scale[l]
                n = xhat.shape[0]
                g = (inv_std / n) * (
                    n * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0)
                )
        grads[f"W{l}"] = trace.inputs[l].T @ g
        grads[f"b{l}"] = g.sum(axis=0)
        g = g @ params.weights[l].T
    return grads, g


def softmax_row(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    shifted = v - v.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax_row(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    shifted = v - v.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def one_hot(labels: np.ndarray, num_classes: int, dtype=np.float64) -> np.ndarray:
    labels = np.asarray(labels, dtype=np.int64)
    out = np.zeros((labels.shape[0], num_classes), dtype=dtype)
    out[np.arange(labels.shape[0]), labels] = 1.0
    return out


def cross_entropy(logits: np.ndarray, labels: np.ndarray):
    """Mean NLL over the batch. Returns (loss, grad_logits)."""
    logits = np.asarray(logits)
    labels = np.asarray(labels, dtype=np.int64)
    if logits.shape[0] == 0:
        raise ValueError("cross_entropy on empty batch")
    if logits.shape[0] != labels.shape[0]:
        raise ValueError("logits/labels batch size mismatch")
    logp = log_softmax_row(logits)
    n = logits.shape[0]
    loss = -logp[np.arange(n), labels].mean()
    grad = softmax_row(logits)
    grad[np.arange(n), labels] -= 1.0
    grad /= n
    return float(loss), grad.astype(logits.dtype)


def predict(logits: np.ndarray) -> np.ndarray:
    # np.argmax returns the first maximum, i.e. the lowest class index on ties
    return np.argmax(logits, axis=1)


def accuracy(logits: np.ndarray, labels: np.ndarray) -> float:
    labels = np.asarray(labels, dtype=np.int64)
    if labels.size == 0:
        return float("nan")
    return float((predict(logits) == labels).mean())


@dataclass
class AdamState:
    learning_rate: float
    weight_decay: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(state: AdamState, params: dict, grads: dict) -> None:
    """One AdamW step, in place. Weight decay is decoupled: params are scaled
    by (1 - lr*wd) before the moment update is applied."""
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"grad shape mismatch for {name}")
        if name not in state.m:
            state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        if state.weight_decay:
            p *= 1.0 - state.learning_rate * state.weight_decay
        m, v = state.m[name], state.v[name]
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        m_hat = m / (1 - b1 ** t)
        v_hat = v / (1 - b2 ** t)
        p -= state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon)


def gradcheck(f, params: dict, tolerance: float = 1e-5, h: float = 1e-5) -> dict:
    """Compare analytic gradients from f against central finite differences.

    f(params) must return (scalar loss, grads dict) and be deterministic
    (no dropout, or a frozen mask). Relative error per entry is
    |analytic - numeric| / max(1, |analytic|, |numeric|).
    """
    _, analytic = f(params)
    max_err = 0.0
    per_param = {}
    worst = None
    for name, p in params.items():
        a = analytic[name]
        err_here = 0.0
        flat = p.reshape(-1)
        a_flat = np.asarray(a).reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            lo_plus, _ = f(params)
            flat[i] = orig - h
            lo_minus, _ = f(params)
            flat[i] = orig
            numeric = (lo_plus - lo_minus) / (2 * h)
            err = abs(a_flat[i] - numeric) / max(1.0, abs(a_flat[i]), abs(numeric))
            if err > err_here:
                err_here = err
            if err > max_err:
                max_err = err
                worst = (name, i)
        per_param[name] = err_here
    return {
        "max_rel_err": max_err,
        "per_param": per_param,
        "worst": worst,
        "passed": max_err < tolerance,
        "tolerance": tolerance,
    }
