"""Trainable classifier over frozen embeddings.

A linear map (K x d weights plus bias) with an optional residual bottleneck
adapter in front of it. All parameters and training math are double
precision; embeddings arrive as float32 and are upcast at the batch
boundary. The optimizer is SGD with momentum and decoupled weight decay.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, ParameterError, TrainingDivergenceError

Grads = dict[str, np.ndarray]


@dataclass
class Adapter:
    """Residual bottleneck (d -> r -> d): a = z + relu(z W_down^T + b_down) W_up^T + b_up."""

    down_w: np.ndarray  # (r, d)
    down_b: np.ndarray  # (r,)
    up_w: np.ndarray  # (d, r)
    up_b: np.ndarray  # (d,)

    @property
    def r(self) -> int:
        return int(self.down_w.shape[0])


@dataclass
class ClassifierHead:
    W: np.ndarray  # (K, d)
    b: np.ndarray  # (K,)
    adapter: Adapter | None = None

    @property
    def K(self) -> int:
        return int(self.W.shape[0])

    @property
    def d(self) -> int:
        return int(self.W.shape[1])


def init_head(K: int, d: int, adapter_dim: int | None = None, seed=0) -> ClassifierHead:
    """Zero-initialized head; first-step predictions are exactly uniform.

    The adapter's down-projection is seeded Gaussian (the up-projection starts
    at zero so the adapter begins as the identity but still receives gradient).
    ``seed`` may be an int or a numpy SeedSequence.
    """
    if K < 1 or d < 1:
        raise ParameterError("K and d must be positive")
    adapter = None
    if adapter_dim is not None:
        if adapter_dim < 1:
            raise ParameterError("adapter_dim must be positive")
        rng = np.random.default_rng(seed)
        adapter = Adapter(
            down_w=rng.standard_normal((adapter_dim, d)) / np.sqrt(d),
            down_b=np.zeros(adapter_dim),
            up_w=np.zeros((d, adapter_dim)),
            up_b=np.zeros(d),
        )
    return ClassifierHead(W=np.zeros((K, d)), b=np.zeros(K), adapter=adapter)


def parameters(head: ClassifierHead) -> dict[str, np.ndarray]:
    """Named parameter arrays in a fixed order (shared by optimizer and I/O)."""
    params = {"W": head.W, "b": head.b}
    if head.adapter is not None:
        params.update(
            adapter_down_w=head.adapter.down_w,
            adapter_down_b=head.adapter.down_b,
            adapter_up_w=head.adapter.up_w,
            adapter_up_b=head.adapter.up_b,
        )
    return params


def zero_grads(head: ClassifierHead) -> Grads:
    return {name: np.zeros_like(arr) for name, arr in parameters(head).items()}


def add_grads(a: Grads, b: Grads) -> Grads:
    if a.keys() != b.keys():
        raise ContractError("gradient structures do not match")
    return {name: a[name] + b[name] for name in a}


def scale_grads(g: Grads, c: float) -> Grads:
    return {name: c * arr for name, arr in g.items()}


def _as_batch(z: np.ndarray, d: int) -> tuple[np.ndarray, bool]:
    z = np.asarray(z, dtype=np.float64)
    single = z.ndim == 1
    if single:
        z = z[None, :]
    if z.ndim != 2 or z.shape[1] != d:
        raise ContractError(f"expected embeddings of dimension {d}, got shape {z.shape}")
    return z, single


def forward(head: ClassifierHead, z: np.ndarray) -> np.ndarray:
    """Logits W a + b where a is the (optionally adapted) embedding."""
    logits, _ = forward_cached(head, z)
    return logits


def forward_cached(head: ClassifierHead, z: np.ndarray):
    """Forward pass keeping the intermediates needed for backward()."""
    zb, single = _as_batch(z, head.d)
    cache: dict[str, np.ndarray] = {"z": zb}
    a = zb
    if head.adapter is not None:
        pre = zb @ head.adapter.down_w.T + head.adapter.down_b
        hidden = np.maximum(pre, 0.0)
        a = zb + hidden @ head.adapter.up_w.T + head.adapter.up_b
        cache["pre"] = pre
        cache["hidden"] = hidden
    cache["a"] = a
    logits = a @ head.W.T + head.b
    return (logits[0] if single else logits), cache


def backward(head: ClassifierHead, cache: dict[str, np.ndarray], dlogits: np.ndarray) -> Grads:
    """Parameter gradients given d(loss)/d(logits) for the cached batch."""
    dlogits = np.asarray(dlogits, dtype=np.float64)
    if dlogits.ndim == 1:
        dlogits = dlogits[None, :]
    a = cache["a"]
    grads: Grads = {"W": dlogits.T @ a, "b": dlogits.sum(axis=0)}
    if head.adapter is not None:
        da = dlogits @ head.W
        hidden = cache["hidden"]
        grads["adapter_up_w"] = da.T @ hidden
        grads["adapter_up_b"] = da.sum(axis=0)
        dhidden = (da @ head.adapter.up_w) * (cache["pre"] > 0)
        grads["adapter_down_w"] = dhidden.T @ cache["z"]
        grads["adapter_down_b"] = dhidden.sum(axis=0)
    return grads


def softmax(logits: np.ndarray) -> np.ndarray:
    """Max-shifted softmax; rows sum to 1, stable for extreme logits."""
    x = np.asarray(logits, dtype=np.float64)
    if not np.isfinite(x).all():
        raise ContractError("softmax requires finite logits")
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits: np.ndarray) -> np.ndarray:
    x = np.asarray(logits, dtype=np.float64)
    if not np.isfinite(x).all():
        raise ContractError("log_softmax requires finite logits")
    shifted = x - x.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def msp(probs: np.ndarray):
    """Maximum softmax probability; rows must be valid distributions."""
    p = np.asarray(probs, dtype=np.float64)
    if p.ndim not in (1, 2):
        raise ContractError("msp expects a probability vector or a batch of them")
    if (p < 0).any() or np.abs(p.sum(axis=-1) - 1.0).max() > 1e-6:
        raise ContractError("msp requires a valid probability vector")
    top = p.max(axis=-1)
    return float(top) if p.ndim == 1 else top


@dataclass
class OptimizerState:
    """SGD with momentum and decoupled weight decay."""

    learning_rate: float
    momentum: float = 0.9
    weight_decay: float = 0.0
    step: int = 0
    velocity: Grads = field(default_factory=dict)

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ParameterError("learning_rate must be positive")
        if not 0 <= self.momentum < 1:
            raise ParameterError("momentum must lie in [0, 1)")
        if self.weight_decay < 0:
            raise ParameterError("weight_decay must be nonnegative")


def init_optimizer(
    head: ClassifierHead, learning_rate: float, momentum: float = 0.9, weight_decay: float = 0.0
) -> OptimizerState:
    return OptimizerState(
        learning_rate=learning_rate,
        momentum=momentum,
        weight_decay=weight_decay,
        velocity=zero_grads(head),
    )


def apply_gradients(head: ClassifierHead, opt: OptimizerState, grads: Grads):
    """One in-place update: v <- mu v + g; p <- p - lr v - lr wd p."""
    params = parameters(head)
    if grads.keys() != params.keys() or opt.velocity.keys() != params.keys():
        raise ContractError("gradient/velocity structure does not match parameters")
    for name, g in grads.items():
        if g.shape != params[name].shape:
            raise ContractError(f"gradient shape mismatch for {name}")
        if not np.isfinite(g).all():
            raise TrainingDivergenceError(opt.step, message=f"non-finite gradient in {name}")
    with np.errstate(over="ignore", invalid="ignore"):
        for name, p in params.items():
            v = opt.velocity[name]
            v *= opt.momentum
            v += grads[name]
            p -= opt.learning_rate * v + opt.learning_rate * opt.weight_decay * p
            if not np.isfinite(p).all():
                raise TrainingDivergenceError(opt.step, message=f"non-finite parameter {name}")
    opt.step += 1
    return head, opt
