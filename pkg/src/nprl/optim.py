"""First-order optimizers operating on the ``grad`` slots of leaf tensors."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, GraphError
from .tensor import Tensor

KINDS = ("sgd-momentum", "rmsprop", "adam")


@dataclass
class OptimizerState:
    kind: str
    lr: float
    momentum: float = 0.0
    alpha: float = 0.99
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    step: int = 0
    buffers: dict[str, list[np.ndarray]] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown optimizer {self.kind!r}; expected one of {KINDS}")
        if not self.lr > 0:
            raise ConfigError(f"learning rate must be positive, got {self.lr}")


def make_optimizer(kind: str, lr: float, **kwargs) -> OptimizerState:
    return OptimizerState(kind=kind, lr=lr, **kwargs)


def _buffers(state: OptimizerState, name: str, params: list[Tensor]) -> list[np.ndarray]:
    bufs = state.buffers.get(name)
    if bufs is None:
        bufs = [np.zeros_like(p.data) for p in params]
        state.buffers[name] = bufs
    elif len(bufs) != len(params) or any(b.shape != p.shape for b, p in zip(bufs, params)):
        raise ConfigError("optimizer buffers do not match the parameter shapes")
    return bufs


def optimizer_step(params: list[Tensor], state: OptimizerState) -> None:
    """Apply one update in place and advance ``state.step``."""
    for p in params:
        if p.grad is None:
            raise GraphError(f"parameter {p.name or p.shape} has no gradient; run backward first")
    lr = state.lr
    if state.kind == "sgd-momentum":
        if state.momentum:
            vel = _buffers(state, "velocity", params)
            for p, v in zip(params, vel):
                v *= state.momentum
                v += p.grad
                p.data -= lr * v
        else:
            for p in params:
                p.data -= lr * p.grad
    elif state.kind == "rmsprop":
        sq = _buffers(state, "square_avg", params)
        a = state.alpha
        for p, s in zip(params, sq):
            s *= a
            s += (1 - a) * p.grad * p.grad
            p.data -= lr * p.grad / (np.sqrt(s) + state.eps)
    else:
        m1 = _buffers(state, "exp_avg", params)
        m2 = _buffers(state, "exp_avg_sq", params)
        b1, b2 = state.betas
        t = state.step + 1
        c1 = 1 - b1**t
        c2 = 1 - b2**t
        for p, m, v in zip(params, m1, m2):
            m *= b1
            m += (1 - b1) * p.grad
            v *= b2
            v += (1 - b2) * p.grad * p.grad
            p.data -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    state.step += 1


def clip_grad_norm(params: list[Tensor], max_norm: float) -> float:
    """Scale gradients so their global L2 norm is at most ``max_norm``; returns the norm before."""
    total = float(np.sqrt(sum(float((p.grad.astype(np.float64) ** 2).sum()) for p in params)))
    if total > max_norm:
        scale = max_norm / (total + 1e-12)
        for p in params:
            p.grad *= scale
    return total
