"""AdamW with decoupled weight decay, warmup schedules and global-norm clipping."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


class DivergenceError(RuntimeError):
    pass


@dataclass
class OptimizerState:
    lr: float = 1e-3
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    # names exempt from decay in addition to biases
    no_decay: frozenset = frozenset()

    def decays(self, name: str) -> bool:
        return not name.endswith("bias") and name not in self.no_decay


def adamw_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
               state: OptimizerState) -> dict[str, np.ndarray]:
    """One AdamW update. Returns new parameter arrays and advances ``state``.

    Parameters without an entry in ``grads`` are only decayed.
    """
    for name, g in grads.items():
        if name not in params or g.shape != params[name].shape:
            raise ValueError(f"gradient {name!r} does not match any parameter")
        if not np.all(np.isfinite(g)):
            raise DivergenceError(f"diverged: non-finite gradient in {name!r}")
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    out = {}
    for name, p in params.items():
        new = p * (1.0 - state.lr * state.weight_decay) if state.decays(name) else p.copy()
        g = grads.get(name)
        if g is not None:
            m = state.m.get(name, np.zeros_like(p))
            v = state.v.get(name, np.zeros_like(p))
            m = state.beta1 * m + (1.0 - state.beta1) * g
            v = state.beta2 * v + (1.0 - state.beta2) * g * g
            state.m[name], state.v[name] = m, v
            new = new - state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        out[name] = new
    return out


def lr_schedule(step: int, total_steps: int, base_lr: float, warmup_fraction: float = 0.05,
                kind: str = "cosine") -> float:
    """Linear warmup from 0 to ``base_lr``, then linear or cosine decay to 0."""
    if kind not in ("linear", "cosine"):
        raise ValueError(f"unknown scheduler {kind!r}")
    warm = warmup_fraction * total_steps
    if step < warm:
        return base_lr * step / warm
    span = total_steps - warm
    if span <= 0:
        return base_lr
    progress = min((step - warm) / span, 1.0)
    if kind == "linear":
        return base_lr * (1.0 - progress)
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * progress))


def global_norm(grads: dict[str, np.ndarray]) -> float:
    return math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))


def clip_gradients(grads: dict[str, np.ndarray], max_norm: float) -> dict[str, np.ndarray]:
    """Rescale all gradients together iff their global L2 norm exceeds ``max_norm``."""
    if max_norm <= 0:
        raise ValueError("max_norm must be positive")
    norm = global_norm(grads)
    if norm <= max_norm:
        return dict(grads)
    scale = max_norm / norm
    return {k: g * scale for k, g in grads.items()}
