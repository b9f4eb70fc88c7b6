"""MLP backbone plus a two-layer projection head with hand-written backprop.

The backbone is a stack of ``Linear -> ReLU`` layers; its final activation is
the representation used for linear evaluation. The projection head computes
``W2 @ relu(W1 @ r)`` (no biases) and the result is L2-normalized.

Weights are stored ``(out, in)`` and applied to row-major batches as
``x @ W.T + b``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .numerics import l2_normalize, make_rng, normalize_backward


@dataclass
class EncoderParams:
    layers: list[tuple[np.ndarray, np.ndarray]]
    proj1: np.ndarray  # h x h
    proj2: np.ndarray  # d x h

    def __post_init__(self):
        prev = None
        for idx, (w, b) in enumerate(self.layers):
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise ValueError(f"backbone layer {idx} has inconsistent shapes")
            if prev is not None and w.shape[1] != prev:
                raise ValueError(f"backbone layer {idx} expects {w.shape[1]} inputs, got {prev}")
            prev = w.shape[0]
        if not self.layers:
            raise ValueError("backbone needs at least one layer")
        h = self.layers[-1][0].shape[0]
        if self.proj1.shape != (h, h):
            raise ValueError(f"proj1 must be {h}x{h}, got {self.proj1.shape}")
        if self.proj2.ndim != 2 or self.proj2.shape[1] != h:
            raise ValueError(f"proj2 must be d x {h}, got {self.proj2.shape}")

    @property
    def input_dim(self) -> int:
        return self.layers[0][0].shape[1]

    @property
    def repr_dim(self) -> int:
        return self.layers[-1][0].shape[0]

    @property
    def embed_dim(self) -> int:
        return self.proj2.shape[0]

    def tensors(self) -> dict[str, np.ndarray]:
        """Flat name -> array view, in a fixed order."""
        out = {}
        for idx, (w, b) in enumerate(self.layers):
            out[f"backbone.{idx}.weight"] = w
            out[f"backbone.{idx}.bias"] = b
        out["proj.w1"] = self.proj1
        out["proj.w2"] = self.proj2
        return out

    @classmethod
    def from_tensors(cls, tensors: dict[str, np.ndarray]) -> "EncoderParams":
        layers = []
        idx = 0
        while f"backbone.{idx}.weight" in tensors:
            layers.append((np.asarray(tensors[f"backbone.{idx}.weight"], dtype=np.float64),
                           np.asarray(tensors[f"backbone.{idx}.bias"], dtype=np.float64)))
            idx += 1
        return cls(layers, np.asarray(tensors["proj.w1"], dtype=np.float64),
                   np.asarray(tensors["proj.w2"], dtype=np.float64))

    def copy(self) -> "EncoderParams":
        return EncoderParams.from_tensors({k: v.copy() for k, v in self.tensors().items()})


@dataclass
class EncoderOutput:
    backbone_repr: np.ndarray
    projected: np.ndarray
    # activations kept for the backward pass
    cache: dict = field(default_factory=dict, repr=False)


def init_encoder(input_dim: int, hidden: int = 64, depth: int = 2, embed_dim: int = 32,
                 seed: int = 0) -> EncoderParams:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialization."""
    rng = make_rng(seed)

    def uniform(shape, fan_in):
        bound = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=shape)

    layers = []
    fan_in = input_dim
    for _ in range(depth):
        layers.append((uniform((hidden, fan_in), fan_in), uniform((hidden,), fan_in)))
        fan_in = hidden
    return EncoderParams(layers, uniform((hidden, hidden), hidden), uniform((embed_dim, hidden), hidden))


def backbone(params: EncoderParams, features: np.ndarray) -> np.ndarray:
    """Representation only; the projection head is skipped."""
    x = np.asarray(features, dtype=np.float64)
    if x.shape[-1] != params.input_dim:
        raise ValueError(f"feature dimension {x.shape[-1]} != encoder input {params.input_dim}")
    for w, b in params.layers:
        x = np.maximum(x @ w.T + b, 0.0)
    return x


def encode(params: EncoderParams, features) -> EncoderOutput:
    """Forward pass for a single vector or a batch (rows)."""
    x = np.asarray(features, dtype=np.float64)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if x.shape[1] != params.input_dim:
        raise ValueError(f"feature dimension {x.shape[1]} != encoder input {params.input_dim}")
    pre = []
    act = x
    acts = [x]
    for w, b in params.layers:
        p = act @ w.T + b
        pre.append(p)
        act = np.maximum(p, 0.0)
        acts.append(act)
    h1 = act @ params.proj1.T
    a1 = np.maximum(h1, 0.0)
    raw = a1 @ params.proj2.T
    projected = l2_normalize(raw)
    cache = {"acts": acts, "pre": pre, "h1": h1, "a1": a1, "raw": raw}
    if single:
        return EncoderOutput(act[0], projected[0], cache)
    return EncoderOutput(act, projected, cache)


def encoder_backward(params: EncoderParams, features, grad_projected,
                     grad_repr=None, output: EncoderOutput | None = None):
    """Gradients of a scalar loss with respect to every parameter and the input.

    ``grad_projected`` is the upstream gradient on the normalized embedding;
    ``grad_repr`` optionally adds a gradient arriving directly at the backbone
    representation. Returns ``(EncoderParams of gradients, input gradient)``.
    """
    x = np.asarray(features, dtype=np.float64)
    single = x.ndim == 1
    if output is None:
        output = encode(params, x)
    c = output.cache
    g = np.atleast_2d(np.asarray(grad_projected, dtype=np.float64))
    if g.shape[1] != params.embed_dim:
        raise ValueError("upstream gradient has wrong dimension")

    g_raw = normalize_backward(c["raw"], g)
    g_w2 = g_raw.T @ c["a1"]
    g_a1 = g_raw @ params.proj2
    g_h1 = g_a1 * (c["h1"] > 0)
    g_w1 = g_h1.T @ c["acts"][-1]
    g_act = g_h1 @ params.proj1
    if grad_repr is not None:
        g_act = g_act + np.atleast_2d(grad_repr)

    layer_grads = []
    for idx in range(len(params.layers) - 1, -1, -1):
        w, _ = params.layers[idx]
        g_pre = g_act * (c["pre"][idx] > 0)
        layer_grads.append((g_pre.T @ c["acts"][idx], g_pre.sum(axis=0)))
        g_act = g_pre @ w
    layer_grads.reverse()
    grads = EncoderParams(layer_grads, g_w1, g_w2)
    return grads, (g_act[0] if single else g_act)
