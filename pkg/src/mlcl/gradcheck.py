"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import losses as L
from .encoder import EncoderParams, encode, encoder_backward, init_encoder
from .numerics import l2_normalize, make_rng

# Relative error is taken against max(|analytic|, |numeric|, REL_FLOOR).
# Central differences at eps=1e-5 carry ~1e-10 absolute error, so entries
# much smaller than the floor would otherwise report noise as failure.
REL_FLOOR = 1e-4

LOSSES = ("bce", "focal", "asymmetric", "base", "msc-base", "msc-bqueue", "msc-bqproto",
          "msc", "jscl", "con", "mulcon")


@dataclass
class GradCheckResult:
    max_rel_error: float
    location: tuple  # (tensor name, index)
    n_checked: int

    def passed(self, tol: float = 1e-5) -> bool:
        return self.max_rel_error < tol


def finite_difference_check(fn: Callable[[dict], tuple], params: dict[str, np.ndarray],
                            grads: dict[str, np.ndarray], eps: float = 1e-5) -> GradCheckResult:
    """Compare ``grads`` with central differences of ``fn(params) -> value``."""
    if not 1e-7 <= eps <= 1e-3:
        raise ValueError("eps must lie in [1e-7, 1e-3]")
    worst, where, count = 0.0, None, 0
    for name, base in params.items():
        for idx in np.ndindex(base.shape):
            orig = base[idx]
            base[idx] = orig + eps
            up = fn(params)
            base[idx] = orig - eps
            down = fn(params)
            base[idx] = orig
            numeric = (up - down) / (2 * eps)
            analytic = grads[name][idx]
            err = abs(analytic - numeric) / max(abs(analytic), abs(numeric), REL_FLOOR)
            count += 1
            if err > worst or where is None:
                worst, where = err, (name, idx)
    return GradCheckResult(float(worst), where, count)


def _labels(rng, n, n_labels, mono=False):
    y = np.zeros((n, n_labels))
    if mono:
        y[np.arange(n), rng.integers(0, n_labels, n)] = 1
        return y
    y = (rng.random((n, n_labels)) < 0.35).astype(float)
    empty = y.sum(axis=1) == 0
    y[np.flatnonzero(empty), rng.integers(0, n_labels, empty.sum())] = 1
    return y


def _probs(rng, shape, margin):
    # keep clear of the asymmetric-loss kink at p = margin
    p = rng.uniform(0.02, 0.98, shape)
    near = np.abs(p - margin) < 1e-3
    return np.where(near, p + 0.01, p)


def make_instance(selector: str, seed: int = 0, batch: int = 8, n_labels: int = 6,
                  dim: int = 16, queue: int = 16, tau: float = 0.1, beta: float = 0.1):
    """Random instance for ``selector``: returns ``(value_fn, params, grads)``."""
    rng = make_rng(seed)
    if selector in ("bce", "focal", "asymmetric"):
        y = _labels(rng, batch, n_labels)
        params = {"probs": _probs(rng, (batch, n_labels), 0.3)}
        fn = {
            "bce": lambda p: L.bce_loss(p["probs"], y),
            "focal": lambda p: L.focal_loss(p["probs"], y, 2.0),
            "asymmetric": lambda p: L.asymmetric_loss(p["probs"], y, 0.0, 3.0, 0.3),
        }[selector]
    elif selector == "mulcon":
        mask = rng.random((batch, n_labels)) < 0.5
        mask[np.arange(batch), rng.integers(0, n_labels, batch)] = True
        params = {"embeddings": l2_normalize(rng.standard_normal((batch, n_labels, dim)))}
        fn = lambda p: L.mulcon_loss(p["embeddings"], mask, tau)
    elif selector in ("base", "jscl", "con") or selector.startswith("msc"):
        y = _labels(rng, batch, n_labels)
        params = {"batch": l2_normalize(rng.standard_normal((batch, dim)))}
        qk = l2_normalize(rng.standard_normal((queue, dim)))
        qy = _labels(rng, queue, n_labels)
        protos = l2_normalize(rng.standard_normal((n_labels, dim)))
        if selector == "base":
            fn = lambda p: L.base_contrastive_loss(L.ContrastiveContext(p["batch"], y), tau)
        elif selector == "jscl":
            fn = lambda p: L.jscl_loss(L.ContrastiveContext(p["batch"], y), tau)
        elif selector == "con":
            fn = lambda p: L.con_loss(L.ContrastiveContext(p["batch"], y), tau)
        else:
            rung = "msc" if selector == "msc" else selector.split("-", 1)[1]
            cfg = L.LossConfig(temperature=tau, beta=beta, **L.LADDER[rung])
            if cfg.use_prototypes:
                params["prototypes"] = protos

            def fn(p):
                ctx = L.ContrastiveContext(p["batch"], y, qk, qy, p.get("prototypes"))
                return L.msc_loss(ctx, cfg)
    elif selector == "encoder":
        enc = init_encoder(10, hidden=12, depth=2, embed_dim=6, seed=seed)
        x = rng.standard_normal((5, 10))
        up = rng.standard_normal((5, 6))
        names = list(enc.tensors())
        params = {k: v.copy() for k, v in enc.tensors().items()}
        params["input"] = x.copy()

        def fn(p):
            ep = EncoderParams.from_tensors({k: p[k] for k in names})
            out = encode(ep, p["input"])
            g, gx = encoder_backward(ep, p["input"], up, output=out)
            grads = dict(g.tensors())
            grads["input"] = gx
            return L.LossOutput(float(np.sum(out.projected * up)), grads)
    else:
        raise ValueError(f"unknown loss selector {selector!r}")
    grads = {k: v.copy() for k, v in fn(params).grads.items()}
    return (lambda p: fn(p).value), params, grads


def grad_check(selector: str, seed: int = 0, eps: float = 1e-5, **instance) -> GradCheckResult:
    """Worst relative error between analytic and numeric gradients for one instance."""
    value_fn, params, grads = make_instance(selector, seed, **instance)
    return finite_difference_check(value_fn, params, grads, eps)
