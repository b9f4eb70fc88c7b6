"""Deterministic dense primitives shared by every other module.

All arrays are float64. Reductions run in index order so results do not
depend on how callers slice the work.
"""

from __future__ import annotations

import numpy as np

NORM_EPS = 1e-20


def logsumexp(values) -> float:
    """Stable ``log(sum(exp(values)))`` via the max-shift trick."""
    v = np.asarray(values, dtype=np.float64).ravel()
    if v.size == 0:
        raise ValueError("empty reduction")
    if not np.all(np.isfinite(v)):
        raise ValueError("non-finite input to logsumexp")
    m = v.max()
    return float(m + np.log(np.sum(np.exp(v - m))))


def masked_logsumexp_rows(logits: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Row-wise ``log(sum_k w_k exp(x_k))`` over entries with ``w_k > 0``.

    Rows with no positive weight return ``-inf``.
    """
    active = weights > 0
    shifted = np.where(active, logits, -np.inf)
    m = shifted.max(axis=1, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    total = np.sum(np.where(active, weights * np.exp(logits - m), 0.0), axis=1)
    with np.errstate(divide="ignore"):
        return np.log(total) + m[:, 0]


def l2_normalize(v, eps: float = NORM_EPS) -> np.ndarray:
    """Scale ``v`` (a vector, or each row of a matrix) to unit length."""
    v = np.asarray(v, dtype=np.float64)
    norms = np.linalg.norm(v, axis=-1, keepdims=True)
    if np.any(norms <= eps):
        raise ValueError("degenerate norm")
    return v / norms


def normalize_backward(v: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    """Pull a gradient on ``v / |v|`` back onto ``v`` (row-wise)."""
    norms = np.linalg.norm(v, axis=-1, keepdims=True)
    u = v / norms
    radial = np.sum(grad_out * u, axis=-1, keepdims=True)
    return (grad_out - radial * u) / norms


def cosine_sim_matrix(a, b) -> np.ndarray:
    """Inner products between row-normalized embeddings ``a`` (n×d) and ``b`` (m×d)."""
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    if a.shape[1] != b.shape[1]:
        raise ValueError(f"dimension mismatch: {a.shape[1]} vs {b.shape[1]}")
    return a @ b.T


def make_rng(seed: int) -> np.random.Generator:
    """Seeded generator; identical seeds give identical streams."""
    return np.random.Generator(np.random.PCG64(int(seed) & 0xFFFFFFFFFFFFFFFF))
