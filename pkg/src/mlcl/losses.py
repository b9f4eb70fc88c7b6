"""Contrastive and probability-based multi-label losses with exact gradients.

Every loss returns a :class:`LossOutput` whose ``grads`` map input names to
arrays shaped like the inputs. Contrastive losses take unit-norm embeddings;
their gradients are with respect to those embeddings (the caller chains
through normalization).

The contrastive losses share one kernel: for anchors ``i`` and candidates
``k`` with logits ``x_ik``, positive weights ``A_ik`` and denominator weights
``G_ik`` (zero means "excluded"),

    loss_i = -sum_k A_ik * (x_ik - log sum_k' G_ik' exp(x_ik'))
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .numerics import masked_logsumexp_rows

PROB_EPS = 1e-12


@dataclass
class LossConfig:
    temperature: float = 0.1
    beta: float = 0.1
    use_queue: bool = True
    use_prototypes: bool = True
    # label-loop attraction weights and beta-weighted repulsion
    balanced: bool = True
    gamma: float = 2.0
    gamma_pos: float = 0.0
    gamma_neg: float = 3.0
    margin: float = 0.3

    def __post_init__(self):
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if not 0.0 < self.beta <= 1.0:
            raise ValueError("beta must lie in (0, 1]")
        if min(self.gamma, self.gamma_pos, self.gamma_neg) < 0:
            raise ValueError("focusing exponents must be non-negative")
        if not 0.0 <= self.margin < 1.0:
            raise ValueError("margin must lie in [0, 1)")


# Rungs of the contrastive ablation ladder, weakest to strongest.
LADDER = {
    "base": dict(use_queue=False, use_prototypes=False, balanced=False),
    "bqueue": dict(use_queue=True, use_prototypes=False, balanced=False),
    "bqproto": dict(use_queue=True, use_prototypes=True, balanced=False),
    "msc": dict(use_queue=True, use_prototypes=True, balanced=True),
}


@dataclass
class LossOutput:
    value: float
    grads: dict[str, np.ndarray] = field(default_factory=dict)


@dataclass
class ContrastiveContext:
    batch: np.ndarray
    batch_labels: np.ndarray
    queue_keys: np.ndarray | None = None
    queue_labels: np.ndarray | None = None
    prototypes: np.ndarray | None = None

    def __post_init__(self):
        self.batch = np.atleast_2d(np.asarray(self.batch, dtype=np.float64))
        self.batch_labels = np.atleast_2d(np.asarray(self.batch_labels, dtype=np.float64))
        if self.batch_labels.shape[0] != self.batch.shape[0]:
            raise ValueError("one label vector per batch embedding required")
        if self.queue_keys is not None:
            self.queue_keys = np.asarray(self.queue_keys, dtype=np.float64).reshape(-1, self.batch.shape[1])
            self.queue_labels = np.asarray(self.queue_labels, dtype=np.float64).reshape(
                -1, self.batch_labels.shape[1])
            if len(self.queue_keys) != len(self.queue_labels):
                raise ValueError("queue keys and labels must pair one-to-one")


# ---------------------------------------------------------------- weights

def jaccard(y_i, y_j) -> float:
    y_i, y_j = np.asarray(y_i) > 0, np.asarray(y_j) > 0
    union = np.sum(y_i | y_j)
    return float(np.sum(y_i & y_j) / union) if union else 0.0


def jaccard_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    inter = a @ b.T
    union = a.sum(1)[:, None] + b.sum(1)[None, :] - inter
    return np.divide(inter, union, out=np.zeros_like(inter), where=union > 0)


def repulsion_weight_g(is_prototype: bool, beta: float) -> float:
    """Denominator weight: prototypes count fully, every other entry by ``beta``."""
    return 1.0 if is_prototype else float(beta)


def attraction_weight_f(y_i, y_l, is_prototype: bool) -> float:
    """Positive-pair weight: 1 for prototypes, ``1 / |y_i ∪ y_l|`` otherwise."""
    if is_prototype:
        return 1.0
    union = np.sum((np.asarray(y_i) > 0) | (np.asarray(y_l) > 0))
    return 1.0 / union


# ---------------------------------------------------------------- kernel

def _weighted_xent(logits, pos_w, den_w):
    """Per-anchor losses and d(sum of losses)/d(logits)."""
    mass = pos_w.sum(axis=1)
    active = mass > 0
    lse = masked_logsumexp_rows(logits, den_w)
    lse = np.where(active, lse, 0.0)
    logp = logits - lse[:, None]
    rows = -np.sum(np.where(pos_w > 0, pos_w * logp, 0.0), axis=1)
    probs = den_w * np.exp(np.where(den_w > 0, logp, -np.inf))
    dlogits = -pos_w + mass[:, None] * probs
    dlogits[~active] = 0.0
    rows[~active] = 0.0
    return rows, dlogits


def _check_pair_batch(z):
    if z.shape[0] < 2:
        raise ValueError("contrastive losses need a batch of at least 2")


# ---------------------------------------------------------------- contrastive

def base_contrastive_loss(ctx: ContrastiveContext, tau: float) -> LossOutput:
    """Jaccard-weighted in-batch SupCon; each anchor normalized by its weight sum."""
    z, y = ctx.batch, ctx.batch_labels
    _check_pair_batch(z)
    b = len(z)
    off = 1.0 - np.eye(b)
    weights = jaccard_matrix(y, y) * off
    norm = weights.sum(axis=1, keepdims=True)
    pos = np.divide(weights, norm, out=np.zeros_like(weights), where=norm > 0)
    rows, dl = _weighted_xent(z @ z.T / tau, pos, off)
    dl /= b * tau
    return LossOutput(float(rows.sum() / b), {"batch": (dl + dl.T) @ z})


def msc_weights(ctx: ContrastiveContext, cfg: LossConfig):
    """Candidate set and weight matrices for the queue/prototype loss family.

    Returns ``(candidates, n_nonproto, pos_w, den_w)``; candidates are the
    batch, then the queue (if used), then the prototypes (if used).
    """
    z, y = ctx.batch, ctx.batch_labels
    b = len(z)
    sizes = y.sum(axis=1)
    if np.any(sizes < 1):
        raise ValueError("every anchor needs at least one positive label")
    cands, cand_y = [z], [y]
    if cfg.use_queue and ctx.queue_keys is not None and len(ctx.queue_keys):
        cands.append(ctx.queue_keys)
        cand_y.append(ctx.queue_labels)
    cands = np.vstack(cands)
    cand_y = np.vstack(cand_y)
    m = len(cands)
    valid = np.ones((b, m))
    valid[np.arange(b), np.arange(b)] = 0.0

    if cfg.use_prototypes:
        if ctx.prototypes is None:
            raise ValueError("prototypes requested but missing from context")
        protos = ctx.prototypes
        if protos.shape[0] != y.shape[1]:
            raise ValueError("need exactly one prototype per label")
    else:
        protos = np.zeros((0, z.shape[1]))

    if cfg.balanced:
        inter = y @ cand_y.T
        union = sizes[:, None] + cand_y.sum(axis=1)[None, :] - inter
        f = valid / union
        per_label_norm = f @ cand_y  # N(i, j) over non-prototype positives
        if cfg.use_prototypes:
            per_label_norm = per_label_norm + 1.0
        ok = (y > 0) & (per_label_norm > 0)
        label_w = np.divide(y, per_label_norm, out=np.zeros_like(y), where=ok) / sizes[:, None]
        pos_nc = f * (label_w @ cand_y.T)
        pos_p = label_w if cfg.use_prototypes else np.zeros((b, 0))
        den_nc = cfg.beta * valid
    else:
        jac = jaccard_matrix(y, cand_y) * valid
        jac_p = y / sizes[:, None] if cfg.use_prototypes else np.zeros((b, 0))
        norm = (jac.sum(axis=1) + jac_p.sum(axis=1))[:, None]
        pos_nc = np.divide(jac, norm, out=np.zeros_like(jac), where=norm > 0)
        pos_p = np.divide(jac_p, norm, out=np.zeros_like(jac_p), where=norm > 0)
        den_nc = valid
    den_p = np.ones((b, len(protos)))
    all_cands = np.vstack([cands, protos])
    return all_cands, m, np.hstack([pos_nc, pos_p]), np.hstack([den_nc, den_p])


def msc_loss(ctx: ContrastiveContext, cfg: LossConfig) -> LossOutput:
    """Balanced multi-label contrastive loss and its ablation variants.

    Flags on ``cfg`` pick the rung: no queue/prototypes/balancing is the
    in-batch Jaccard baseline; ``use_queue`` adds memory keys;
    ``use_prototypes`` adds one positive per label; ``balanced`` switches to
    label-loop attraction weights and ``beta``-scaled repulsion. Gradients
    flow to batch embeddings and prototypes, never to queue keys.
    """
    z = ctx.batch
    _check_pair_batch(z)
    b = len(z)
    tau = cfg.temperature
    cands, m, pos_w, den_w = msc_weights(ctx, cfg)
    rows, dl = _weighted_xent(z @ cands.T / tau, pos_w, den_w)
    dl /= b * tau
    grad_z = dl @ cands + dl[:, :b].T @ z
    grads = {"batch": grad_z}
    if cfg.use_prototypes:
        grads["prototypes"] = dl[:, m:].T @ z
    return LossOutput(float(rows.sum() / b), grads)


def jscl_loss(ctx: ContrastiveContext, tau: float) -> LossOutput:
    """Jaccard weight placed inside the log; zero-overlap pairs are skipped.

    The weight only adds a constant, so gradients match an unweighted
    "shares any label" SupCon with a uniform 1/|B| inner normalization.
    """
    z, y = ctx.batch, ctx.batch_labels
    _check_pair_batch(z)
    b = len(z)
    off = 1.0 - np.eye(b)
    jac = jaccard_matrix(y, y) * off
    pos = (jac > 0).astype(np.float64) / b
    rows, dl = _weighted_xent(z @ z.T / tau, pos, off)
    const = -np.sum(np.log(jac[jac > 0])) / b
    dl /= b * tau
    return LossOutput(float((rows.sum() + const) / b), {"batch": (dl + dl.T) @ z})


def con_loss(ctx: ContrastiveContext, tau: float, distance: str = "euclidean") -> LossOutput:
    """Distance-based contrastive loss weighted by label inner products."""
    if distance != "euclidean":
        raise ValueError(f"unsupported distance {distance!r}")
    z, y = ctx.batch, ctx.batch_labels
    _check_pair_batch(z)
    b = len(z)
    off = 1.0 - np.eye(b)
    diff = z[:, None, :] - z[None, :, :]
    dist = np.sqrt(np.sum(diff * diff, axis=-1))
    weights = (y @ y.T) * off
    norm = weights.sum(axis=1, keepdims=True)
    pos = np.divide(weights, norm, out=np.zeros_like(weights), where=norm > 0)
    rows, dl = _weighted_xent(-dist / tau, pos, off)
    ddist = -dl / (b * tau)
    coef = np.divide(ddist, dist, out=np.zeros_like(dist), where=dist > 0)
    sym = coef + coef.T
    grad = sym.sum(axis=1)[:, None] * z - sym @ z
    return LossOutput(float(rows.sum() / b), {"batch": grad})


def mulcon_loss(embeddings, mask, tau: float) -> LossOutput:
    """Per-label contrastive loss over every present (instance, label) vector.

    ``embeddings`` is N×L×d and ``mask`` N×L; entry (n, l) takes part iff
    ``mask[n, l]``. Positives are the same label on other instances.
    """
    emb = np.asarray(embeddings, dtype=np.float64)
    present = np.argwhere(np.asarray(mask) > 0)
    inst, lab = present[:, 0], present[:, 1]
    zs = emb[inst, lab]
    same = (lab[:, None] == lab[None, :]) & (inst[:, None] != inst[None, :])
    count = same.sum(axis=1, keepdims=True)
    if not np.any(count):
        raise ValueError("no positive pairs")
    n = len(zs)
    pos = np.divide(same.astype(np.float64), count, out=np.zeros(same.shape), where=count > 0)
    rows, dl = _weighted_xent(zs @ zs.T / tau, pos, 1.0 - np.eye(n))
    dl /= n * tau
    grad = np.zeros_like(emb)
    grad[inst, lab] = (dl + dl.T) @ zs
    return LossOutput(float(rows.sum() / n), {"embeddings": grad})


# ---------------------------------------------------------------- probability losses

def _clamp(probs):
    p = np.asarray(probs, dtype=np.float64)
    inside = (p > PROB_EPS) & (p < 1.0 - PROB_EPS)
    return np.clip(p, PROB_EPS, 1.0 - PROB_EPS), inside


def bce_loss(probs, labels) -> LossOutput:
    p, inside = _clamp(probs)
    y = np.asarray(labels, dtype=np.float64)
    scale = 1.0 / p.size
    value = -np.sum(y * np.log(p) + (1 - y) * np.log(1 - p)) * scale
    grad = -(y / p - (1 - y) / (1 - p)) * scale
    return LossOutput(float(value), {"probs": grad * inside})


def focal_loss(probs, labels, gamma: float) -> LossOutput:
    p, inside = _clamp(probs)
    y = np.asarray(labels, dtype=np.float64)
    q = 1 - p
    scale = 1.0 / p.size
    pos = q ** gamma * np.log(p)
    neg = p ** gamma * np.log(q)
    value = -np.sum(y * pos + (1 - y) * neg) * scale
    dpos = -gamma * q ** (gamma - 1) * np.log(p) + q ** gamma / p
    dneg = gamma * p ** (gamma - 1) * np.log(q) - p ** gamma / q
    grad = -(y * dpos + (1 - y) * dneg) * scale
    return LossOutput(float(value), {"probs": grad * inside})


def asymmetric_loss(probs, labels, gamma_pos: float, gamma_neg: float, margin: float) -> LossOutput:
    """Positives focus with ``gamma_pos``; negatives use the shifted probability
    ``max(p - margin, 0)`` focused with ``gamma_neg``."""
    p, inside = _clamp(probs)
    y = np.asarray(labels, dtype=np.float64)
    q = 1 - p
    scale = 1.0 / p.size
    s = np.maximum(p - margin, 0.0)
    shifted = s > 0
    s_safe = np.where(shifted, s, 0.5)
    pos = q ** gamma_pos * np.log(p)
    neg = np.where(shifted, s_safe ** gamma_neg * np.log(1 - s_safe), 0.0)
    value = -np.sum(y * pos + (1 - y) * neg) * scale
    dpos = -gamma_pos * q ** (gamma_pos - 1) * np.log(p) + q ** gamma_pos / p
    dneg = np.where(shifted, gamma_neg * s_safe ** (gamma_neg - 1) * np.log(1 - s_safe)
                    - s_safe ** gamma_neg / (1 - s_safe), 0.0)
    grad = -(y * dpos + (1 - y) * dneg) * scale
    return LossOutput(float(value), {"probs": grad * inside})
