"""Measurement: classification metrics, linear probes, clustering quality,
attraction/repulsion diagnostics and the per-label collapse metric."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .losses import mulcon_loss
from .numerics import l2_normalize, make_rng, normalize_backward
from .optim import OptimizerState, adamw_step


# ---------------------------------------------------------------- classification

@dataclass
class MetricsRecord:
    micro_f1: float
    macro_f1: float
    hamming: float

    def to_report(self) -> dict:
        """Serialized form; hamming is reported x1000 to two decimals."""
        return {"micro_f1": self.micro_f1, "macro_f1": self.macro_f1,
                "hamming": round(self.hamming * 1000.0, 2)}


def _f1(tp, fp, fn, zero_division):
    denom = 2 * tp + fp + fn
    return np.where(denom > 0, 2 * tp / np.maximum(denom, 1), zero_division)


def classification_metrics(pred, truth, zero_division: float = 0.0) -> MetricsRecord:
    """Micro-F1 from pooled counts, macro-F1 as the plain mean of per-label F1.

    A label with no true and no predicted positives scores ``zero_division``.
    """
    pred = np.asarray(pred) > 0
    truth = np.asarray(truth) > 0
    if pred.shape != truth.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {truth.shape}")
    tp = np.sum(pred & truth, axis=0)
    fp = np.sum(pred & ~truth, axis=0)
    fn = np.sum(~pred & truth, axis=0)
    micro = float(_f1(tp.sum(), fp.sum(), fn.sum(), zero_division))
    per_label = _f1(tp, fp, fn, zero_division).tolist()
    macro = sum(per_label) / len(per_label)  # index order, not numpy's pairwise sum
    return MetricsRecord(micro, macro, float(np.mean(pred != truth)))


# ---------------------------------------------------------------- linear probe

@dataclass
class EvalConfig:
    lrs: tuple = (1e-1, 1e-2)
    decays: tuple = (1e-2, 1e-4)
    epochs: int = 40
    n_seeds: int = 3
    batch_size: int = 32
    threshold: float = 0.5
    standardize: bool = True
    zero_division: float = 0.0
    seed: int = 0

    @classmethod
    def full_grid(cls, **kw) -> "EvalConfig":
        return cls(lrs=(1.0, 1e-1, 1e-2), decays=(1.0, 1e-1, 1e-2, 1e-4, 1e-6), **kw)


@dataclass
class LinearEvalResult:
    metrics: MetricsRecord
    chosen: list  # per-label (lr, decay), None for labels absent from train
    absent_labels: list
    val_metrics: MetricsRecord | None = None


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _train_probes(x, y, lr, decay, cfg: EvalConfig):
    """Independent per-label logistic regressions for ``n_seeds`` seeds at once."""
    n, h = x.shape
    n_labels = y.shape[1]
    seeds = cfg.n_seeds
    rngs = [make_rng(cfg.seed * 1000 + s) for s in range(seeds)]
    bound = 1.0 / np.sqrt(h)
    params = {
        "weight": np.stack([r.uniform(-bound, bound, (h, n_labels)) for r in rngs]),
        "bias": np.zeros((seeds, 1, n_labels)),
    }
    state = OptimizerState(lr=lr, weight_decay=decay)
    for epoch in range(cfg.epochs):
        orders = np.stack([r.permutation(n) for r in rngs])
        for start in range(0, n, cfg.batch_size):
            idx = orders[:, start:start + cfg.batch_size]
            xb, yb = x[idx], y[idx]
            p = _sigmoid(xb @ params["weight"] + params["bias"])
            d = (p - yb) / idx.shape[1]
            grads = {"weight": np.swapaxes(xb, 1, 2) @ d, "bias": d.sum(axis=1, keepdims=True)}
            params = adamw_step(params, grads, state)
    return params


def _probe_probs(params, x):
    return _sigmoid(x @ params["weight"] + params["bias"]).mean(axis=0)


def linear_evaluation(splits: dict, cfg: EvalConfig | None = None) -> LinearEvalResult:
    """Score frozen representations with per-label logistic regressions.

    ``splits`` maps ``"train"``, ``"val"`` and ``"test"`` to ``(repr, labels)``.
    Each (lr, decay) grid point trains ``n_seeds`` probes whose probabilities
    are averaged; every label keeps the grid point with the best validation
    F1 and is scored on test at ``threshold``.
    """
    cfg = cfg or EvalConfig()
    (xtr, ytr), (xva, yva), (xte, yte) = (splits[k] for k in ("train", "val", "test"))
    ytr, yva, yte = (np.asarray(v, dtype=np.float64) for v in (ytr, yva, yte))
    xtr, xva, xte = (np.asarray(v, dtype=np.float64) for v in (xtr, xva, xte))
    if cfg.standardize:
        mu = xtr.mean(axis=0)
        sd = xtr.std(axis=0)
        sd = np.where(sd > 1e-12, sd, 1.0)
        xtr, xva, xte = ((v - mu) / sd for v in (xtr, xva, xte))

    n_labels = ytr.shape[1]
    absent = [int(j) for j in np.flatnonzero(ytr.sum(axis=0) == 0)]
    best_f1 = np.full(n_labels, -1.0)
    chosen = [None] * n_labels
    val_pred = np.zeros_like(yva, dtype=bool)
    test_pred = np.zeros_like(yte, dtype=bool)
    for lr in cfg.lrs:
        for decay in cfg.decays:
            params = _train_probes(xtr, ytr, lr, decay, cfg)
            pv = _probe_probs(params, xva) >= cfg.threshold
            pt = _probe_probs(params, xte) >= cfg.threshold
            tp = np.sum(pv & (yva > 0), axis=0)
            fp = np.sum(pv & (yva == 0), axis=0)
            fn = np.sum(~pv & (yva > 0), axis=0)
            f1 = _f1(tp, fp, fn, cfg.zero_division)
            better = f1 > best_f1
            best_f1 = np.where(better, f1, best_f1)
            val_pred[:, better] = pv[:, better]
            test_pred[:, better] = pt[:, better]
            for j in np.flatnonzero(better):
                chosen[j] = (lr, decay)
    for j in absent:
        chosen[j] = None
        val_pred[:, j] = False
        test_pred[:, j] = False
    return LinearEvalResult(
        classification_metrics(test_pred, yte, cfg.zero_division), chosen, absent,
        classification_metrics(val_pred, yva, cfg.zero_division))


# ---------------------------------------------------------------- clustering

@dataclass
class CombinationClassing:
    class_ids: np.ndarray  # -1 marks examples outside the retained classes
    keep_fraction: float
    n_classes: int
    combos: list = field(default_factory=list)  # retained label tuples by rank

    @property
    def retained(self) -> np.ndarray:
        return self.class_ids >= 0


def label_combination_classes(labels, keep_fraction: float = 0.5) -> CombinationClassing:
    """One class per distinct label vector, keeping the ``ceil(p * M)`` most frequent.

    Frequency ties are broken by the lexicographic order of the label tuple.
    """
    if not 0.0 < keep_fraction <= 1.0:
        raise ValueError("keep_fraction must lie in (0, 1]")
    y = np.asarray(labels) > 0
    keys = [tuple(np.flatnonzero(row)) for row in y]
    counts = {}
    for k in keys:
        counts[k] = counts.get(k, 0) + 1
    ranked = sorted(counts, key=lambda k: (-counts[k], k))
    keep = int(np.ceil(keep_fraction * len(ranked) - 1e-12))
    rank = {k: r for r, k in enumerate(ranked[:keep])}
    ids = np.array([rank.get(k, -1) for k in keys], dtype=np.int64)
    return CombinationClassing(ids, keep_fraction, keep, ranked[:keep])


def _pairwise_dist(x):
    sq = np.sum(x * x, axis=1)
    d2 = sq[:, None] + sq[None, :] - 2.0 * (x @ x.T)
    np.fill_diagonal(d2, 0.0)
    return np.sqrt(np.maximum(d2, 0.0))


def _class_index(class_ids):
    ids = np.asarray(class_ids)
    uniq, inv = np.unique(ids, return_inverse=True)
    if len(uniq) < 2:
        raise ValueError("silhouette/DBI undefined for fewer than two classes")
    return uniq, inv


def silhouette(embeddings, class_ids) -> float:
    """Mean silhouette with Euclidean distance; singleton classes score 0."""
    x = np.asarray(embeddings, dtype=np.float64)
    uniq, inv = _class_index(class_ids)
    dist = _pairwise_dist(x)
    onehot = np.eye(len(uniq))[inv]
    sizes = onehot.sum(axis=0)
    sums = dist @ onehot
    n = len(x)
    own = sizes[inv]
    a = np.divide(sums[np.arange(n), inv], own - 1, out=np.zeros(n), where=own > 1)
    means = sums / sizes
    means[np.arange(n), inv] = np.inf
    b = means.min(axis=1)
    top = np.maximum(a, b)
    s = np.divide(b - a, top, out=np.zeros(n), where=top > 0)
    s[own == 1] = 0.0
    return float(s.mean())


def davies_bouldin(embeddings, class_ids) -> float:
    """Mean over classes of the worst (s_i + s_j) / |mu_i - mu_j| ratio,
    where s is the mean distance of members to their centroid."""
    x = np.asarray(embeddings, dtype=np.float64)
    uniq, inv = _class_index(class_ids)
    k = len(uniq)
    cents = np.stack([x[inv == c].mean(axis=0) for c in range(k)])
    spread = np.array([np.linalg.norm(x[inv == c] - cents[c], axis=1).mean() for c in range(k)])
    cd = np.sqrt(np.sum((cents[:, None, :] - cents[None, :, :]) ** 2, axis=-1))
    off = ~np.eye(k, dtype=bool)
    if np.any(cd[off] <= 1e-12):
        raise ValueError("degenerate centroids")
    ratio = np.where(off, (spread[:, None] + spread[None, :]) / np.where(off, cd, 1.0), -np.inf)
    return float(ratio.max(axis=1).mean())


def clustering_sweep(embeddings, labels, fractions) -> list[tuple[float, float, float]]:
    """``(fraction, silhouette, dbi)`` rows over label-combination classes."""
    x = np.asarray(embeddings, dtype=np.float64)
    rows = []
    for p in fractions:
        cc = label_combination_classes(labels, p)
        keep = cc.retained
        rows.append((float(p), silhouette(x[keep], cc.class_ids[keep]),
                     davies_bouldin(x[keep], cc.class_ids[keep])))
    return rows


# ---------------------------------------------------------------- attraction / repulsion

@dataclass
class AttRepReport:
    target_class: int
    in_class: list
    out_class: list
    s_att: list
    s_rep: list
    bound: float
    actual: float

    @property
    def gap(self) -> float:
        return self.actual - self.bound

    def to_dict(self) -> dict:
        d = asdict(self)
        d["gap"] = self.gap
        return d


def attraction_repulsion_report(embeddings, class_ids, target, tau: float = 1.0) -> AttRepReport:
    """SupCon loss of one class's anchors next to its attraction/repulsion lower bound.

    For each anchor ``i`` of the class, ``s_att`` is minus the mean inner
    product with its classmates and ``s_rep`` the mean inner product with
    everything outside the class; the bound is
    ``sum_i log(|B_y| - 1 + |B_y^C| exp((s_att + s_rep) / tau))``.
    """
    z = np.asarray(embeddings, dtype=np.float64)
    ids = np.asarray(class_ids)
    inside = np.flatnonzero(ids == target)
    outside = np.flatnonzero(ids != target)
    if len(inside) < 2:
        raise ValueError(f"class {target} has fewer than two members")
    if len(outside) < 1:
        raise ValueError(f"class {target} leaves no out-of-class examples")
    gram = z @ z.T
    n_in, n_out = len(inside), len(outside)
    s_att, s_rep = [], []
    bound = 0.0
    actual = 0.0
    for i in inside:
        mates = inside[inside != i]
        att = -gram[i, mates].sum() / (n_in - 1)
        rep = gram[i, outside].sum() / n_out
        s_att.append(float(att))
        s_rep.append(float(rep))
        bound += np.log(n_in - 1 + n_out * np.exp((att + rep) / tau))
        logits = gram[i] / tau
        others = np.arange(len(z)) != i
        m = logits[others].max()
        lse = m + np.log(np.sum(np.exp(logits[others] - m)))
        actual += -np.mean(logits[mates] - lse)
    return AttRepReport(int(target), inside.tolist(), outside.tolist(), s_att, s_rep,
                        float(bound), float(actual))


# ---------------------------------------------------------------- collapse

@dataclass
class CollapseReport:
    within_variance: list
    centroid_cosines: list

    @property
    def max_variance(self) -> float:
        return max(self.within_variance)

    def off_diagonal_cosines(self) -> np.ndarray:
        c = np.asarray(self.centroid_cosines)
        return c[~np.eye(len(c), dtype=bool)]


def collapse_metric(label_sets) -> CollapseReport:
    """Per-label spread (mean squared distance to the centroid) and the cosine
    matrix between label centroids."""
    sets = [np.atleast_2d(np.asarray(s, dtype=np.float64)) for s in label_sets]
    if any(len(s) == 0 for s in sets):
        raise ValueError("every label set must be non-empty")
    cents = np.stack([s.mean(axis=0) for s in sets])
    var = [float(np.mean(np.sum((s - c) ** 2, axis=1))) for s, c in zip(sets, cents)]
    unit = cents / np.maximum(np.linalg.norm(cents, axis=1, keepdims=True), 1e-300)
    return CollapseReport(var, (unit @ unit.T).tolist())


@dataclass
class CollapseDemoResult:
    report: CollapseReport
    losses: list
    steps: int


def balanced_label_mask(n: int, n_labels: int, per_instance: int = 2) -> np.ndarray:
    """Instance ``i`` carries labels ``i, i+1, ...`` (mod L): every label equally frequent."""
    mask = np.zeros((n, n_labels), dtype=bool)
    for i in range(n):
        mask[i, [(i + k) % n_labels for k in range(per_instance)]] = True
    return mask


def collapse_demo(n: int = 40, n_labels: int = 4, dim: int = 8, steps: int = 5000,
                  tau: float = 0.5, lr: float = 0.01, seed: int = 0,
                  log_every: int = 100) -> CollapseDemoResult:
    """Minimize the per-label contrastive loss over free unit embeddings.

    The input plays no role: each (instance, label) vector is a free
    parameter, which is the most expressive encoder possible.
    """
    rng = make_rng(seed)
    mask = balanced_label_mask(n, n_labels)
    raw = {"emb": rng.standard_normal((n, n_labels, dim))}
    state = OptimizerState(lr=lr, weight_decay=0.0)
    losses = []
    for step in range(steps):
        z = l2_normalize(raw["emb"])
        out = mulcon_loss(z, mask, tau)
        if step % log_every == 0:
            losses.append(out.value)
        grad = normalize_backward(raw["emb"], out.grads["embeddings"])
        raw = adamw_step(raw, {"emb": grad}, state)
    z = l2_normalize(raw["emb"])
    losses.append(mulcon_loss(z, mask, tau).value)
    sets = [z[mask[:, j], j] for j in range(n_labels)]
    return CollapseDemoResult(collapse_metric(sets), losses, steps)
