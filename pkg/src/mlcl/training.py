"""Contrastive pretraining with momentum queue and prototypes, and supervised
training for the BCE family."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from . import losses as L
from .data import Dataset, batch_iterator
from .encoder import EncoderParams, backbone, encode, encoder_backward, init_encoder
from .evaluation import EvalConfig, classification_metrics, linear_evaluation
from .memory import KeyQueue, init_prototypes, momentum_update, renormalize_prototypes
from .numerics import make_rng
from .optim import DivergenceError, OptimizerState, adamw_step, clip_gradients, lr_schedule

log = logging.getLogger(__name__)

CONTRASTIVE = ("base", "bqueue", "bqproto", "msc", "jscl", "con")
SUPERVISED = ("bce", "focal", "asymmetric")


@dataclass
class TrainConfig:
    epochs: int = 40
    batch_size: int = 32
    lr: float = 1e-3
    weight_decay: float = 0.01
    warmup_fraction: float = 0.05
    scheduler: str = "auto"  # auto: cosine for contrastive, linear for supervised
    clip_norm: float = 1.0
    seed: int = 0
    loss: str = "msc"
    queue_size: int = 256
    momentum: float = 0.999
    hidden: int = 64
    depth: int = 2
    embed_dim: int = 32
    select_checkpoint: bool = True

    def __post_init__(self):
        if not 0.0 <= self.warmup_fraction < 1.0:
            raise ValueError("warmup_fraction must lie in [0, 1)")
        if self.clip_norm <= 0:
            raise ValueError("clip_norm must be positive")
        if self.loss not in CONTRASTIVE + SUPERVISED:
            raise ValueError(f"unknown loss {self.loss!r}")
        if self.scheduler not in ("auto", "linear", "cosine"):
            raise ValueError(f"unknown scheduler {self.scheduler!r}")
        if self.batch_size < 2 or self.epochs < 0 or self.queue_size < 1:
            raise ValueError("batch_size >= 2, epochs >= 0 and queue_size >= 1 required")
        if not 0.0 <= self.momentum <= 1.0:
            raise ValueError("momentum must lie in [0, 1]")

    def schedule_kind(self) -> str:
        if self.scheduler != "auto":
            return self.scheduler
        return "cosine" if self.loss in CONTRASTIVE else "linear"


@dataclass
class TrainResult:
    tensors: dict[str, np.ndarray]
    log: list[dict]
    chosen: str
    selection: dict = field(default_factory=dict)
    steps: int = 0

    @property
    def encoder(self) -> EncoderParams:
        return EncoderParams.from_tensors(self.tensors)


def effective_loss_config(cfg: TrainConfig, loss_cfg: L.LossConfig) -> L.LossConfig:
    """Ladder rungs force their variant flags; other settings are kept."""
    if cfg.loss in L.LADDER:
        return replace(loss_cfg, **L.LADDER[cfg.loss])
    return loss_cfg


def _uses_memory(cfg: TrainConfig, lc: L.LossConfig) -> bool:
    return cfg.loss in L.LADDER and lc.use_queue


def _contrastive_loss(cfg, lc, z, y, queue, protos) -> L.LossOutput:
    y = y.astype(np.float64)
    if cfg.loss in L.LADDER:
        ctx = L.ContrastiveContext(z, y, queue.keys() if queue is not None else None,
                                   queue.labels() if queue is not None else None, protos)
        return L.msc_loss(ctx, lc)
    ctx = L.ContrastiveContext(z, y)
    if cfg.loss == "jscl":
        return L.jscl_loss(ctx, lc.temperature)
    return L.con_loss(ctx, lc.temperature)


def _check_finite(value, step):
    if not np.isfinite(value):
        raise DivergenceError(f"diverged: non-finite loss at step {step}")


def _eval_batches(n, batch_size):
    return [np.arange(s, min(s + batch_size, n)) for s in range(0, n, batch_size)
            if min(s + batch_size, n) - s >= 2]


def contrastive_state(params, momentum_params, protos, queue) -> dict[str, np.ndarray]:
    out = {k: v.copy() for k, v in params.tensors().items()}
    out.update({f"momentum.{k}": v.copy() for k, v in momentum_params.tensors().items()})
    if protos is not None:
        out["prototypes"] = protos.copy()
    if queue is not None:
        out.update(queue.state())
    return out


def select_checkpoint(candidates: dict[str, dict], splits: dict[str, Dataset],
                      eval_cfg: EvalConfig) -> tuple[str, dict]:
    """Pick the candidate with the best validation micro-F1 under linear evaluation.

    ``candidates`` is ordered oldest to newest by the epoch it was saved at;
    ties go to the newest.
    """
    scores = {}
    for name, tensors in candidates.items():
        enc = EncoderParams.from_tensors(tensors)
        reprs = {k: (backbone(enc, splits[k].features), splits[k].labels) for k in ("train", "val", "test")}
        scores[name] = linear_evaluation(reprs, eval_cfg).val_metrics.micro_f1
    best = max(scores.values())
    chosen = [n for n in candidates if scores[n] == best][-1]
    return chosen, scores


def train_contrastive(splits: dict[str, Dataset], cfg: TrainConfig,
                      loss_cfg: L.LossConfig | None = None,
                      eval_cfg: EvalConfig | None = None) -> TrainResult:
    """Contrastive pretraining: query encoder, momentum encoder, queue, prototypes.

    Per batch: encode queries, encode detached keys with the momentum encoder,
    compute the loss against the current queue and prototypes, backprop,
    clip, AdamW on encoder and prototypes, momentum update, then enqueue the
    keys. Keeps the last, lowest-train-loss and lowest-val-loss states and
    returns the one with the best validation micro-F1 under linear evaluation.
    """
    if cfg.loss not in CONTRASTIVE:
        raise ValueError(f"{cfg.loss!r} is not a contrastive loss")
    lc = effective_loss_config(cfg, loss_cfg or L.LossConfig())
    eval_cfg = eval_cfg or EvalConfig()
    train = splits["train"]
    params = init_encoder(train.num_features, cfg.hidden, cfg.depth, cfg.embed_dim, cfg.seed)
    momentum_params = params.copy()
    use_protos = cfg.loss in L.LADDER and lc.use_prototypes
    protos = init_prototypes(train.num_labels, cfg.embed_dim, make_rng(cfg.seed + 1)) if use_protos else None
    queue = KeyQueue(cfg.queue_size, cfg.embed_dim, train.num_labels) if _uses_memory(cfg, lc) else None
    state = OptimizerState(lr=cfg.lr, weight_decay=cfg.weight_decay, no_decay=frozenset({"prototypes"}))

    per_epoch = sum(1 for _ in batch_iterator(train, cfg.batch_size, cfg.seed, 0))
    total = cfg.epochs * per_epoch
    kind = cfg.schedule_kind()
    step = 0
    history = []
    best_train = best_val = np.inf
    snapshots = {}
    for epoch in range(cfg.epochs):
        batch_losses = []
        for idx in batch_iterator(train, cfg.batch_size, cfg.seed, epoch):
            x, y = train.features[idx], train.labels[idx]
            state.lr = lr_schedule(step, total, cfg.lr, cfg.warmup_fraction, kind)
            out = encode(params, x)
            keys = encode(momentum_params, x).projected if queue is not None else None
            loss = _contrastive_loss(cfg, lc, out.projected, y, queue, protos)
            _check_finite(loss.value, step)
            g_enc, _ = encoder_backward(params, x, loss.grads["batch"], output=out)
            grads = dict(g_enc.tensors())
            current = dict(params.tensors())
            if protos is not None:
                grads["prototypes"] = loss.grads["prototypes"]
                current["prototypes"] = protos
            updated = adamw_step(current, clip_gradients(grads, cfg.clip_norm), state)
            if protos is not None:
                protos = renormalize_prototypes(updated.pop("prototypes"))
            params = EncoderParams.from_tensors(updated)
            if queue is not None:
                momentum_params = momentum_update(momentum_params, params, cfg.momentum)
                queue.enqueue_dequeue(keys, y)
            batch_losses.append(loss.value)
            step += 1

        train_loss = float(np.mean(batch_losses)) if batch_losses else float("nan")
        val_loss = _validation_loss(cfg, lc, params, protos, queue, splits.get("val"))
        history.append({"epoch": epoch, "train_loss": train_loss, "val_loss": val_loss,
                        "val_micro_f1": None, "lr": state.lr})
        log.info("epoch %d train_loss %.5f val_loss %.5f", epoch, train_loss, val_loss)
        snap = None
        if train_loss < best_train:
            best_train = train_loss
            snap = contrastive_state(params, momentum_params, protos, queue)
            snapshots["best_train"] = (epoch, snap)
        if val_loss < best_val:
            best_val = val_loss
            snap = snap or contrastive_state(params, momentum_params, protos, queue)
            snapshots["best_val"] = (epoch, snap)

    snapshots["last"] = (cfg.epochs, contrastive_state(params, momentum_params, protos, queue))
    ordered = dict((name, s) for name, (_, s) in sorted(snapshots.items(), key=lambda kv: kv[1][0]))
    if cfg.select_checkpoint and {"train", "val", "test"} <= splits.keys():
        chosen, scores = select_checkpoint(ordered, splits, eval_cfg)
    else:
        chosen, scores = "last", {}
    return TrainResult(ordered[chosen], history, chosen, scores, step)


def _validation_loss(cfg, lc, params, protos, queue, val: Dataset | None) -> float:
    if val is None or len(val) < 2:
        return float("nan")
    values, weights = [], []
    for idx in _eval_batches(len(val), cfg.batch_size):
        z = encode(params, val.features[idx]).projected
        values.append(_contrastive_loss(cfg, lc, z, val.labels[idx], queue, protos).value)
        weights.append(len(idx))
    return float(np.average(values, weights=weights))


# ---------------------------------------------------------------- supervised

def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def supervised_loss(name: str, probs, labels, lc: L.LossConfig) -> L.LossOutput:
    if name == "bce":
        return L.bce_loss(probs, labels)
    if name == "focal":
        return L.focal_loss(probs, labels, lc.gamma)
    if name == "asymmetric":
        return L.asymmetric_loss(probs, labels, lc.gamma_pos, lc.gamma_neg, lc.margin)
    raise ValueError(f"unknown supervised loss {name!r}")


def predict_proba(tensors: dict[str, np.ndarray], features) -> np.ndarray:
    enc = EncoderParams.from_tensors(tensors)
    r = backbone(enc, features)
    return _sigmoid(r @ tensors["decoder.weight"].T + tensors["decoder.bias"])


def train_supervised(splits: dict[str, Dataset], cfg: TrainConfig,
                     loss_cfg: L.LossConfig | None = None, threshold: float = 0.5) -> TrainResult:
    """Backbone plus a sigmoid linear decoder trained with a BCE-family loss.

    Returns the state with the best validation micro-F1 (ties go to the later
    epoch); the untrained model is the epoch -1 candidate.
    """
    if cfg.loss not in SUPERVISED:
        raise ValueError(f"{cfg.loss!r} is not a supervised loss")
    lc = loss_cfg or L.LossConfig()
    train, val = splits["train"], splits["val"]
    enc = init_encoder(train.num_features, cfg.hidden, cfg.depth, cfg.embed_dim, cfg.seed)
    rng = make_rng(cfg.seed + 2)
    bound = 1.0 / np.sqrt(cfg.hidden)
    params = {k: v for k, v in enc.tensors().items() if k.startswith("backbone.")}
    params["decoder.weight"] = rng.uniform(-bound, bound, (train.num_labels, cfg.hidden))
    params["decoder.bias"] = np.zeros(train.num_labels)
    head = {k: v for k, v in enc.tensors().items() if k.startswith("proj.")}
    state = OptimizerState(lr=cfg.lr, weight_decay=cfg.weight_decay)

    def full_state():
        out = {k: v.copy() for k, v in params.items()}
        out.update({k: v.copy() for k, v in head.items()})
        return out

    def val_f1():
        probs = predict_proba(full_state(), val.features)
        return classification_metrics(probs >= threshold, val.labels).micro_f1

    per_epoch = sum(1 for _ in batch_iterator(train, cfg.batch_size, cfg.seed, 0))
    total = cfg.epochs * per_epoch
    kind = cfg.schedule_kind()
    best_f1, best = val_f1(), full_state()
    history = []
    step = 0
    for epoch in range(cfg.epochs):
        batch_losses = []
        for idx in batch_iterator(train, cfg.batch_size, cfg.seed, epoch):
            x, y = train.features[idx], train.labels[idx].astype(np.float64)
            state.lr = lr_schedule(step, total, cfg.lr, cfg.warmup_fraction, kind)
            enc = EncoderParams.from_tensors({**params, **head})
            out = encode(enc, x)
            probs = _sigmoid(out.backbone_repr @ params["decoder.weight"].T + params["decoder.bias"])
            loss = supervised_loss(cfg.loss, probs, y, lc)
            _check_finite(loss.value, step)
            g_logits = loss.grads["probs"] * probs * (1.0 - probs)
            g_repr = g_logits @ params["decoder.weight"]
            g_enc, _ = encoder_backward(enc, x, np.zeros_like(out.projected), grad_repr=g_repr, output=out)
            grads = {k: v for k, v in g_enc.tensors().items() if k.startswith("backbone.")}
            grads["decoder.weight"] = g_logits.T @ out.backbone_repr
            grads["decoder.bias"] = g_logits.sum(axis=0)
            params = adamw_step(params, clip_gradients(grads, cfg.clip_norm), state)
            batch_losses.append(loss.value)
            step += 1
        f1 = val_f1()
        vprobs = predict_proba(full_state(), val.features)
        vloss = supervised_loss(cfg.loss, vprobs, val.labels.astype(np.float64), lc).value
        history.append({"epoch": epoch, "train_loss": float(np.mean(batch_losses)),
                        "val_loss": float(vloss), "val_micro_f1": f1, "lr": state.lr})
        if f1 >= best_f1:
            best_f1, best = f1, full_state()
    return TrainResult(best, history, "best_val_micro_f1", {"val_micro_f1": best_f1}, step)
