"""Joint optimization of the translation and confidence branches.

The confidence branch lets the decoder "ask for hints": predictions are
interpolated toward the ground truth by 1-c_t on a per-batch subset of
sentences, a -log c_t penalty discourages free hints, and the penalty weight
anneals exponentially so no hints flow early. Also implements standard and
confidence-based label smoothing and the Adam/inverse-sqrt-warmup loop.

Array-level loss functions here are the contract surface; the graph-level
builder used by the trainer mirrors them and is tested against them.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .autodiff import Graph, log_floored
from .data import Batch, ParallelCorpus, make_batches
from .errors import ConfigError, DivergenceError, NumericError
from .model import ForwardPass, SeqModel, forward_teacher_forced, save_checkpoint
from .rng import RngState

SMOOTHING_MODES = ("none", "standard", "confidence")
EPS_CLAMP = 1.0 - 1e-6  # keeps the smoothed true-label mass positive


@dataclass(frozen=True)
class TrainSchedule:
    total_steps: int
    batch_size: int = 32
    lambda0: float = 30.0
    beta0: float | None = None  # default: total_steps / 3.3
    hint_fraction: float = 0.5
    epsilon0: float = 0.1
    smoothing: str = "none"
    smooth_hints: bool = False
    confidence_enabled: bool = True
    lr_scale: float = 1.0
    warmup_steps: int = 4000
    adam_beta1: float = 0.9
    adam_beta2: float = 0.98
    adam_eps: float = 1e-9
    checkpoint_every: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.total_steps < 1:
            raise ConfigError("total_steps must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.lambda0 < 0:
            raise ConfigError("lambda0 must be >= 0")
        if self.beta0 is not None and self.beta0 <= 0:
            raise ConfigError("beta0 must be > 0")
        if not (0.0 <= self.hint_fraction <= 1.0):
            raise ConfigError("hint_fraction must lie in [0, 1]")
        if not (0.0 <= self.epsilon0 < 1.0):
            raise ConfigError("epsilon0 must lie in [0, 1)")
        if self.smoothing not in SMOOTHING_MODES:
            raise ConfigError(f"smoothing must be one of {SMOOTHING_MODES}")
        if self.warmup_steps < 1:
            raise ConfigError("warmup_steps must be >= 1")

    @property
    def beta(self) -> float:
        return self.beta0 if self.beta0 is not None else self.total_steps / 3.3

    def to_dict(self) -> dict:
        d = asdict(self)
        d["beta0_resolved"] = self.beta
        return d


@dataclass
class LossBreakdown:
    l_nmt: float
    l_conf: float
    lam: float
    l_total: float
    mean_conf: float

    def check(self, tol: float = 1e-9) -> bool:
        return abs(self.l_total - (self.l_nmt + self.lam * self.l_conf)) <= tol


# ---------------------------------------------------------------------------
# Loss formulas (array level)
# ---------------------------------------------------------------------------


def hint_interpolate(p: np.ndarray, y: np.ndarray, c: np.ndarray) -> np.ndarray:
    """p' = c * p + (1 - c) * y, with c broadcast over the vocab axis."""
    c = np.asarray(c)
    if c.ndim == p.ndim - 1:
        c = c[..., None]
    return c * p + (1.0 - c) * y


def one_hot(ids: np.ndarray, vocab_size: int, dtype=np.float64) -> np.ndarray:
    out = np.zeros(ids.shape + (vocab_size,), dtype=dtype)
    np.put_along_axis(out, ids[..., None], 1.0, axis=-1)
    return out


def smooth_targets(y: np.ndarray, eps: np.ndarray | float, vocab_size: int) -> np.ndarray:
    """1-eps on the true label, eps/(V-1) spread over the rest."""
    eps = np.asarray(eps, dtype=y.dtype)
    if np.any(eps < 0) or np.any(eps >= 1):
        raise ConfigError("smoothing mass must lie in [0, 1)")
    if eps.ndim and eps.ndim == y.ndim - 1:
        eps = eps[..., None]
    return y * (1.0 - eps) + (1.0 - y) * (eps / (vocab_size - 1))


def conf_smoothing_mass(
    c: np.ndarray, c_hat: float, epsilon0: float
) -> np.ndarray:
    """eps_t = eps0 * e^(1 - c_t / c_hat), clamped below 1.

    c_hat is the batch-mean confidence, treated as a constant.
    """
    eps = epsilon0 * np.exp(1.0 - np.asarray(c) / c_hat)
    return np.clip(eps, 0.0, EPS_CLAMP)


def lambda_at(step: float, lambda0: float, beta0: float) -> float:
    """Exponentially annealed confidence-loss weight."""
    if step < 0:
        raise ConfigError("step must be >= 0")
    return lambda0 * math.exp(-step / beta0)


def nmt_loss(p_used: np.ndarray, targets: np.ndarray, mask: np.ndarray) -> float:
    """-log p'[target] over unmasked positions, averaged per token."""
    picked = np.take_along_axis(p_used, targets[..., None], axis=-1)[..., 0]
    losses = -log_floored(picked)
    return float((losses * mask).sum() / mask.sum())


def nmt_loss_dist(p_used: np.ndarray, q: np.ndarray, mask: np.ndarray) -> float:
    """Cross entropy against a full target distribution q, per-token mean."""
    losses = -(q * log_floored(p_used)).sum(axis=-1)
    return float((losses * mask).sum() / mask.sum())


def conf_loss(c: np.ndarray, mask: np.ndarray) -> float:
    """-log c over unmasked positions, averaged per token."""
    return float((-log_floored(c) * mask).sum() / mask.sum())


def total_loss(
    p: np.ndarray,
    c: np.ndarray,
    targets: np.ndarray,
    mask: np.ndarray,
    hint_mask: np.ndarray,
    schedule: TrainSchedule,
    step: int,
) -> LossBreakdown:
    """Array-level reference combining all pieces at a given step.

    Hints touch only the sentences selected by hint_mask; the confidence
    penalty covers every unmasked token.
    """
    maskf = mask.astype(p.dtype)
    v = p.shape[-1]
    y = one_hot(targets, v, dtype=p.dtype)
    q = _target_distribution(y, c, maskf, schedule)
    y_hint = q if schedule.smooth_hints else y
    p_hint = hint_interpolate(p, y_hint, c)
    hm = hint_mask.astype(p.dtype)[:, None, None]
    p_used = hm * p_hint + (1.0 - hm) * p
    if schedule.smoothing == "none":
        l_nmt = nmt_loss(p_used, targets, maskf)
    else:
        l_nmt = nmt_loss_dist(p_used, q, maskf)
    lam = lambda_at(step, schedule.lambda0, schedule.beta)
    l_conf = conf_loss(c, maskf)
    mean_conf = float((c * maskf).sum() / maskf.sum())
    if not schedule.confidence_enabled:
        return LossBreakdown(l_nmt, 0.0, 0.0, l_nmt, mean_conf)
    return LossBreakdown(l_nmt, l_conf, lam, l_nmt + lam * l_conf, mean_conf)


def _target_distribution(y, c, maskf, schedule: TrainSchedule):
    if schedule.smoothing == "none":
        return y
    if schedule.smoothing == "standard":
        return smooth_targets(y, schedule.epsilon0, y.shape[-1])
    c_hat = float((c * maskf).sum() / maskf.sum())
    eps = conf_smoothing_mass(c, c_hat, schedule.epsilon0)
    return smooth_targets(y, eps, y.shape[-1])


# ---------------------------------------------------------------------------
# Graph-level loss (used by the trainer; mirrors the array formulas)
# ---------------------------------------------------------------------------


def build_losses(
    fp: ForwardPass, batch: Batch, schedule: TrainSchedule, step: int
):
    """Attach loss nodes to a teacher-forced forward pass.

    Returns (loss_node, LossBreakdown). Breakdown scalars are float64 so the
    L_total identity holds to 1e-9 even in float32 training.
    """
    g = fp.graph
    p, c = fp.probs, fp.conf
    B, T, V = p.shape
    maskf = batch.tgt_mask.astype(g.dtype)
    ntok = float(maskf.sum())
    mask_node = g.const(maskf)

    q_arr = None
    if schedule.smoothing != "none":
        y_arr = one_hot(batch.tgt, V, dtype=np.float64)
        q_arr = _target_distribution(y_arr, c.value.astype(np.float64), maskf, schedule)

    if schedule.hint_fraction > 0 or batch.hint_mask.any():
        c3 = g.reshape(c, (B, T, 1))
        y_hint = g.const(
            q_arr if (schedule.smooth_hints and q_arr is not None) else one_hot(batch.tgt, V, g.dtype)
        )
        p_hint = g.add(g.mul(c3, p), g.mul(g.sub(g.const(np.asarray(1.0)), c3), y_hint))
        hm = g.const(batch.hint_mask.astype(g.dtype)[:, None, None])
        one = g.const(np.asarray(1.0))
        p_used = g.add(g.mul(hm, p_hint), g.mul(g.sub(one, hm), p))
    else:
        p_used = p

    if schedule.smoothing == "none":
        tok_losses = g.neg(g.log(g.gather_last(p_used, batch.tgt)))
    else:
        tok_losses = g.neg(g.sum(g.mul(g.const(q_arr), g.log(p_used)), axis=-1))
    l_nmt = g.scale(g.sum(g.mul(tok_losses, mask_node)), 1.0 / ntok)

    mean_conf = float((c.value * maskf).sum() / ntok)
    if not schedule.confidence_enabled:
        bd = LossBreakdown(float(l_nmt.value), 0.0, 0.0, float(l_nmt.value), mean_conf)
        return l_nmt, bd

    l_conf = g.scale(g.sum(g.mul(g.neg(g.log(c)), mask_node)), 1.0 / ntok)
    lam = lambda_at(step, schedule.lambda0, schedule.beta)
    total = g.add(l_nmt, g.scale(l_conf, lam))
    bd = LossBreakdown(
        l_nmt=float(l_nmt.value),
        l_conf=float(l_conf.value),
        lam=lam,
        l_total=float(l_nmt.value) + lam * float(l_conf.value),
        mean_conf=mean_conf,
    )
    return total, bd


# ---------------------------------------------------------------------------
# Optimizer and loop
# ---------------------------------------------------------------------------


class Adam:
    def __init__(self, params: dict[str, np.ndarray], schedule: TrainSchedule, d_model: int):
        self.params = params
        self.sched = schedule
        self.d_model = d_model
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def lr(self, t: int) -> float:
        s = self.sched
        return s.lr_scale * self.d_model**-0.5 * min(t**-0.5, t * s.warmup_steps**-1.5)

    def step(self, grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        lr = self.lr(self.t)
        b1, b2, eps = self.sched.adam_beta1, self.sched.adam_beta2, self.sched.adam_eps
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for k, p in self.params.items():
            gr = grads[k]
            m = self.m[k]
            v = self.v[k]
            m *= b1
            m += (1 - b1) * gr
            v *= b2
            v += (1 - b2) * (gr * gr)
            update = m / c1
            update /= np.sqrt(v / c2) + eps
            update *= lr
            p -= update


@dataclass
class TrainResult:
    model: SeqModel
    records: list[dict] = field(default_factory=list)

    @property
    def final_accuracy(self) -> float:
        return self.records[-1]["token_accuracy"] if self.records else float("nan")


def batch_token_accuracy(fp: ForwardPass, batch: Batch) -> float:
    pred = fp.probs.value.argmax(axis=-1)
    hits = (pred == batch.tgt) & batch.tgt_mask
    return float(hits.sum() / batch.tgt_mask.sum())


def train(
    model: SeqModel,
    corpus: ParallelCorpus,
    schedule: TrainSchedule,
    *,
    run_dir=None,
    vocab=None,
) -> TrainResult:
    """Optimize in place for schedule.total_steps; logs one record per step.

    Writes train_log.jsonl plus periodic checkpoints when run_dir is given.
    Raises DivergenceError (after writing a diagnostic record) on non-finite
    loss.
    """
    rng = RngState(schedule.seed)
    drop_gen = rng.stream("dropout").generator()
    opt = Adam(model.params, schedule, model.config.d_model)
    records: list[dict] = []
    log_fh = None
    if run_dir is not None:
        run_dir = Path(run_dir)
        run_dir.mkdir(parents=True, exist_ok=True)
        log_fh = open(run_dir / "train_log.jsonl", "w", encoding="utf-8")

    try:
        step = 0
        epoch = 0
        while step < schedule.total_steps:
            batches = make_batches(
                corpus,
                schedule.batch_size,
                schedule.hint_fraction,
                rng.stream(f"data/epoch{epoch}"),
            )
            epoch += 1
            for batch in batches:
                if step >= schedule.total_steps:
                    break
                try:
                    fp = forward_teacher_forced(
                        model, batch, dropout_enabled=True, rng=drop_gen
                    )
                    loss_node, bd = build_losses(fp, batch, schedule, step)
                except NumericError as e:
                    record = {"step": step, "diverged": True, "error": str(e)}
                    records.append(record)
                    if log_fh:
                        log_fh.write(json.dumps(record) + "\n")
                    raise DivergenceError(f"non-finite forward at step {step}: {e}") from e
                record = {
                    "step": step,
                    "L_NMT": bd.l_nmt,
                    "L_Conf": bd.l_conf,
                    "lambda": bd.lam,
                    "L_total": bd.l_total,
                    "mean_confidence": bd.mean_conf,
                    "token_accuracy": batch_token_accuracy(fp, batch),
                }
                if not math.isfinite(bd.l_total):
                    record["diverged"] = True
                    records.append(record)
                    if log_fh:
                        log_fh.write(json.dumps(record) + "\n")
                    raise DivergenceError(f"non-finite loss at step {step}")
                grads = fp.graph.backward(loss_node)
                opt.step(grads)
                records.append(record)
                if log_fh:
                    log_fh.write(json.dumps(record) + "\n")
                step += 1
                if (
                    run_dir is not None
                    and schedule.checkpoint_every
                    and step % schedule.checkpoint_every == 0
                    and vocab is not None
                ):
                    save_checkpoint(run_dir / f"checkpoint_{step}.npz", model, vocab)
    finally:
        if log_fh:
            log_fh.close()
    return TrainResult(model=model, records=records)


def evaluate_token_accuracy(
    model: SeqModel, corpus: ParallelCorpus, batch_size: int = 64, seed: int = 0
) -> float:
    """Teacher-forced token accuracy with dropout off."""
    total_hits = 0
    total_tok = 0
    for batch in make_batches(corpus, batch_size, 0.0, RngState(seed).stream("eval")):
        fp = forward_teacher_forced(model, batch, dropout_enabled=False)
        pred = fp.probs.value.argmax(axis=-1)
        total_hits += int(((pred == batch.tgt) & batch.tgt_mask).sum())
        total_tok += int(batch.tgt_mask.sum())
    return total_hits / total_tok
