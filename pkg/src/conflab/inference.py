"""Decoding and scoring passes.

Beam search ranks finished hypotheses by sum-of-log-probs divided by the
GNMT length penalty ((5+T)/6)^alpha. Confidence values are recorded
alongside every token but never modify the distribution: hint interpolation
is a training-only construct and no code path here touches it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import log_floored
from .errors import ConfigError
from .model import SeqModel, forward_seq2seq
from .rng import RngState
from .vocab import BOS, EOS, PAD, UNK

DEFAULT_ALPHA = 0.6
DEFAULT_MC_PASSES = 30


@dataclass
class Hypothesis:
    tokens: list[int]          # generated ids, EOS included when reached
    logps: np.ndarray          # per-token log p
    confs: np.ndarray          # per-token c
    score: float               # length-normalized
    finished: bool
    hit_max_len: bool = False

    @property
    def length(self) -> int:
        return len(self.tokens)


@dataclass
class ForcedScore:
    token_ids: np.ndarray
    logp: np.ndarray           # log p(y_t)
    conf: np.ndarray           # c_t
    entropy: np.ndarray        # H(p_t) in nats, recorded during the pass
    pass_index: int | None = None
    unk_warnings: int = 0

    @property
    def length(self) -> int:
        return len(self.token_ids)


def length_penalty(length: int, alpha: float) -> float:
    return ((5.0 + length) / 6.0) ** alpha


def _entropy_rows(p: np.ndarray) -> np.ndarray:
    return -(p * log_floored(p)).sum(axis=-1)


def make_scorer(model: SeqModel, source: np.ndarray):
    """Returns step_fn(prefixes) -> (logp (B, V), conf (B,)) for beam search.

    Prefixes start with BOS; the scorer runs the decoder on each prefix with
    dropout off and returns last-position log-probabilities and confidence.
    """
    source = np.asarray(source, dtype=np.int64)

    def step_fn(prefixes: np.ndarray):
        b = prefixes.shape[0]
        src = np.tile(source, (b, 1))
        src_mask = np.ones_like(src, dtype=bool)
        fp = forward_seq2seq(model, src, src_mask, prefixes, dropout_enabled=False)
        logp = log_floored(fp.probs.value[:, -1, :])
        conf = fp.conf.value[:, -1]
        return logp, conf

    return step_fn


def beam_search(
    model: SeqModel | None,
    source: np.ndarray | None,
    beam_size: int = 4,
    alpha: float = DEFAULT_ALPHA,
    max_len: int = 64,
    step_fn=None,
    n_best: int | None = None,
) -> list[Hypothesis]:
    """Length-normalized beam search; returns hypotheses best-first.

    PAD and BOS are never generated. A custom step_fn replaces the model
    (used by oracle tests).
    """
    if beam_size < 1:
        raise ConfigError("beam size must be >= 1")
    if step_fn is None:
        if model is None or source is None:
            raise ConfigError("beam search needs a model+source or a step_fn")
        step_fn = make_scorer(model, source)
    n_best = beam_size if n_best is None else min(n_best, beam_size)

    live = [([BOS], 0.0, [], [])]  # prefix, sum logp, logps, confs
    finished: list[Hypothesis] = []
    while live and len(live[0][0]) - 1 < max_len:
        prefixes = np.array([h[0] for h in live], dtype=np.int64)
        logp, conf = step_fn(prefixes)
        logp = np.array(logp, dtype=np.float64, copy=True)
        logp[:, PAD] = -np.inf
        logp[:, BOS] = -np.inf
        candidates = []
        for i, (prefix, total, lps, cfs) in enumerate(live):
            top = np.argsort(logp[i])[::-1][:beam_size]
            for tok in top:
                candidates.append((total + logp[i, tok], i, int(tok)))
        candidates.sort(key=lambda t: -t[0])
        new_live = []
        for total, i, tok in candidates[:beam_size]:
            prefix, _, lps, cfs = live[i]
            lps2 = lps + [logp[i, tok]]
            cfs2 = cfs + [float(conf[i])]
            if tok == EOS:
                t = len(prefix)  # generated tokens incl. EOS
                finished.append(
                    Hypothesis(
                        tokens=prefix[1:] + [tok],
                        logps=np.array(lps2),
                        confs=np.array(cfs2),
                        score=total / length_penalty(t, alpha),
                        finished=True,
                    )
                )
            else:
                new_live.append((prefix + [tok], total, lps2, cfs2))
        live = new_live
        if len(finished) >= beam_size:
            break
    for prefix, total, lps, cfs in live:
        t = len(prefix) - 1
        if t == 0:
            continue
        finished.append(
            Hypothesis(
                tokens=prefix[1:],
                logps=np.array(lps),
                confs=np.array(cfs),
                score=total / length_penalty(t, alpha),
                finished=True,
                hit_max_len=True,
            )
        )
    finished.sort(key=lambda h: -h.score)
    return finished[:n_best]


def greedy_decode(
    model: SeqModel, source: np.ndarray, max_len: int = 64, step_fn=None
) -> Hypothesis:
    """Independent argmax decoder (oracle for beam_size=1)."""
    if step_fn is None:
        step_fn = make_scorer(model, source)
    prefix = [BOS]
    lps: list[float] = []
    cfs: list[float] = []
    hit_max = False
    while True:
        logp, conf = step_fn(np.array([prefix], dtype=np.int64))
        row = np.array(logp[0], dtype=np.float64, copy=True)
        row[PAD] = -np.inf
        row[BOS] = -np.inf
        tok = int(row.argmax())
        lps.append(float(row[tok]))
        cfs.append(float(conf[0]))
        prefix.append(tok)
        if tok == EOS:
            break
        if len(prefix) - 1 >= max_len:
            hit_max = True
            break
    tokens = prefix[1:]
    return Hypothesis(
        tokens=tokens,
        logps=np.array(lps),
        confs=np.array(cfs),
        score=float(np.sum(lps)) / length_penalty(len(tokens), DEFAULT_ALPHA),
        finished=True,
        hit_max_len=hit_max,
    )


def _forced_pass(
    model: SeqModel,
    source: np.ndarray,
    target: np.ndarray,
    *,
    dropout_enabled: bool = False,
    rng=None,
    dropout_rate: float | None = None,
    pass_index: int | None = None,
) -> ForcedScore:
    source = np.asarray(source, dtype=np.int64)
    target = np.asarray(target, dtype=np.int64).copy()
    if len(target) == 0:
        raise ConfigError("force decoding needs a non-empty target")
    unk_warnings = int((target >= model.config.vocab_size).sum())
    target[target >= model.config.vocab_size] = UNK
    src = source[None, :]
    src_mask = np.ones_like(src, dtype=bool)
    dec_in = np.concatenate([[BOS], target[:-1]])[None, :]
    fp = forward_seq2seq(
        model,
        src,
        src_mask,
        dec_in,
        dropout_enabled=dropout_enabled,
        rng=rng,
        dropout_rate=dropout_rate,
    )
    p = fp.probs.value[0]
    logp = log_floored(p[np.arange(len(target)), target])
    return ForcedScore(
        token_ids=target,
        logp=logp,
        conf=fp.conf.value[0].copy(),
        entropy=_entropy_rows(p),
        pass_index=pass_index,
        unk_warnings=unk_warnings,
    )


def force_decode(model: SeqModel, source: np.ndarray, target: np.ndarray) -> ForcedScore:
    """Teacher-forced scoring of a given target, dropout off, no hints.

    Out-of-vocab target ids are scored as UNK and counted in unk_warnings.
    """
    return _forced_pass(model, source, target)


def mc_passes(
    model: SeqModel,
    source: np.ndarray,
    target: np.ndarray,
    k: int = DEFAULT_MC_PASSES,
    dropout_rate: float | None = None,
    rng: RngState | None = None,
) -> list[ForcedScore]:
    """K dropout-perturbed forced passes, one rng sub-stream ("mc/<k>") each."""
    if k < 1:
        raise ConfigError("mc_passes needs k >= 1")
    rng = rng if rng is not None else RngState(0)
    rate = model.config.dropout if dropout_rate is None else dropout_rate
    out = []
    for i in range(k):
        gen = rng.stream(f"mc/{i}").generator()
        out.append(
            _forced_pass(
                model,
                source,
                target,
                dropout_enabled=True,
                rng=gen,
                dropout_rate=rate,
                pass_index=i,
            )
        )
    return out
