"""Synthetic translation tasks, corpus I/O, noise injection, and batching.

A TaskSpec deterministically generates a parallel corpus: source sentences
are drawn Zipf-like over a content-token range and targets are a bijective
mapping of the source (token substitution plus optional bounded local
reordering), so a small transformer can learn the task while token
frequencies stay realistically skewed.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataFormatError
from .rng import RngState, as_generator
from .vocab import BOS, EOS, PAD, UNK, Vocab

CLEAN = "clean"


# ---------------------------------------------------------------------------
# Corpus containers
# ---------------------------------------------------------------------------


@dataclass
class SentencePair:
    src: np.ndarray
    tgt: np.ndarray
    corrupted_fraction: float = 0.0
    domain: str = "in-domain"
    index: int = 0

    @property
    def clean(self) -> bool:
        return self.corrupted_fraction == 0.0

    @property
    def noise_label(self) -> str:
        return CLEAN if self.clean else "noisy"


class ParallelCorpus:
    """Aligned source/target id sequences plus per-pair noise metadata."""

    def __init__(self, pairs: list[SentencePair], vocab: Vocab):
        for p in pairs:
            if len(p.src) == 0 or len(p.tgt) == 0:
                raise ConfigError("corpus sentences must be non-empty")
            if p.src.max(initial=0) >= len(vocab) or p.tgt.max(initial=0) >= len(vocab):
                raise ConfigError("corpus ids exceed vocab size")
            if not (0.0 <= p.corrupted_fraction <= 1.0):
                raise ConfigError("corrupted fraction must lie in [0, 1]")
        self.pairs = pairs
        self.vocab = vocab

    def __len__(self) -> int:
        return len(self.pairs)

    def __iter__(self):
        return iter(self.pairs)

    def __getitem__(self, i: int) -> SentencePair:
        return self.pairs[i]


@dataclass
class Batch:
    """Padded id matrices with masks; hint_mask selects hint-eligible rows."""

    src: np.ndarray        # (B, S)
    tgt: np.ndarray        # (B, T+1), each row is y_1..y_T EOS PAD...
    src_mask: np.ndarray   # (B, S) bool, True on non-PAD
    tgt_mask: np.ndarray   # (B, T+1) bool
    hint_mask: np.ndarray  # (B,) bool
    indices: np.ndarray    # (B,) positions in the source corpus

    @property
    def size(self) -> int:
        return self.src.shape[0]


# ---------------------------------------------------------------------------
# Task specification and mapping rules
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TaskSpec:
    """Deterministic recipe for a synthetic translation corpus."""

    vocab_size: int = 200
    length_range: tuple[int, int] = (5, 15)
    rule: str = "shift-swap:17"
    domain: str = "in-domain"
    seed: int = 0
    content_range: tuple[int, int] | None = None  # token-string indices, default [4, V)
    zipf_a: float = 1.1  # 0 => uniform source tokens

    def __post_init__(self):
        if self.vocab_size < 6:
            raise ConfigError("vocab_size must be >= 6")
        lo, hi = self.length_range
        if not (1 <= lo <= hi):
            raise ConfigError(f"bad length range {self.length_range}")
        if self.zipf_a < 0:
            raise ConfigError("zipf_a must be >= 0")
        _parse_rule(self.rule)
        lo, hi = self.content_span
        if hi - lo < 2:
            raise ConfigError("content range must hold at least two tokens")

    @property
    def content_span(self) -> tuple[int, int]:
        return self.content_range if self.content_range is not None else (4, self.vocab_size)

    def build_vocab(self) -> Vocab:
        return Vocab.synthetic(self.vocab_size)


def _parse_rule(rule: str) -> tuple[str, int]:
    if rule == "identity":
        return "identity", 0
    for prefix in ("shift-swap:", "shift-rswap:", "shift:"):
        if rule.startswith(prefix):
            try:
                k = int(rule[len(prefix):])
            except ValueError as e:
                raise ConfigError(f"bad mapping rule {rule!r}") from e
            return prefix[:-1], k
    raise ConfigError(f"unknown mapping rule {rule!r}")


def apply_rule(
    rule: str, ids: np.ndarray, content_span: tuple[int, int], gen=None
) -> np.ndarray:
    """Map source content ids to target ids.

    Token substitution is a deterministic bijection on the content span.
    "shift-swap" always swaps adjacent pairs; "shift-rswap" swaps each
    adjacent pair with probability 1/2, drawn from `gen` at generation time,
    so clean targets carry irreducible word-order uncertainty (the decoder
    cannot know which order a given corpus sentence realized).
    """
    kind, k = _parse_rule(rule)
    lo, hi = content_span
    n = hi - lo
    out = np.asarray(ids).copy()
    content = (out >= lo) & (out < hi)
    if kind in ("shift", "shift-swap", "shift-rswap"):
        out[content] = (out[content] - lo + k) % n + lo
    if kind == "shift-swap":
        # swap adjacent positions pairwise; odd tail stays put
        even = len(out) - len(out) % 2
        swapped = out[:even].reshape(-1, 2)[:, ::-1].reshape(-1)
        out = np.concatenate([swapped, out[even:]])
    elif kind == "shift-rswap":
        if gen is None:
            raise ConfigError("shift-rswap needs a random source at generation")
        for start in range(0, len(out) - 1, 2):
            if gen.random() < 0.5:
                out[start], out[start + 1] = out[start + 1], out[start]
    return out


def shifted_rule(rule: str, content_span: tuple[int, int]) -> str:
    """A rule guaranteed to differ from `rule` on every content token."""
    kind, k = _parse_rule(rule)
    n = content_span[1] - content_span[0]
    bump = max(1, n // 2)
    if kind == "identity":
        return f"shift:{bump}"
    return f"{kind}:{(k + bump) % n or 1}"


# ---------------------------------------------------------------------------
# Generation
# ---------------------------------------------------------------------------


def _token_pmf(spec: TaskSpec) -> np.ndarray:
    lo, hi = spec.content_span
    ranks = np.arange(1, hi - lo + 1, dtype=np.float64)
    if spec.zipf_a == 0:
        w = np.ones_like(ranks)
    else:
        w = 1.0 / ranks**spec.zipf_a
    return w / w.sum()


def generate_corpus(spec: TaskSpec, n: int) -> ParallelCorpus:
    """`n` source/target pairs fully determined by (spec, seed)."""
    if n < 1:
        raise ConfigError("corpus size must be >= 1")
    gen = RngState(spec.seed).stream("data/generate").generator()
    lo, hi = spec.content_span
    pmf = _token_pmf(spec)
    vocab = spec.build_vocab()
    lmin, lmax = spec.length_range
    pairs = []
    for i in range(n):
        length = int(gen.integers(lmin, lmax + 1))
        src = gen.choice(np.arange(lo, hi), size=length, p=pmf)
        src_ids = _encode_span(src, vocab)
        tgt_ids = _encode_span(apply_rule(spec.rule, src, spec.content_span, gen), vocab)
        pairs.append(SentencePair(src_ids, tgt_ids, domain=spec.domain, index=i))
    return ParallelCorpus(pairs, vocab)


def _encode_span(global_ids: np.ndarray, vocab: Vocab) -> np.ndarray:
    """Map global token-string indices to ids in `vocab` (missing -> UNK)."""
    out = np.asarray(global_ids).copy()
    missing = out >= len(vocab)
    out[missing] = UNK
    return out.astype(np.int64)


def reference_targets(spec: TaskSpec, corpus: ParallelCorpus) -> list[np.ndarray]:
    """True targets under a deterministic task rule.

    Stochastic-reordering rules realize their order at generation time, so
    the reference is the corpus target itself, not a recomputation; use
    original_targets on the pre-corruption corpus instead.
    """
    kind, _ = _parse_rule(spec.rule)
    if kind == "shift-rswap":
        raise ConfigError("reference_targets is undefined for stochastic reordering")
    return [apply_rule(spec.rule, p.src, spec.content_span) for p in corpus]


def original_targets(corpus: ParallelCorpus) -> list[np.ndarray]:
    """Copy of every target; taken before corruption, these are references."""
    return [p.tgt.copy() for p in corpus]


# ---------------------------------------------------------------------------
# Noise and domain shift
# ---------------------------------------------------------------------------


def corrupt_targets(
    corpus: ParallelCorpus, sentence_rate: float, word_rate: float, rng
) -> ParallelCorpus:
    """Replace target tokens of a sentence_rate share of pairs.

    Within a selected pair, each target position is redrawn with probability
    word_rate, uniformly over non-reserved vocab tokens (the draw may
    coincide with the original token; the recorded corrupted_fraction counts
    attempted positions). Sources, pair count and order never change.
    """
    if not (0.0 <= sentence_rate <= 1.0 and 0.0 <= word_rate <= 1.0):
        raise ConfigError("corruption rates must lie in [0, 1]")
    gen = as_generator(rng)
    n = len(corpus)
    k = int(round(n * sentence_rate))
    chosen = set(gen.permutation(n)[:k].tolist())
    vsize = len(corpus.vocab)
    pairs = []
    for i, p in enumerate(corpus):
        if i not in chosen:
            pairs.append(replace(p, tgt=p.tgt.copy()))
            continue
        tgt = p.tgt.copy()
        hits = gen.random(len(tgt)) < word_rate
        if hits.any():
            tgt[hits] = gen.integers(4, vsize, size=int(hits.sum()))
        pairs.append(
            replace(p, tgt=tgt, corrupted_fraction=float(hits.sum()) / len(tgt))
        )
    return ParallelCorpus(pairs, corpus.vocab)


OOD_SHIFTS = ("vocab-shift", "length-shift", "rule-shift")


def generate_ood_corpus(
    base: TaskSpec,
    shift: str,
    n: int,
    *,
    length_range: tuple[int, int] = (30, 40),
    seed_offset: int = 1,
) -> ParallelCorpus:
    """A corpus from a shifted distribution, encoded under the base vocab.

    vocab-shift draws content tokens from a range disjoint from the base
    vocab, so re-encoding turns them into UNK; length-shift lengthens the
    sentences; rule-shift swaps in a mapping rule that differs from the base
    rule on every content token.
    """
    if shift not in OOD_SHIFTS:
        raise ConfigError(f"unknown domain shift {shift!r}; expected one of {OOD_SHIFTS}")
    seed = base.seed + seed_offset
    if shift == "vocab-shift":
        lo, hi = base.content_span
        width = hi - lo
        spec = replace(
            base,
            seed=seed,
            domain=shift,
            content_range=(base.vocab_size, base.vocab_size + width),
        )
    elif shift == "length-shift":
        spec = replace(base, seed=seed, domain=shift, length_range=length_range)
    else:
        spec = replace(
            base, seed=seed, domain=shift, rule=shifted_rule(base.rule, base.content_span)
        )
    gen = RngState(spec.seed).stream("data/generate").generator()
    lo, hi = spec.content_span
    pmf = _token_pmf(spec)
    base_vocab = base.build_vocab()
    lmin, lmax = spec.length_range
    pairs = []
    for i in range(n):
        length = int(gen.integers(lmin, lmax + 1))
        src = gen.choice(np.arange(lo, hi), size=length, p=pmf)
        tgt = apply_rule(spec.rule, src, spec.content_span, gen)
        pairs.append(
            SentencePair(
                _encode_span(src, base_vocab),
                _encode_span(tgt, base_vocab),
                domain=shift,
                index=i,
            )
        )
    return ParallelCorpus(pairs, base_vocab)


def reencode(corpus: ParallelCorpus, to_vocab: Vocab) -> ParallelCorpus:
    """Re-express a corpus in another vocab via token strings (missing -> UNK)."""
    pairs = []
    for p in corpus:
        src = np.array(to_vocab.encode(corpus.vocab.decode(p.src)), dtype=np.int64)
        tgt = np.array(to_vocab.encode(corpus.vocab.decode(p.tgt)), dtype=np.int64)
        pairs.append(replace(p, src=src, tgt=tgt))
    return ParallelCorpus(pairs, to_vocab)


def unk_rate(corpus: ParallelCorpus) -> float:
    total = sum(len(p.src) for p in corpus)
    unk = sum(int((p.src == UNK).sum()) for p in corpus)
    return unk / total if total else 0.0


# ---------------------------------------------------------------------------
# Plain-text I/O
# ---------------------------------------------------------------------------


def load_parallel_text(
    src_path, tgt_path, vocab: Vocab | None = None, vocab_cap: int | None = None
) -> tuple[ParallelCorpus, int]:
    """Whitespace-tokenized parallel files, one sentence per line.

    Returns (corpus, skipped_line_count). Lines empty on either side are
    skipped. When `vocab` is None a frequency vocab is built over both sides,
    capped at `vocab_cap` content tokens.
    """
    src_lines = Path(src_path).read_text(encoding="utf-8").splitlines()
    tgt_lines = Path(tgt_path).read_text(encoding="utf-8").splitlines()
    if len(src_lines) != len(tgt_lines):
        raise DataFormatError(
            f"line count mismatch: {len(src_lines)} source vs {len(tgt_lines)} target"
        )
    rows = []
    skipped = 0
    for s, t in zip(src_lines, tgt_lines):
        s_toks, t_toks = s.split(), t.split()
        if not s_toks or not t_toks:
            skipped += 1
            continue
        rows.append((s_toks, t_toks))
    if not rows:
        raise DataFormatError("no usable sentence pairs")
    if vocab is None:
        counts = Counter()
        for s_toks, t_toks in rows:
            counts.update(s_toks)
            counts.update(t_toks)
        vocab = Vocab.from_counts(counts, cap=vocab_cap)
    pairs = [
        SentencePair(
            np.array(vocab.encode(s), dtype=np.int64),
            np.array(vocab.encode(t), dtype=np.int64),
            index=i,
        )
        for i, (s, t) in enumerate(rows)
    ]
    return ParallelCorpus(pairs, vocab), skipped


def write_parallel_text(corpus: ParallelCorpus, src_path, tgt_path) -> None:
    with open(src_path, "w", encoding="utf-8") as fs, open(tgt_path, "w", encoding="utf-8") as ft:
        for p in corpus:
            fs.write(" ".join(corpus.vocab.decode(p.src)) + "\n")
            ft.write(" ".join(corpus.vocab.decode(p.tgt)) + "\n")


def write_corpus_metadata(corpus: ParallelCorpus, path) -> None:
    """Line-delimited JSON sidecar: one record per pair."""
    with open(path, "w", encoding="utf-8") as f:
        for p in corpus:
            f.write(
                json.dumps(
                    {
                        "index": p.index,
                        "noise_label": p.noise_label,
                        "corrupted_fraction": p.corrupted_fraction,
                        "domain": p.domain,
                    }
                )
                + "\n"
            )


# ---------------------------------------------------------------------------
# Batching
# ---------------------------------------------------------------------------


def make_batches(
    corpus: ParallelCorpus, batch_size: int, hint_fraction: float, rng
) -> list[Batch]:
    """Seeded shuffle into padded batches; EOS is appended to each target row.

    Per batch, floor(hint_fraction * batch) rows get hint_mask set.
    """
    if batch_size < 1:
        raise ConfigError("batch size must be >= 1")
    if not (0.0 <= hint_fraction <= 1.0):
        raise ConfigError("hint fraction must lie in [0, 1]")
    gen = as_generator(rng)
    order = gen.permutation(len(corpus))
    batches = []
    for start in range(0, len(corpus), batch_size):
        idx = order[start : start + batch_size]
        rows = [corpus[i] for i in idx]
        b = len(rows)
        s_max = max(len(p.src) for p in rows)
        t_max = max(len(p.tgt) for p in rows) + 1  # room for EOS
        src = np.full((b, s_max), PAD, dtype=np.int64)
        tgt = np.full((b, t_max), PAD, dtype=np.int64)
        for r, p in enumerate(rows):
            src[r, : len(p.src)] = p.src
            tgt[r, : len(p.tgt)] = p.tgt
            tgt[r, len(p.tgt)] = EOS
        hint = np.zeros(b, dtype=bool)
        n_hint = int(hint_fraction * b)
        if n_hint:
            hint[gen.permutation(b)[:n_hint]] = True
        batches.append(
            Batch(
                src=src,
                tgt=tgt,
                src_mask=src != PAD,
                tgt_mask=tgt != PAD,
                hint_mask=hint,
                indices=np.asarray(idx),
            )
        )
    return batches


def decoder_inputs(tgt: np.ndarray) -> np.ndarray:
    """Shift target rows right and prepend BOS."""
    dec_in = np.empty_like(tgt)
    dec_in[:, 0] = BOS
    dec_in[:, 1:] = tgt[:, :-1]
    return dec_in
