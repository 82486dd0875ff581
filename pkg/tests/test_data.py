"""Synthetic task generation, corruption, OOD shifts, text I/O, batching."""

import numpy as np
import pytest

from conflab.data import (
    TaskSpec,
    apply_rule,
    corrupt_targets,
    decoder_inputs,
    generate_corpus,
    generate_ood_corpus,
    load_parallel_text,
    make_batches,
    reencode,
    shifted_rule,
    unk_rate,
    write_corpus_metadata,
    write_parallel_text,
)
from conflab.errors import ConfigError, DataFormatError
from conflab.rng import RngState
from conflab.runio import read_jsonl
from conflab.vocab import BOS, EOS, PAD, UNK, Vocab


def test_vocab_reserved_ids():
    v = Vocab.synthetic(10)
    assert v.id_of("<pad>") == 0 and v.id_of("<bos>") == 1
    assert v.id_of("<eos>") == 2 and v.id_of("<unk>") == 3
    assert v.id_of("not-a-token") == UNK


def test_vocab_roundtrip():
    v = Vocab.synthetic(10)
    ids = [4, 7, 9]
    assert v.encode(v.decode(ids)) == ids


def test_vocab_requires_reserved_prefix():
    with pytest.raises(ConfigError):
        Vocab(["a", "b", "c", "d", "e"])


# -- mapping rules --------------------------------------------------------


def test_identity_rule():
    spec = TaskSpec(vocab_size=10, rule="identity", length_range=(3, 3), seed=0)
    corpus = generate_corpus(spec, 1)
    assert np.array_equal(corpus[0].src, corpus[0].tgt)


def test_shift_rule_matches_plain_addition():
    # content span [4, 200): shift 100 sends 5 -> 105, 6 -> 106
    out = apply_rule("shift:100", np.array([5, 6]), (4, 200))
    assert out.tolist() == [105, 106]


def test_shift_swap_rule_swaps_adjacent():
    out = apply_rule("shift-swap:0", np.array([5, 6, 7, 8, 9]), (4, 200))
    assert out.tolist() == [6, 5, 8, 7, 9]


def test_rule_is_bijection_on_content():
    lo, hi = 4, 40
    ids = np.arange(lo, hi)
    out = apply_rule("shift:17", ids, (lo, hi))
    assert sorted(out.tolist()) == ids.tolist()


def test_generation_deterministic():
    spec = TaskSpec(vocab_size=50, seed=11)
    a = generate_corpus(spec, 20)
    b = generate_corpus(spec, 20)
    for pa, pb in zip(a, b):
        assert np.array_equal(pa.src, pb.src) and np.array_equal(pa.tgt, pb.tgt)


def test_generated_corpus_roundtrips_without_unk():
    corpus = generate_corpus(TaskSpec(vocab_size=60, seed=3), 50)
    v = corpus.vocab
    for p in corpus:
        assert UNK not in p.src and UNK not in p.tgt
        assert np.array_equal(np.array(v.encode(v.decode(p.src))), p.src)


# -- corruption --------------------------------------------------------------


def test_corrupt_zero_rate_is_identity():
    corpus = generate_corpus(TaskSpec(vocab_size=30, seed=5), 40)
    out = corrupt_targets(corpus, 0.0, 0.5, RngState(1))
    for a, b in zip(corpus, out):
        assert np.array_equal(a.tgt, b.tgt)
        assert b.clean


def test_corrupt_full_rate_binomial():
    # every position redrawn uniformly over the V-4 non-reserved tokens;
    # expected differing fraction (V-5)/(V-4), checked within 3 sigma
    spec = TaskSpec(vocab_size=30, length_range=(8, 12), seed=7)
    corpus = generate_corpus(spec, 200)
    out = corrupt_targets(corpus, 1.0, 1.0, RngState(2))
    total = sum(len(p.tgt) for p in corpus)
    differing = sum(
        int((a.tgt != b.tgt).sum()) for a, b in zip(corpus, out)
    )
    p = (30 - 5) / (30 - 4)
    sigma = np.sqrt(total * p * (1 - p))
    assert abs(differing - total * p) <= 3 * sigma
    for pair in out:
        assert pair.corrupted_fraction == 1.0


@pytest.mark.parametrize("rate", [0.2, 0.4, 0.6, 0.8])
def test_corrupt_sentence_rates(rate):
    corpus = generate_corpus(TaskSpec(vocab_size=40, seed=9), 200)
    out = corrupt_targets(corpus, rate, 0.6, RngState(3))
    n_noisy = sum(0 if p.clean else 1 for p in out)
    # exact count of selected sentences, minus the rare all-miss sentences
    assert n_noisy <= round(200 * rate)
    assert n_noisy >= round(200 * rate) * 0.9


def test_corrupt_preserves_sources_and_order():
    corpus = generate_corpus(TaskSpec(vocab_size=40, seed=13), 50)
    out = corrupt_targets(corpus, 0.7, 0.5, RngState(5))
    assert len(out) == len(corpus)
    for a, b in zip(corpus, out):
        assert np.array_equal(a.src, b.src)
        assert a.index == b.index


def test_corrupted_fraction_counts_attempts_exactly():
    corpus = generate_corpus(TaskSpec(vocab_size=40, seed=17), 30)
    out = corrupt_targets(corpus, 1.0, 0.4, RngState(8))
    for p in out:
        attempts = p.corrupted_fraction * len(p.tgt)
        assert abs(attempts - round(attempts)) < 1e-9


# -- OOD shifts ---------------------------------------------------------------


def test_vocab_shift_gives_full_unk():
    base = TaskSpec(vocab_size=40, seed=21)
    ood = generate_ood_corpus(base, "vocab-shift", 20)
    assert unk_rate(ood) == 1.0


def test_length_shift_mean_difference():
    base = TaskSpec(vocab_size=40, length_range=(5, 15), seed=23)
    ood = generate_ood_corpus(base, "length-shift", 100, length_range=(30, 40))
    base_corpus = generate_corpus(base, 100)
    mean_base = np.mean([len(p.src) for p in base_corpus])
    mean_ood = np.mean([len(p.src) for p in ood])
    assert mean_ood - mean_base >= 15


def test_rule_shift_differs_everywhere():
    base = TaskSpec(vocab_size=40, rule="identity", seed=25)
    new_rule = shifted_rule("identity", base.content_span)
    ids = np.arange(4, 40)
    assert np.all(apply_rule(new_rule, ids, (4, 40)) != ids)


def test_rule_shift_corpus_targets_differ():
    base = TaskSpec(vocab_size=40, rule="identity", length_range=(6, 6), seed=27)
    ood = generate_ood_corpus(base, "rule-shift", 10)
    for p in ood:
        assert np.all(p.tgt != apply_rule(base.rule, p.src, base.content_span))


def test_unknown_shift_rejected():
    with pytest.raises(ConfigError):
        generate_ood_corpus(TaskSpec(vocab_size=40), "time-shift", 5)


# -- text I/O -----------------------------------------------------------------


def test_parallel_text_roundtrip(tmp_path):
    src = tmp_path / "s.txt"
    tgt = tmp_path / "t.txt"
    src.write_text("a b c\nd e\n", encoding="utf-8")
    tgt.write_text("x y z\nw v\n", encoding="utf-8")
    corpus, skipped = load_parallel_text(src, tgt)
    assert skipped == 0 and len(corpus) == 2
    out_s = tmp_path / "rs.txt"
    out_t = tmp_path / "rt.txt"
    write_parallel_text(corpus, out_s, out_t)
    assert out_s.read_text(encoding="utf-8") == "a b c\nd e\n"


def test_parallel_text_unknown_token_is_unk(tmp_path):
    src = tmp_path / "s.txt"
    tgt = tmp_path / "t.txt"
    src.write_text("a b\n", encoding="utf-8")
    tgt.write_text("x y\n", encoding="utf-8")
    corpus, _ = load_parallel_text(src, tgt)
    vocab = corpus.vocab
    other, _ = load_parallel_text(src, tgt, vocab=Vocab.synthetic(6))
    assert np.all(other[0].src == UNK)


def test_parallel_text_line_count_mismatch(tmp_path):
    src = tmp_path / "s.txt"
    tgt = tmp_path / "t.txt"
    src.write_text("a\nb\n", encoding="utf-8")
    tgt.write_text("x\n", encoding="utf-8")
    with pytest.raises(DataFormatError):
        load_parallel_text(src, tgt)


def test_parallel_text_skips_empty_lines_with_count(tmp_path):
    src = tmp_path / "s.txt"
    tgt = tmp_path / "t.txt"
    src.write_text("a\n\nb\n", encoding="utf-8")
    tgt.write_text("x\ny\nz\n", encoding="utf-8")
    corpus, skipped = load_parallel_text(src, tgt)
    assert skipped == 1 and len(corpus) == 2


def test_vocab_frequency_cap(tmp_path):
    types = [f"tok{i}" for i in range(150)]
    src = tmp_path / "s.txt"
    tgt = tmp_path / "t.txt"
    src.write_text(" ".join(types) + "\n", encoding="utf-8")
    tgt.write_text("only one line\n", encoding="utf-8")
    corpus, _ = load_parallel_text(src, tgt, vocab_cap=100)
    assert len(corpus.vocab) == 104


def test_metadata_sidecar(tmp_path):
    corpus = generate_corpus(TaskSpec(vocab_size=30, seed=31), 10)
    corpus = corrupt_targets(corpus, 0.5, 0.5, RngState(6))
    path = tmp_path / "meta.jsonl"
    write_corpus_metadata(corpus, path)
    rows = read_jsonl(path)
    assert len(rows) == 10
    assert set(rows[0]) == {"index", "noise_label", "corrupted_fraction", "domain"}


def test_reencode_maps_missing_to_unk():
    corpus = generate_corpus(TaskSpec(vocab_size=40, seed=33), 5)
    small = reencode(corpus, Vocab.synthetic(10))
    for p in small:
        assert p.src.max() < 10


# -- batching -----------------------------------------------------------------


def test_hint_mask_exact_half():
    corpus = generate_corpus(TaskSpec(vocab_size=40, seed=35), 8)
    (batch,) = make_batches(corpus, 8, 0.5, RngState(7))
    assert batch.hint_mask.sum() == 4


def test_hint_fraction_zero_all_false():
    corpus = generate_corpus(TaskSpec(vocab_size=40, seed=37), 8)
    (batch,) = make_batches(corpus, 8, 0.0, RngState(7))
    assert not batch.hint_mask.any()


def test_padding_masks_match_pad_positions():
    corpus = generate_corpus(TaskSpec(vocab_size=40, length_range=(3, 9), seed=39), 20)
    for batch in make_batches(corpus, 6, 0.5, RngState(8)):
        assert np.array_equal(batch.src_mask, batch.src != PAD)
        assert np.array_equal(batch.tgt_mask, batch.tgt != PAD)
        # each target row ends with EOS right before padding
        for r in range(batch.size):
            t = int(batch.tgt_mask[r].sum())
            assert batch.tgt[r, t - 1] == EOS


def test_batches_cover_corpus_once():
    corpus = generate_corpus(TaskSpec(vocab_size=40, seed=41), 17)
    batches = make_batches(corpus, 5, 0.5, RngState(9))
    seen = np.concatenate([b.indices for b in batches])
    assert sorted(seen.tolist()) == list(range(17))


def test_decoder_inputs_shift():
    tgt = np.array([[5, 6, EOS], [7, EOS, PAD]])
    dec = decoder_inputs(tgt)
    assert dec.tolist() == [[BOS, 5, 6], [BOS, 7, EOS]]
