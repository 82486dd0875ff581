"""QE metrics, Pearson, detection metrics vs independent oracles."""

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conflab.errors import CorrelationUndefinedError, SingleClassError
from conflab.inference import ForcedScore
from conflab.metrics import (
    density_report,
    detection_metrics,
    metric_conf,
    metric_d_family,
    metric_sent_std,
    metric_sent_std_conf,
    metric_softmax_ent,
    metric_tp,
    pearson,
)
from conflab.rng import RngState
from oracles import (
    aupr_oracle,
    auroc_pairwise_oracle,
    det_oracle,
    eer_oracle,
    random_sets,
)


def forced(logp=None, conf=None):
    logp = np.asarray(logp if logp is not None else [-0.1, -0.2])
    conf = np.asarray(conf if conf is not None else [0.9, 0.8])
    return ForcedScore(
        token_ids=np.arange(len(logp)),
        logp=logp,
        conf=conf,
        entropy=np.zeros(len(logp)),
    )


# -- sentence metrics ---------------------------------------------------------


def test_tp_perfect_prediction():
    assert metric_tp(forced(logp=[0.0, 0.0])) == 0.0


def test_tp_analytic():
    assert abs(metric_tp(forced(logp=np.log([0.5, 0.5]))) + math.log(2)) < 1e-12


def test_tp_invariant_to_duplication():
    a = metric_tp(forced(logp=[-0.3, -0.7]))
    b = metric_tp(forced(logp=[-0.3, -0.7, -0.3, -0.7]))
    assert abs(a - b) < 1e-12


def test_entropy_one_hot_zero():
    p = np.zeros((3, 5))
    p[:, 2] = 1.0
    assert metric_softmax_ent(p) < 1e-10


def test_entropy_uniform():
    p = np.full((2, 4), 0.25)
    assert abs(metric_softmax_ent(p) - math.log(4)) < 1e-9


def test_entropy_direct_formula():
    p = np.array([[0.5, 0.25, 0.25]])
    assert abs(metric_softmax_ent(p) - 1.5 * math.log(2)) < 1e-9


def test_sent_std_constant_zero():
    assert metric_sent_std(forced(logp=[-0.5, -0.5, -0.5])) == 0.0


def test_sent_std_analytic():
    assert abs(metric_sent_std(forced(logp=[0.0, -2.0])) - 1.0) < 1e-12


def test_sent_std_matches_two_pass_oracle():
    gen = RngState(0).generator()
    for _ in range(20):
        logp = gen.normal(-1, 0.5, size=gen.integers(2, 12))
        mean = sum(logp) / len(logp)
        var = sum((x - mean) ** 2 for x in logp) / len(logp)
        assert abs(metric_sent_std(forced(logp=logp)) - math.sqrt(var)) < 1e-9


def test_sent_std_single_token_is_zero():
    assert metric_sent_std(forced(logp=[-0.4], conf=[0.5])) == 0.0


def test_conf_metrics():
    f = forced(conf=[0.2, 0.4, 0.6], logp=[-1, -1, -1])
    assert abs(metric_conf(f) - 0.4) < 1e-12
    high = forced(conf=[1 - 1e-9, 1 - 1e-9], logp=[0, 0])
    assert metric_conf(high) > 1 - 1e-8
    assert metric_sent_std_conf(high) < 1e-8


def test_sent_std_conf_analytic():
    f = forced(conf=[math.exp(-1), math.exp(-3)], logp=[0, 0])
    assert abs(metric_sent_std_conf(f) - 1.0) < 1e-9


def test_conf_log_variant():
    f = forced(conf=[0.5, 0.5], logp=[0, 0])
    assert abs(metric_conf(f, log_c=True) + math.log(2)) < 1e-12


def test_d_family():
    passes = [forced(logp=[-0.2, -0.4], conf=[0.8, 0.6]),
              forced(logp=[-0.6, -0.8], conf=[0.4, 0.2])]
    d_tp, d_conf, d_comb = metric_d_family(passes)
    assert abs(d_tp - (-0.3 - 0.7) / 2) < 1e-12
    assert abs(d_conf - (0.7 + 0.3) / 2) < 1e-12
    assert d_comb == d_tp + d_conf  # exact linearity
    single_tp, single_conf, single_comb = metric_d_family(passes[:1])
    assert single_tp == metric_tp(passes[0])
    assert single_comb == single_tp + single_conf


# -- pearson -----------------------------------------------------------------


def test_pearson_affine():
    xs = np.array([1.0, 2.0, 5.0, 9.0])
    assert abs(pearson(xs, 2 * xs + 3) - 1.0) < 1e-12
    assert abs(pearson(xs, -xs) + 1.0) < 1e-12


def test_pearson_known_value():
    assert abs(pearson([1, 2, 3, 4], [1, 3, 2, 4]) - 0.8) < 1e-12


def test_pearson_constant_rejected():
    with pytest.raises(CorrelationUndefinedError):
        pearson([1, 1, 1], [1, 2, 3])
    with pytest.raises(CorrelationUndefinedError):
        pearson([1], [2])


@given(
    st.lists(st.floats(-50, 50), min_size=3, max_size=20),
    st.floats(0.1, 10),
    st.floats(-5, 5),
)
@settings(max_examples=40, deadline=None)
def test_pearson_positive_affine_invariance(xs, a, b):
    xs = np.asarray(xs)
    ys = np.linspace(-1, 1, len(xs)) + 0.1 * xs
    if np.std(xs) < 1e-6 or np.std(ys) < 1e-6:
        return
    r1 = pearson(xs, ys)
    r2 = pearson(a * xs + b, ys)
    assert abs(r1 - r2) < 1e-7


# -- detection oracles ----------------------------------------------------------


def test_detection_perfect_separation():
    rep = detection_metrics([0.9, 0.8, 0.7, 0.1], [1, 1, 0, 0])
    assert rep.auroc == 1.0
    assert rep.det == 0.0
    assert rep.eer == 0.0
    assert abs(rep.aupr - 1.0) < 1e-12


def test_detection_known_auroc():
    rep = detection_metrics([0.9, 0.4, 0.7, 0.1], [1, 1, 0, 0])
    assert rep.auroc == 0.75


def test_detection_single_class_rejected():
    with pytest.raises(SingleClassError):
        detection_metrics([0.1, 0.2], [1, 1])


def test_auroc_equals_pairwise_oracle_exactly():
    for scores, labels in random_sets():
        rep = detection_metrics(scores, labels)
        assert rep.auroc == auroc_pairwise_oracle(scores.tolist(), labels.tolist())


def test_aupr_eer_det_match_oracles():
    for scores, labels in random_sets(seed=6):
        rep = detection_metrics(scores, labels)
        s, l = scores.tolist(), labels.tolist()
        assert abs(rep.aupr - aupr_oracle(s, l)) < 1e-9
        assert abs(rep.eer - eer_oracle(s, l)) < 1e-9
        assert abs(rep.det - det_oracle(s, l)) < 1e-9


def test_direction_flip_maps_auroc():
    for scores, labels in random_sets(n_sets=20, seed=7):
        hi = detection_metrics(scores, labels, positive_high=True)
        lo = detection_metrics(scores, labels, positive_high=False)
        assert abs(hi.auroc + lo.auroc - 1.0) < 1e-12


@given(st.integers(0, 1000))
@settings(max_examples=30, deadline=None)
def test_detection_invariant_under_monotone_transform(seed):
    gen = RngState(seed).generator()
    n = 24
    labels = (gen.random(n) < 0.5).astype(int)
    if labels.sum() in (0, n):
        labels[0], labels[-1] = 1, 0
    scores = gen.normal(size=n)
    base = detection_metrics(scores, labels)
    warped = detection_metrics(np.exp(0.5 * scores) + 3, labels)
    assert abs(base.auroc - warped.auroc) < 1e-12
    assert abs(base.aupr - warped.aupr) < 1e-9
    assert abs(base.eer - warped.eer) < 1e-9
    assert abs(base.det - warped.det) < 1e-12


# -- density report ---------------------------------------------------------------


def test_density_degenerate_all_correct():
    rep = density_report([(1.0, 1.0, True)] * 10)
    assert rep.prob_correct[-1] == 10
    assert rep.prob_correct[:-1].sum() == 0
    assert rep.over_confident_prob == 0.0
    assert rep.under_confident_prob == 0.0


def test_density_bin_counts_partition():
    gen = RngState(9).generator()
    records = [(gen.random(), gen.random(), bool(gen.integers(2))) for _ in range(500)]
    rep = density_report(records)
    n_correct = sum(1 for r in records if r[2])
    assert rep.prob_correct.sum() == n_correct
    assert rep.prob_incorrect.sum() == 500 - n_correct
    assert rep.conf_correct.sum() == n_correct


def test_density_rates():
    records = [(0.9, 0.9, False), (0.1, 0.1, False), (0.2, 0.2, True), (0.8, 0.8, True)]
    rep = density_report(records)
    assert rep.over_confident_prob == 0.5   # one of two incorrect above 0.7
    assert rep.under_confident_prob == 0.5  # one of two correct below 0.3
