"""Independent step-by-step reimplementations of the detection metrics,
used as oracles by both the unit tests and the acceptance suite."""

import numpy as np

from conflab.rng import RngState


def auroc_pairwise_oracle(scores, labels):
    pos = [s for s, l in zip(scores, labels) if l == 1]
    neg = [s for s, l in zip(scores, labels) if l == 0]
    wins = sum(1 for p in pos for n in neg if p > n)
    ties = sum(1 for p in pos for n in neg if p == n)
    return (wins + 0.5 * ties) / (len(pos) * len(neg))


def curve_points_oracle(scores, labels):
    """(tp, fp) at every distinct descending threshold, by brute force."""
    thresholds = sorted(set(scores), reverse=True)
    pos = sum(labels)
    neg = len(labels) - pos
    points = []
    for th in thresholds:
        tp = sum(1 for s, l in zip(scores, labels) if s >= th and l == 1)
        fp = sum(1 for s, l in zip(scores, labels) if s >= th and l == 0)
        points.append((tp, fp))
    return points, pos, neg


def aupr_oracle(scores, labels):
    points, pos, neg = curve_points_oracle(scores, labels)
    area = 0.0
    prev_r = 0.0
    for tp, fp in points:
        if tp + fp == 0:
            continue
        r = tp / pos
        p = tp / (tp + fp)
        area += (r - prev_r) * p
        prev_r = r
    return area


def eer_oracle(scores, labels):
    points, pos, neg = curve_points_oracle(scores, labels)
    fprs = [0.0] + [fp / neg for tp, fp in points]
    fnrs = [1.0] + [(pos - tp) / pos for tp, fp in points]
    for i in range(1, len(fprs)):
        d0 = fnrs[i - 1] - fprs[i - 1]
        d1 = fnrs[i] - fprs[i]
        if d1 == 0.0:
            return fprs[i]
        if d1 < 0.0:
            t = d0 / (d0 - d1)
            return fprs[i - 1] + t * (fprs[i] - fprs[i - 1])
    return fprs[-1]


def det_oracle(scores, labels):
    points, pos, neg = curve_points_oracle(scores, labels)
    cands = [pos / (pos + neg)]  # classify nothing as positive
    for tp, fp in points:
        cands.append((fp + pos - tp) / (pos + neg))
    return min(cands)


def random_sets(n_sets=100, max_n=50, seed=5):
    gen = RngState(seed).generator()
    for _ in range(n_sets):
        n = int(gen.integers(4, max_n + 1))
        labels = np.zeros(n, dtype=int)
        labels[: int(gen.integers(1, n))] = 1
        gen.shuffle(labels)
        if labels.sum() in (0, n):
            labels[0] = 1
            labels[-1] = 0
        # quantized scores force plenty of ties
        scores = np.round(gen.normal(size=n) * 2) / 2
        yield scores, labels
