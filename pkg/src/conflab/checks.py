"""Gradient-fidelity suite: every differentiable primitive plus a tiny full
model checked against central differences in float64."""

from __future__ import annotations

import numpy as np

from .data import Batch, decoder_inputs
from .gradcheck import grad_check, grad_check_params
from .model import ModelConfig, build_forward, init_model, sinusoidal_positions
from .rng import RngState
from .training import TrainSchedule, build_losses
from .vocab import EOS


def _point(gen, shape, scale=1.0):
    return gen.normal(0.0, scale, size=shape)


def _fixed(n, salt):
    gen = RngState(salt).stream("gc/fixed").generator()
    return gen.normal(0.0, 1.0, size=(n, n))


def _fixed_like(arr, salt):
    gen = RngState(salt).stream("gc/fixed").generator()
    return gen.normal(0.0, 1.0, size=arr.shape)


def primitive_checks(tolerance: float = 1e-4, points: int = 20, seed: int = 0):
    """Run `points` random-point checks per primitive; returns (rows, all_ok)."""
    gen = RngState(seed).stream("gradcheck").generator()

    def softmax_loss(g, x):
        # weighted sum keeps the jacobian non-degenerate
        w = g.const(np.linspace(0.5, 1.5, x.value.size).reshape(x.shape))
        return g.sum(g.mul(g.softmax(x, axis=-1), w))

    def ce_softmax(g, x):
        return g.neg(g.log(g.gather_last(g.softmax(x, axis=-1), np.array([2]))))

    def sigmoid_log(g, x):
        # sigmoid followed by a log penalty: the confidence-loss path
        return g.neg(g.sum(g.log(g.sigmoid(x))))

    def dropout_loss(g, x):
        st = RngState(1234).stream("gc/dropout")
        return g.sum(g.mul(g.dropout(x, 0.3, st, enabled=True), x))

    def matmul_loss(g, x):
        w = g.const(_fixed(x.shape[-1], 3))
        return g.sum(g.matmul(x, w))

    def layer_norm_loss(g, x):
        gain = g.const(np.linspace(0.5, 1.5, x.shape[-1]))
        bias = g.const(np.linspace(-0.1, 0.1, x.shape[-1]))
        w = g.const(np.linspace(1.0, 2.0, x.value.size).reshape(x.shape))
        return g.sum(g.mul(g.layer_norm(x, gain, bias), w))

    def embedding_loss(g, x):
        ids = np.array([[0, 2, 1], [2, 2, 0]])
        w = g.const(
            np.linspace(0.5, 1.5, ids.size * x.shape[-1]).reshape(ids.shape + (x.shape[-1],))
        )
        return g.sum(g.mul(g.embedding(x, ids), w))

    def attention_loss(g, x):
        B, T, _ = x.shape
        mask = np.zeros((B, 1, T, T))
        mask[:, :, :, -1] = -1e9  # mask the final key everywhere
        out = g.attention(x, x, x, heads=2, mask=mask)
        w = g.const(np.linspace(0.5, 1.5, out.value.size).reshape(out.shape))
        return g.sum(g.mul(out, w))

    def mean_stack_loss(g, x):
        doubled = g.scale(x, 2.0)
        w = g.const(np.linspace(0.5, 1.5, x.value.size).reshape(x.shape))
        return g.sum(g.mul(g.mean_stack([x, doubled, x]), w))

    def addmul_loss(g, x):
        y = g.const(_fixed_like(x.value, 7))
        return g.sum(g.mul(g.add(x, y), g.sub(x, y)))

    cases = [
        ("softmax", softmax_loss, (2, 5), 1.5),
        ("cross_entropy_softmax", ce_softmax, (1, 6), 2.0),
        ("sigmoid_log_penalty", sigmoid_log, (7,), 1.0),
        ("dropout", dropout_loss, (4, 5), 1.0),
        ("matmul", matmul_loss, (2, 3, 4), 1.0),
        ("add_mul", addmul_loss, (3, 4), 1.0),
        ("layer_norm", layer_norm_loss, (2, 6), 1.0),
        ("embedding", embedding_loss, (3, 4), 1.0),
        ("attention", attention_loss, (2, 4, 6), 0.8),
        ("mean_stack", mean_stack_loss, (2, 3, 4), 1.0),
    ]
    rows = []
    all_ok = True
    for name, fn, shape, scale in cases:
        worst = 0.0
        for _ in range(points):
            worst = max(worst, grad_check(fn, _point(gen, shape, scale)))
        ok = worst < tolerance
        all_ok = all_ok and ok
        rows.append({"op": name, "max_rel_err": worst, "tolerance": tolerance, "pass": ok})
    return rows, all_ok


def tiny_model_config(d: int = 8) -> ModelConfig:
    # every pathway present (cross-attention, hints, confidence, smoothing)
    # while staying small enough for elementwise finite differences
    return ModelConfig(
        vocab_size=8, d_model=d, heads=2, enc_layers=1, dec_layers=2,
        ffn=8, dropout=0.0, conf_layers=(1,), seed=0,
    )


def _tiny_batch(gen, vocab_size: int) -> Batch:
    src = gen.integers(4, vocab_size, size=(2, 2))
    tgt_core = gen.integers(4, vocab_size, size=(2, 1))
    tgt = np.concatenate([tgt_core, np.full((2, 1), EOS)], axis=1)
    return Batch(
        src=src,
        tgt=tgt,
        src_mask=np.ones_like(src, dtype=bool),
        tgt_mask=np.ones_like(tgt, dtype=bool),
        hint_mask=np.array([True, False]),
        indices=np.arange(2),
    )


def full_model_check(points: int = 20, seed: int = 0, d: int = 8, epsilon: float = 1e-4) -> float:
    """Max relative error of the full training loss over every parameter.

    epsilon is larger than the primitive checks' 1e-5: key-projection biases
    have an exactly-zero gradient (softmax shift invariance), so the widened
    step keeps central-difference cancellation noise below the relative-error
    denominator floor.
    """
    cfg = tiny_model_config(d)
    # standard smoothing keeps the target distribution constant in the
    # parameters; confidence-based smoothing detaches its mass by design and
    # would (correctly) disagree with finite differences.
    sched = TrainSchedule(
        total_steps=10, batch_size=2, lambda0=2.0, beta0=10.0,
        hint_fraction=0.5, smoothing="standard", epsilon0=0.1, seed=0,
    )
    positions = sinusoidal_positions(cfg.max_len, cfg.d_model).astype(np.float64)
    drop = {"rate": 0.0, "rng": None, "enabled": False}
    gen = RngState(seed).stream("gradcheck/model").generator()
    margin = 20.0 * epsilon
    worst = 0.0
    accepted = 0
    while accepted < points:
        model = init_model(cfg, RngState(int(gen.integers(1 << 30))))
        batch = _tiny_batch(gen, cfg.vocab_size)

        def build(g, nodes):
            fp = build_forward(
                g, nodes, cfg, positions, batch.src, batch.src_mask,
                decoder_inputs(batch.tgt), drop,
            )
            fp.tgt_mask = batch.tgt_mask
            loss, _ = build_losses(fp, batch, sched, step=3)
            return loss

        params64 = {k: v.astype(np.float64) for k, v in model.params.items()}
        from .autodiff import Graph

        probe = Graph(dtype=np.float64)
        build(probe, {k: probe.param(k, v) for k, v in params64.items()})
        if probe.relu_margin < margin:
            # a relu pre-activation sits on the kink; the loss is not
            # differentiable at this point, so it is not a valid check point
            continue
        accepted += 1
        worst = max(worst, grad_check_params(build, params64, epsilon=epsilon))
    return worst
