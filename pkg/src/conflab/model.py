"""Scaled-down encoder-decoder transformer with a confidence head.

Each decoding step exposes the full-vocab distribution p_t (from the top
decoder layer), the per-layer decoder block outputs, and a confidence scalar
c_t = sigmoid(w'·h + b') computed from the elementwise mean of a configured
subset of (low) decoder layers. Pre-LN blocks with a final layer norm keep
toy-scale training stable; sinusoidal positions are non-learned.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from .autodiff import Graph, MASK_FILL, Node
from .data import Batch, decoder_inputs
from .errors import ConfigError, VocabMismatchError
from .rng import RngState
from .vocab import Vocab

CHECKPOINT_VERSION = 1
CONF_CLIP = 1e-6  # keeps c_t strictly inside (0, 1) in float32


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    d_model: int = 64
    heads: int = 4
    enc_layers: int = 2
    dec_layers: int = 2
    ffn: int = 256
    dropout: float = 0.1
    conf_layers: tuple[int, ...] = (1,)  # 1-based decoder layers feeding the head
    stop_conf_gradient: bool = False
    max_len: int = 256
    seed: int = 0

    def __post_init__(self):
        if self.vocab_size < 5:
            raise ConfigError("vocab_size must be >= 5")
        if self.d_model % self.heads:
            raise ConfigError("d_model must be divisible by heads")
        if self.enc_layers < 1 or self.dec_layers < 1:
            raise ConfigError("need at least one encoder and one decoder layer")
        if not (0.0 <= self.dropout < 1.0):
            raise ConfigError("dropout must lie in [0, 1)")
        layers = tuple(self.conf_layers)
        if not layers or any(l < 1 or l > self.dec_layers for l in layers):
            raise ConfigError(
                f"conf_layers must be a nonempty subset of 1..{self.dec_layers}"
            )
        object.__setattr__(self, "conf_layers", layers)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["conf_layers"] = list(self.conf_layers)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        if "conf_layers" in d:
            d["conf_layers"] = tuple(d["conf_layers"])
        return cls(**d)


def param_shapes(cfg: ModelConfig) -> dict[str, tuple[int, ...]]:
    """Every trainable tensor, keyed by name. Order is stable."""
    d, f, v = cfg.d_model, cfg.ffn, cfg.vocab_size
    shapes: dict[str, tuple[int, ...]] = {
        "src_embed": (v, d),
        "tgt_embed": (v, d),
    }

    def attn(prefix):
        for w in ("wq", "wk", "wv", "wo"):
            shapes[f"{prefix}.{w}"] = (d, d)
        for b in ("bq", "bk", "bv", "bo"):
            shapes[f"{prefix}.{b}"] = (d,)

    def ln(prefix):
        shapes[f"{prefix}.g"] = (d,)
        shapes[f"{prefix}.b"] = (d,)

    def ffn(prefix):
        shapes[f"{prefix}.w1"] = (d, f)
        shapes[f"{prefix}.b1"] = (f,)
        shapes[f"{prefix}.w2"] = (f, d)
        shapes[f"{prefix}.b2"] = (d,)

    for i in range(cfg.enc_layers):
        ln(f"enc{i}.ln1")
        attn(f"enc{i}.self")
        ln(f"enc{i}.ln2")
        ffn(f"enc{i}.ffn")
    ln("enc.ln_f")
    for i in range(cfg.dec_layers):
        ln(f"dec{i}.ln1")
        attn(f"dec{i}.self")
        ln(f"dec{i}.ln2")
        attn(f"dec{i}.cross")
        ln(f"dec{i}.ln3")
        ffn(f"dec{i}.ffn")
    ln("dec.ln_f")
    shapes["out.w"] = (d, v)
    shapes["out.b"] = (v,)
    shapes["conf.w"] = (d, 1)
    shapes["conf.b"] = (1,)
    return shapes


def sinusoidal_positions(max_len: int, d: int) -> np.ndarray:
    pos = np.arange(max_len)[:, None].astype(np.float64)
    dim = np.arange(d)[None, :]
    angles = pos / np.power(10000.0, (2 * (dim // 2)) / d)
    table = np.where(dim % 2 == 0, np.sin(angles), np.cos(angles))
    return table.astype(np.float32)


class SeqModel:
    """Parameter store plus config; forward passes build fresh graphs."""

    def __init__(self, config: ModelConfig, params: dict[str, np.ndarray]):
        expected = param_shapes(config)
        if set(params) != set(expected):
            missing = set(expected) ^ set(params)
            raise ConfigError(f"parameter set mismatch: {sorted(missing)}")
        for name, arr in params.items():
            if tuple(arr.shape) != expected[name]:
                raise ConfigError(
                    f"{name}: shape {arr.shape} != expected {expected[name]}"
                )
        self.config = config
        self.params = params
        self.positions = sinusoidal_positions(config.max_len, config.d_model)

    @property
    def param_count(self) -> int:
        return sum(int(np.prod(s)) for s in param_shapes(self.config).values())

    def copy(self) -> "SeqModel":
        return SeqModel(self.config, {k: v.copy() for k, v in self.params.items()})


def init_model(config: ModelConfig, rng: RngState | None = None) -> SeqModel:
    """Glorot-uniform matrices, N(0, d^-1/2) embeddings, unit/zero norms."""
    rng = rng if rng is not None else RngState(config.seed)
    gen = rng.stream("init").generator()
    d = config.d_model
    params: dict[str, np.ndarray] = {}
    for name, shape in param_shapes(config).items():
        if name.endswith("_embed"):
            arr = gen.normal(0.0, d**-0.5, size=shape)
        elif name.endswith(".g"):
            arr = np.ones(shape)
        elif len(shape) == 2:
            bound = np.sqrt(6.0 / (shape[0] + shape[1]))
            arr = gen.uniform(-bound, bound, size=shape)
        else:
            arr = np.zeros(shape)
        params[name] = arr.astype(np.float32)
    return SeqModel(config, params)


# ---------------------------------------------------------------------------
# Forward passes
# ---------------------------------------------------------------------------


@dataclass
class StepOutput:
    """Per-position view: distribution, confidence scalar, per-layer states."""

    p: np.ndarray
    c: float
    hidden: list[np.ndarray]


@dataclass
class ForwardPass:
    graph: Graph
    params: dict[str, Node]
    probs: Node            # (B, T, V)
    conf: Node             # (B, T)
    hidden: list[Node]     # decoder block outputs, each (B, T, d)
    tgt_mask: np.ndarray | None = None

    def step_output(self, b: int, t: int) -> StepOutput:
        return StepOutput(
            p=self.probs.value[b, t].copy(),
            c=float(self.conf.value[b, t]),
            hidden=[h.value[b, t].copy() for h in self.hidden],
        )


def _additive_mask(bool_mask: np.ndarray, dtype) -> np.ndarray:
    return np.where(bool_mask, 0.0, MASK_FILL).astype(dtype)


def _sublayer_ln(g, params, prefix, x):
    return g.layer_norm(x, params[f"{prefix}.g"], params[f"{prefix}.b"])


def _attn_block(g, params, prefix, q_in, kv_in, heads, mask, drop):
    def proj(x, w, b):
        return g.add(g.matmul(x, params[f"{prefix}.{w}"]), params[f"{prefix}.{b}"])

    q = proj(q_in, "wq", "bq")
    k = proj(kv_in, "wk", "bk")
    v = proj(kv_in, "wv", "bv")
    out = g.attention(q, k, v, heads, mask=mask)
    out = g.add(g.matmul(out, params[f"{prefix}.wo"]), params[f"{prefix}.bo"])
    return g.dropout(out, drop["rate"], drop["rng"], enabled=drop["enabled"])


def _ffn_block(g, params, prefix, x, drop):
    h = g.relu(g.add(g.matmul(x, params[f"{prefix}.w1"]), params[f"{prefix}.b1"]))
    h = g.add(g.matmul(h, params[f"{prefix}.w2"]), params[f"{prefix}.b2"])
    return g.dropout(h, drop["rate"], drop["rng"], enabled=drop["enabled"])


def _embed(g, params, table_name, ids, positions, d, drop):
    x = g.scale(g.embedding(params[table_name], ids), np.sqrt(d))
    x = g.add(x, g.const(positions[: ids.shape[1]][None, :, :]))
    return g.dropout(x, drop["rate"], drop["rng"], enabled=drop["enabled"])


def build_forward(
    g: Graph,
    params: dict[str, Node],
    cfg: ModelConfig,
    positions: np.ndarray,
    src: np.ndarray,
    src_mask: np.ndarray,
    dec_in: np.ndarray,
    drop: dict,
) -> ForwardPass:
    """Graph-level forward; params may be owned by an external graph builder."""
    d = cfg.d_model
    T = dec_in.shape[1]

    # encoder
    enc_mask = _additive_mask(src_mask[:, None, None, :], g.dtype)  # (B,1,1,S)
    x = _embed(g, params, "src_embed", src, positions, d, drop)
    for i in range(cfg.enc_layers):
        h = _sublayer_ln(g, params, f"enc{i}.ln1", x)
        x = g.add(x, _attn_block(g, params, f"enc{i}.self", h, h, cfg.heads, enc_mask, drop))
        h = _sublayer_ln(g, params, f"enc{i}.ln2", x)
        x = g.add(x, _ffn_block(g, params, f"enc{i}.ffn", h, drop))
    memory = _sublayer_ln(g, params, "enc.ln_f", x)

    # decoder
    causal = np.triu(np.full((T, T), MASK_FILL, dtype=g.dtype), k=1)[None, None, :, :]
    y = _embed(g, params, "tgt_embed", dec_in, positions, d, drop)
    hidden: list[Node] = []
    for i in range(cfg.dec_layers):
        h = _sublayer_ln(g, params, f"dec{i}.ln1", y)
        y = g.add(y, _attn_block(g, params, f"dec{i}.self", h, h, cfg.heads, causal, drop))
        h = _sublayer_ln(g, params, f"dec{i}.ln2", y)
        y = g.add(y, _attn_block(g, params, f"dec{i}.cross", h, memory, cfg.heads, enc_mask, drop))
        h = _sublayer_ln(g, params, f"dec{i}.ln3", y)
        y = g.add(y, _ffn_block(g, params, f"dec{i}.ffn", h, drop))
        hidden.append(y)

    top = _sublayer_ln(g, params, "dec.ln_f", y)
    logits = g.add(g.matmul(top, params["out.w"]), params["out.b"])
    probs = g.softmax(logits, axis=-1)
    conf = confidence_from_hidden(g, params, hidden, cfg)
    return ForwardPass(graph=g, params=params, probs=probs, conf=conf, hidden=hidden)


def forward_seq2seq(
    model: SeqModel,
    src: np.ndarray,
    src_mask: np.ndarray,
    dec_in: np.ndarray,
    *,
    dropout_enabled: bool = False,
    rng=None,
    dropout_rate: float | None = None,
    dtype=np.float32,
) -> ForwardPass:
    """Encoder + causal decoder over explicit decoder inputs.

    `dec_in` rows start with BOS. Returns the distribution, confidence and
    per-layer decoder states at every decoder position.
    """
    cfg = model.config
    if dropout_enabled and rng is None:
        raise ConfigError("dropout requires a random source")
    rate = cfg.dropout if dropout_rate is None else dropout_rate
    drop = {"rate": rate, "rng": rng, "enabled": dropout_enabled}
    g = Graph(dtype=dtype)
    params = {name: g.param(name, arr) for name, arr in model.params.items()}
    return build_forward(g, params, cfg, model.positions, src, src_mask, dec_in, drop)


def confidence_from_hidden(
    g: Graph, params: dict[str, Node], hidden: list[Node], cfg: ModelConfig
) -> Node:
    """c = sigmoid(w'·mean(selected layer states) + b'), clipped off 0/1."""
    if not cfg.conf_layers:
        raise ConfigError("confidence layer set must be nonempty")
    selected = [hidden[l - 1] for l in cfg.conf_layers]
    h = g.mean_stack(selected)
    if cfg.stop_conf_gradient:
        h = g.const(h.value)
    z = g.add(g.matmul(h, params["conf.w"]), params["conf.b"])
    B, T, _ = z.shape
    c = g.sigmoid(g.reshape(z, (B, T)))
    return g.clip(c, CONF_CLIP, 1.0 - CONF_CLIP)


def confidence_head(
    model: SeqModel, hidden: list[np.ndarray], layer_set=None
) -> float:
    """Confidence for one decoding step from its per-layer hidden states.

    `hidden` holds h^1..h^N for a single position; the selected layers are
    averaged elementwise and squashed through the sigmoid head.
    """
    layers = tuple(layer_set) if layer_set is not None else model.config.conf_layers
    if not layers or any(l < 1 or l > len(hidden) for l in layers):
        raise ConfigError(f"layer set {layers} not within 1..{len(hidden)}")
    h = np.mean([np.asarray(hidden[l - 1], dtype=np.float64) for l in layers], axis=0)
    z = float(h @ model.params["conf.w"][:, 0] + model.params["conf.b"][0])
    c = 1.0 / (1.0 + np.exp(-z))
    return float(np.clip(c, CONF_CLIP, 1.0 - CONF_CLIP))


def forward_teacher_forced(
    model: SeqModel,
    batch: Batch,
    *,
    dropout_enabled: bool = False,
    rng=None,
    dropout_rate: float | None = None,
    dtype=np.float32,
) -> ForwardPass:
    """Teacher-forced pass: decoder inputs are BOS + shifted targets."""
    fp = forward_seq2seq(
        model,
        batch.src,
        batch.src_mask,
        decoder_inputs(batch.tgt),
        dropout_enabled=dropout_enabled,
        rng=rng,
        dropout_rate=dropout_rate,
        dtype=dtype,
    )
    fp.tgt_mask = batch.tgt_mask
    return fp


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


def save_checkpoint(path, model: SeqModel, vocab: Vocab, extra: dict | None = None) -> None:
    """Versioned npz container: config + vocab + each tensor as little-endian f32."""
    meta = {
        "version": CHECKPOINT_VERSION,
        "config": model.config.to_dict(),
        "vocab": vocab.tokens,
        "extra": extra or {},
    }
    arrays = {f"param/{k}": v.astype("<f4") for k, v in model.params.items()}
    np.savez(path, __meta__=np.array(json.dumps(meta)), **arrays)


def load_checkpoint(path) -> tuple[SeqModel, Vocab, dict]:
    with np.load(path, allow_pickle=False) as z:
        meta = json.loads(str(z["__meta__"]))
        if meta.get("version") != CHECKPOINT_VERSION:
            raise ConfigError(f"unsupported checkpoint version {meta.get('version')}")
        cfg = ModelConfig.from_dict(meta["config"])
        vocab = Vocab(meta["vocab"])
        if len(vocab) != cfg.vocab_size:
            raise VocabMismatchError(
                f"checkpoint vocab has {len(vocab)} tokens but config says {cfg.vocab_size}"
            )
        expected = param_shapes(cfg)
        params = {}
        for name, shape in expected.items():
            key = f"param/{name}"
            if key not in z:
                raise ConfigError(f"checkpoint missing tensor {name!r}")
            arr = z[key].astype(np.float32)
            if tuple(arr.shape) != shape:
                raise ConfigError(f"checkpoint tensor {name}: bad shape {arr.shape}")
            params[name] = arr
    return SeqModel(cfg, params), vocab, meta.get("extra", {})
