"""Dual-stream gated-cross-attention classifier and the CNN baseline.

Token embeddings (plus fixed sinusoidal position features and a small
per-token lexicon-polarity embedding) feed two transformer stacks over the
same sequence: a global stream with full self-attention and a local stream
whose attention is restricted to a sliding window.  A bidirectional
cross-attention per fusion head is blended by a per-position sigmoid gate,
heads are combined by learned softmax weights, and a masked-mean pooled
head produces the 3-class distribution.

Blocks use residual connections and a 2-layer ReLU feed-forward (no layer
norm; flag-controlled residuals for ablation).  Dropout appears only in
the classifier head.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, ShapeError
from .preprocess import PAD_ID

N_CLASSES = 3
MASK_NEG = -1e30


@dataclass
class ModelConfig:
    vocab_size: int
    d_model: int = 64
    n_heads: int = 4
    n_layers: int = 2
    window: int = 2
    max_len: int = 64
    n_fusion_heads: int = 4
    dropout: float = 0.1
    residuals: bool = True
    ffn_mult: int = 4
    n_classes: int = N_CLASSES

    def validate(self) -> "ModelConfig":
        if self.vocab_size < 3:
            raise ConfigError("vocab_size must cover reserved ids plus one real token")
        if self.d_model % self.n_heads != 0:
            raise ConfigError(
                f"d_model ({self.d_model}) must be divisible by n_heads ({self.n_heads})"
            )
        if not (0.0 <= self.dropout < 1.0):
            raise ConfigError(f"dropout must be in [0, 1), got {self.dropout}")
        if self.max_len < 1 or self.window < 0 or self.n_layers < 1 or self.n_fusion_heads < 1:
            raise ConfigError("max_len >= 1, window >= 0, n_layers >= 1, n_fusion_heads >= 1")
        return self

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass
class CnnConfig:
    vocab_size: int
    d_model: int = 64
    max_len: int = 64
    filter_widths: tuple[int, ...] = (3, 4, 5)
    n_filters: int = 32
    n_classes: int = N_CLASSES

    def validate(self) -> "CnnConfig":
        if self.vocab_size < 3:
            raise ConfigError("vocab_size must cover reserved ids plus one real token")
        if min(self.filter_widths) < 1:
            raise ConfigError("filter widths must be >= 1")
        if self.max_len < max(self.filter_widths):
            raise ConfigError(
                f"max_len ({self.max_len}) must be >= the widest filter "
                f"({max(self.filter_widths)})"
            )
        return self

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["filter_widths"] = list(self.filter_widths)
        return d


def sinusoidal_positions(max_len: int, d_model: int) -> np.ndarray:
    """Fixed position features: sin on even dims, cos on odd dims."""
    pe = np.zeros((max_len, d_model))
    pos = np.arange(max_len)[:, None]
    even = np.arange(0, d_model, 2)
    angle = pos / np.power(10000.0, even / d_model)[None, :]
    pe[:, 0::2] = np.sin(angle)
    pe[:, 1::2] = np.cos(angle[:, : pe[:, 1::2].shape[1]])
    return pe


@dataclass
class ModelParams:
    """Named learnable tensors plus the fixed position table."""

    kind: str
    config: ModelConfig | CnnConfig
    tensors: dict[str, Tensor]
    pe: np.ndarray | None = None

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    def named_arrays(self) -> dict[str, np.ndarray]:
        return {name: t.data for name, t in self.tensors.items()}

    def snapshot(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self.tensors.items()}

    def load_snapshot(self, arrays: dict[str, np.ndarray]) -> None:
        missing = set(self.tensors) - set(arrays)
        extra = set(arrays) - set(self.tensors)
        if missing or extra:
            raise ShapeError(f"parameter names mismatch: missing {sorted(missing)}, extra {sorted(extra)}")
        for name, t in self.tensors.items():
            if arrays[name].shape != t.data.shape:
                raise ShapeError(
                    f"parameter {name}: shape {arrays[name].shape} != expected {t.data.shape}"
                )
            t.data = arrays[name].astype(np.float64).copy()
            t.grad = None


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape)


def init_poultrylex(cfg: ModelConfig, seed: int) -> ModelParams:
    cfg.validate()
    rng = np.random.default_rng(seed)
    d = cfg.d_model
    t: dict[str, Tensor] = {}

    def param(name, array):
        t[name] = Tensor(array, requires_grad=True)

    param("token_emb", rng.normal(0.0, 0.1, size=(cfg.vocab_size, d)))
    param("lex_emb", rng.normal(0.0, 0.1, size=(3, d)))
    for stream in ("global", "local"):
        for layer in range(cfg.n_layers):
            base = f"{stream}.{layer}"
            for w in ("wq", "wk", "wv", "wo"):
                param(f"{base}.{w}", _glorot(rng, d, d, (d, d)))
            hidden = cfg.ffn_mult * d
            param(f"{base}.ffn_w1", _glorot(rng, d, hidden, (d, hidden)))
            param(f"{base}.ffn_b1", np.zeros(hidden))
            param(f"{base}.ffn_w2", _glorot(rng, hidden, d, (hidden, d)))
            param(f"{base}.ffn_b2", np.zeros(d))
    for head in range(cfg.n_fusion_heads):
        base = f"fusion.{head}"
        for w in ("wq", "wk", "wv", "wq_rev", "wk_rev", "wv_rev"):
            param(f"{base}.{w}", _glorot(rng, d, d, (d, d)))
    param("gate_w", _glorot(rng, 2 * d, 1, (2 * d, 1)))
    param("gate_b", np.zeros(1))
    param("head_gate_logits", np.zeros(cfg.n_fusion_heads))
    param("cls_w1", _glorot(rng, d, d, (d, d)))
    param("cls_b1", np.zeros(d))
    param("cls_w2", _glorot(rng, d, d, (d, d)))
    param("cls_b2", np.zeros(d))
    param("cls_w3", _glorot(rng, d, cfg.n_classes, (d, cfg.n_classes)))
    param("cls_b3", np.zeros(cfg.n_classes))

    return ModelParams(
        kind="poultrylex",
        config=cfg,
        tensors=t,
        pe=sinusoidal_positions(cfg.max_len, d),
    )


def init_cnn(cfg: CnnConfig, seed: int) -> ModelParams:
    cfg.validate()
    rng = np.random.default_rng(seed)
    d = cfg.d_model
    t: dict[str, Tensor] = {}
    t["token_emb"] = Tensor(rng.normal(0.0, 0.1, size=(cfg.vocab_size, d)), requires_grad=True)
    for w in cfg.filter_widths:
        t[f"conv{w}_w"] = Tensor(
            _glorot(rng, w * d, cfg.n_filters, (w * d, cfg.n_filters)), requires_grad=True
        )
        t[f"conv{w}_b"] = Tensor(np.zeros(cfg.n_filters), requires_grad=True)
    total = cfg.n_filters * len(cfg.filter_widths)
    t["out_w"] = Tensor(_glorot(rng, total, cfg.n_classes, (total, cfg.n_classes)), requires_grad=True)
    t["out_b"] = Tensor(np.zeros(cfg.n_classes), requires_grad=True)
    return ModelParams(kind="cnn", config=cfg, tensors=t)


# ----------------------------------------------------------------- attention


def attention(q: Tensor, k: Tensor, v: Tensor, mask_add: np.ndarray | None = None,
              scale: float | None = None) -> tuple[Tensor, Tensor]:
    """Scaled dot-product attention over the last two axes.

    ``mask_add`` is an additive array (0 for allowed keys, a large negative
    number otherwise) broadcastable to the logit shape; a query row whose
    keys are all masked cannot normalize and raises.
    Returns (output, attention_weights).
    """
    d_k = q.shape[-1]
    if k.shape[-1] != d_k or v.shape[-2] != k.shape[-2]:
        raise ShapeError(f"attention: incompatible shapes q{q.shape} k{k.shape} v{v.shape}")
    scale = float(scale) if scale is not None else float(np.sqrt(d_k))
    logits = ad.scalar_mul(ad.matmul(q, ad.transpose(k)), 1.0 / scale)
    if mask_add is not None:
        allowed = mask_add > MASK_NEG / 2
        if not np.broadcast_to(allowed, logits.shape).any(axis=-1).all():
            raise ShapeError("attention: a query row has every key masked")
        logits = ad.add(logits, Tensor(mask_add))
    weights = ad.softmax(logits)
    return ad.matmul(weights, v), weights


def _nonpad(token_ids: np.ndarray) -> np.ndarray:
    return token_ids != PAD_ID


def _mask_additive(allowed: np.ndarray) -> np.ndarray:
    return np.where(allowed, 0.0, MASK_NEG)


def self_attention_masks(token_ids: np.ndarray, window: int | None = None) -> np.ndarray:
    """(B, 1, L, L) additive mask: keys must be non-pad (pad queries keep
    their own position so every row normalizes); a window restricts keys
    to |i - j| <= window."""
    nonpad = _nonpad(token_ids)
    b, length = nonpad.shape
    allowed = np.broadcast_to(nonpad[:, None, :], (b, length, length)).copy()
    if window is not None:
        idx = np.arange(length)
        band = np.abs(idx[:, None] - idx[None, :]) <= window
        allowed &= band[None, :, :]
    allowed |= np.eye(length, dtype=bool)[None, :, :]
    return _mask_additive(allowed)[:, None, :, :]


def _split_heads(x: Tensor, n_heads: int) -> Tensor:
    b, length, d = x.shape
    return ad.transpose(ad.reshape(x, (b, length, n_heads, d // n_heads)), (0, 2, 1, 3))


def _merge_heads(x: Tensor) -> Tensor:
    b, h, length, dh = x.shape
    return ad.reshape(ad.transpose(x, (0, 2, 1, 3)), (b, length, h * dh))


def _encoder_block(params: ModelParams, x: Tensor, base: str, mask_add: np.ndarray) -> Tensor:
    cfg = params.config
    q = _split_heads(ad.matmul(x, params[f"{base}.wq"]), cfg.n_heads)
    k = _split_heads(ad.matmul(x, params[f"{base}.wk"]), cfg.n_heads)
    v = _split_heads(ad.matmul(x, params[f"{base}.wv"]), cfg.n_heads)
    attended, _ = attention(q, k, v, mask_add)
    attended = ad.matmul(_merge_heads(attended), params[f"{base}.wo"])
    x = ad.add(x, attended) if cfg.residuals else attended
    hidden = ad.relu(ad.add(ad.matmul(x, params[f"{base}.ffn_w1"]), params[f"{base}.ffn_b1"]))
    ffn = ad.add(ad.matmul(hidden, params[f"{base}.ffn_w2"]), params[f"{base}.ffn_b2"])
    return ad.add(x, ffn) if cfg.residuals else ffn


def embed(params: ModelParams, token_ids: np.ndarray, lexicon_signs: np.ndarray) -> Tensor:
    """Token embedding + fixed position features + lexicon-polarity embedding."""
    token_ids = np.asarray(token_ids)
    lexicon_signs = np.asarray(lexicon_signs)
    if token_ids.shape != lexicon_signs.shape:
        raise ShapeError(
            f"embed: token ids {token_ids.shape} and lexicon signs {lexicon_signs.shape} differ"
        )
    length = token_ids.shape[1]
    if length > params.config.max_len:
        raise ShapeError(f"embed: sequence length {length} exceeds max_len {params.config.max_len}")
    e = ad.add(
        ad.embedding_lookup(params["token_emb"], token_ids),
        ad.embedding_lookup(params["lex_emb"], lexicon_signs),
    )
    return ad.add(e, Tensor(params.pe[:length]))


def global_stream(params: ModelParams, e: Tensor, token_ids: np.ndarray) -> Tensor:
    mask = self_attention_masks(token_ids, window=None)
    h = e
    for layer in range(params.config.n_layers):
        h = _encoder_block(params, h, f"global.{layer}", mask)
    return h


def local_stream(params: ModelParams, e: Tensor, token_ids: np.ndarray) -> Tensor:
    mask = self_attention_masks(token_ids, window=params.config.window)
    h = e
    for layer in range(params.config.n_layers):
        h = _encoder_block(params, h, f"local.{layer}", mask)
    return h


def gated_cross_fusion(
    params: ModelParams, h_g: Tensor, h_l: Tensor, token_ids: np.ndarray
) -> tuple[Tensor, Tensor, list[Tensor], list[Tensor], np.ndarray]:
    """Bidirectional cross-attention per head, sigmoid-gated per position,
    heads combined by learned softmax weights.

    Returns (fused, alpha, per-head g->l weights, per-head l->g weights,
    head mixing weights as floats).
    """
    cfg = params.config
    d = cfg.d_model
    key_mask = self_attention_masks(token_ids, window=None)[:, 0, :, :]  # (B, L, L)

    alpha = ad.sigmoid(
        ad.add(ad.matmul(ad.concat([h_g, h_l], axis=-1), params["gate_w"]), params["gate_b"])
    )  # (B, L, 1)
    one_minus = ad.sub(Tensor(np.ones(1)), alpha)

    lam = ad.softmax(ad.reshape(params["head_gate_logits"], (1, cfg.n_fusion_heads)))
    fused = None
    a_g2l_weights: list[Tensor] = []
    a_l2g_weights: list[Tensor] = []
    for head in range(cfg.n_fusion_heads):
        base = f"fusion.{head}"
        a_g2l, w_g2l = attention(
            ad.matmul(h_g, params[f"{base}.wq"]),
            ad.matmul(h_l, params[f"{base}.wk"]),
            ad.matmul(h_l, params[f"{base}.wv"]),
            key_mask,
            scale=np.sqrt(d),
        )
        a_l2g, w_l2g = attention(
            ad.matmul(h_l, params[f"{base}.wq_rev"]),
            ad.matmul(h_g, params[f"{base}.wk_rev"]),
            ad.matmul(h_g, params[f"{base}.wv_rev"]),
            key_mask,
            scale=np.sqrt(d),
        )
        a_g2l_weights.append(w_g2l)
        a_l2g_weights.append(w_l2g)
        blended = ad.add(ad.mul(alpha, a_g2l), ad.mul(one_minus, a_l2g))
        lam_h = ad.reshape(ad.slice_axis(lam, 1, head, head + 1), (1, 1, 1))
        term = ad.mul(blended, lam_h)
        fused = term if fused is None else ad.add(fused, term)

    lam_values = lam.data.reshape(-1).copy()
    return fused, alpha, a_g2l_weights, a_l2g_weights, lam_values


def classify(
    params: ModelParams,
    h_fused: Tensor,
    token_ids: np.ndarray,
    train: bool = False,
    rng: np.random.Generator | None = None,
) -> tuple[Tensor, Tensor, Tensor, Tensor, Tensor]:
    """Masked mean pooling then the 3-layer head.

    Returns (y, h_pool, z1, z2, logits); training losses consume the
    pre-softmax logits.
    """
    nonpad = _nonpad(token_ids)
    counts = nonpad.sum(axis=1)
    if (counts == 0).any():
        raise ShapeError("classify: a sequence has no non-pad tokens")
    mask3 = Tensor(nonpad[:, :, None].astype(np.float64))
    pooled = ad.tsum(ad.mul(h_fused, mask3), axis=1)
    h_pool = ad.mul(pooled, Tensor(1.0 / counts[:, None]))
    z1 = ad.relu(ad.add(ad.matmul(h_pool, params["cls_w1"]), params["cls_b1"]))
    z2 = ad.dropout(
        ad.relu(ad.add(ad.matmul(z1, params["cls_w2"]), params["cls_b2"])),
        params.config.dropout,
        rng,
        train,
    )
    logits = ad.add(ad.matmul(z2, params["cls_w3"]), params["cls_b3"])
    return ad.softmax(logits), h_pool, z1, z2, logits


@dataclass
class ForwardTrace:
    """Every intermediate of one batch forward, for tests and inspection."""

    e: Tensor
    h_global: Tensor
    h_local: Tensor
    alpha: Tensor
    attn_g2l: list[Tensor]
    attn_l2g: list[Tensor]
    head_weights: np.ndarray
    h_fused: Tensor
    h_pool: Tensor
    z1: Tensor
    z2: Tensor
    logits: Tensor
    y: Tensor


def forward(
    params: ModelParams,
    token_ids: np.ndarray,
    lexicon_signs: np.ndarray,
    train: bool = False,
    rng: np.random.Generator | None = None,
) -> ForwardTrace:
    if params.kind != "poultrylex":
        raise ConfigError(f"forward: expected poultrylex params, got {params.kind!r}")
    e = embed(params, token_ids, lexicon_signs)
    h_g = global_stream(params, e, token_ids)
    h_l = local_stream(params, e, token_ids)
    h_fused, alpha, w_g2l, w_l2g, lam = gated_cross_fusion(params, h_g, h_l, token_ids)
    y, h_pool, z1, z2, logits = classify(params, h_fused, token_ids, train=train, rng=rng)
    return ForwardTrace(
        e=e, h_global=h_g, h_local=h_l, alpha=alpha,
        attn_g2l=w_g2l, attn_l2g=w_l2g, head_weights=lam,
        h_fused=h_fused, h_pool=h_pool, z1=z1, z2=z2, logits=logits, y=y,
    )


def cnn_logits(params: ModelParams, token_ids: np.ndarray) -> Tensor:
    """Embed -> per-width 1-d conv -> ReLU -> masked max-over-time -> linear.

    Windows that reach past a sequence's real length are masked out of the
    max; a sequence shorter than a filter width keeps its first window
    (pad-to-width behaviour).
    """
    if params.kind != "cnn":
        raise ConfigError(f"cnn_logits: expected cnn params, got {params.kind!r}")
    cfg = params.config
    token_ids = np.asarray(token_ids)
    length = token_ids.shape[1]
    if length < max(cfg.filter_widths):
        raise ShapeError(
            f"cnn_logits: sequence length {length} shorter than widest filter "
            f"{max(cfg.filter_widths)}; pad inputs to at least the filter width"
        )
    e = ad.embedding_lookup(params["token_emb"], token_ids)
    real = _nonpad(token_ids).sum(axis=1)

    pooled = []
    for width in cfg.filter_widths:
        n_pos = length - width + 1
        windows = ad.concat(
            [ad.slice_axis(e, 1, i, i + n_pos) for i in range(width)], axis=-1
        )  # (B, n_pos, width*d)
        h = ad.relu(ad.add(ad.matmul(windows, params[f"conv{width}_w"]), params[f"conv{width}_b"]))
        n_valid = np.maximum(real - width + 1, 1)
        valid = np.arange(n_pos)[None, :] < n_valid[:, None]
        h = ad.add(h, Tensor(_mask_additive(valid)[:, :, None]))
        pooled.append(ad.amax(h, axis=1))
    feats = ad.concat(pooled, axis=-1)
    return ad.add(ad.matmul(feats, params["out_w"]), params["out_b"])


def cnn_forward(params: ModelParams, token_ids: np.ndarray) -> Tensor:
    """Class distribution of the CNN baseline; rows sum to 1."""
    return ad.softmax(cnn_logits(params, token_ids))


def predict_classes(y: np.ndarray) -> np.ndarray:
    """Argmax with lowest-class-index tie-break."""
    return np.argmax(y, axis=1)
