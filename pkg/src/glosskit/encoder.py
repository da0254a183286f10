"""Micro transformer encoder with a masked-LM head and a token-classification head.

Post-layer-norm blocks (residual, then LayerNorm) with learned absolute
position embeddings. Keys carry no bias: a per-query constant added to every
score cancels in the softmax, so its gradient is identically zero.

Parameter shapes, for hidden size H, FFN size F, input vocabulary V, label
vocabulary L, P positions and N layers:

==========================  ========  ===============
name                        shape     count
==========================  ========  ===============
tok_emb                     V x H     V*H
pos_emb                     P x H     P*H
emb_ln.g, emb_ln.b          H         2H
layers.i.attn.w{q,k,v,o}    H x H     4*H*H   (per layer)
layers.i.attn.b{q,v,o}      H         3*H     (per layer)
layers.i.attn_ln.{g,b}      H         2H      (per layer)
layers.i.ffn.w1, .b1        H x F, F  H*F + F (per layer)
layers.i.ffn.w2, .b2        F x H, H  F*H + H (per layer)
layers.i.ffn_ln.{g,b}       H         2H      (per layer)
mlm.w, mlm.b                H x V, V  H*V + V
cls.w, cls.b                H x L, L  H*L + L (absent when L == 0)
==========================  ========  ===============

Checkpoints are stored as ``b"GLSK"``, a little-endian u32 format version,
a u32 header length, a UTF-8 JSON header (config, metadata and a tensor
manifest with shapes and byte offsets into the data section), then the raw
little-endian float32 arrays in manifest order.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import ConfigError, IdOutOfRange, RuntimeFailure, SequenceTooLong
from .igt_data import PAD

MAGIC = b"GLSK"
FORMAT_VERSION = 1
INIT_STD = 0.02
LN_EPS = 1e-5
_NEG_INF = -1e9


@dataclass(frozen=True)
class EncoderConfig:
    input_vocab_size: int
    label_vocab_size: int = 0
    n_layers: int = 3
    hidden: int = 100
    n_heads: int = 5
    ffn_dim: int | None = None
    max_positions: int = 512
    dropout: float = 0.1

    def __post_init__(self):
        if self.ffn_dim is None:
            object.__setattr__(self, "ffn_dim", 4 * self.hidden)
        if self.hidden <= 0 or self.n_heads <= 0 or self.hidden % self.n_heads:
            raise ConfigError(f"hidden size {self.hidden} is not divisible by {self.n_heads} heads")
        if self.ffn_dim < self.hidden:
            raise ConfigError("ffn_dim must be >= hidden")
        if self.input_vocab_size <= 0 or self.label_vocab_size < 0 or self.n_layers < 0:
            raise ConfigError("vocabulary sizes and layer count must be positive")
        if self.max_positions <= 0:
            raise ConfigError("max_positions must be positive")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must lie in [0, 1)")

    @property
    def head_dim(self):
        return self.hidden // self.n_heads

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def param_shapes(cfg):
    """Ordered name -> shape table; every shape is a function of the config."""
    h, f, v, l, p = cfg.hidden, cfg.ffn_dim, cfg.input_vocab_size, cfg.label_vocab_size, cfg.max_positions
    shapes = {"tok_emb": (v, h), "pos_emb": (p, h), "emb_ln.g": (h,), "emb_ln.b": (h,)}
    for i in range(cfg.n_layers):
        pre = f"layers.{i}."
        for m in "qkvo":
            shapes[pre + f"attn.w{m}"] = (h, h)
            if m != "k":
                shapes[pre + f"attn.b{m}"] = (h,)
        shapes[pre + "attn_ln.g"] = (h,)
        shapes[pre + "attn_ln.b"] = (h,)
        shapes[pre + "ffn.w1"] = (h, f)
        shapes[pre + "ffn.b1"] = (f,)
        shapes[pre + "ffn.w2"] = (f, h)
        shapes[pre + "ffn.b2"] = (h,)
        shapes[pre + "ffn_ln.g"] = (h,)
        shapes[pre + "ffn_ln.b"] = (h,)
    shapes["mlm.w"] = (h, v)
    shapes["mlm.b"] = (v,)
    if l:
        shapes["cls.w"] = (h, l)
        shapes["cls.b"] = (l,)
    return shapes


def is_decayed(name, shape):
    """Weight decay applies to weight matrices (and embeddings), never to biases or norms."""
    return len(shape) == 2


def _trunc_normal(rng, shape, std):
    x = rng.normal(0.0, std, size=shape)
    bad = np.abs(x) > 2 * std
    while bad.any():
        x[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(x) > 2 * std
    return x


@dataclass
class Checkpoint:
    """Config plus named parameter tensors (and free-form metadata)."""

    config: EncoderConfig
    params: dict
    meta: dict = field(default_factory=dict)
    # per-epoch training records; kept in memory only, never written to disk
    history: list = field(default_factory=list, compare=False, repr=False)

    def astype(self, dtype):
        return Checkpoint(self.config, {k: ad.Tensor(v.data.astype(dtype)) for k, v in self.params.items()},
                          dict(self.meta))

    def copy(self):
        return Checkpoint(self.config, {k: ad.Tensor(v.data.copy()) for k, v in self.params.items()},
                          json.loads(json.dumps(self.meta)))

    def n_params(self):
        return sum(v.data.size for v in self.params.values())

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def with_config(self, **changes):
        d = self.config.to_dict()
        d.update(changes)
        return Checkpoint(EncoderConfig(**d), self.params, self.meta)


def init_params(cfg, seed=0, dtype=np.float32):
    """Truncated-normal(0, 0.02) weights, zero biases and LN offsets, unit LN gains."""
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in param_shapes(cfg).items():
        if name.endswith("ln.g"):
            arr = np.ones(shape)
        elif len(shape) == 2:
            arr = _trunc_normal(rng, shape, INIT_STD)
        else:
            arr = np.zeros(shape)
        params[name] = ad.Tensor(arr.astype(dtype), name=name)
    return Checkpoint(cfg, params)


def _params_of(model):
    return model.params if isinstance(model, Checkpoint) else model


def _check_ids(cfg, ids):
    if ids.ndim != 2:
        raise ValueError(f"input_ids must be [batch, seq], got shape {ids.shape}")
    if ids.shape[1] > cfg.max_positions:
        raise SequenceTooLong(f"sequence length {ids.shape[1]} exceeds max_positions {cfg.max_positions}")
    if ids.size and (ids.min() < 0 or ids.max() >= cfg.input_vocab_size):
        raise IdOutOfRange(f"token ids must lie in [0, {cfg.input_vocab_size})")


def forward(model, input_ids, pad_mask=None, *, training=False, rng=None, return_attention=False):
    """Encode a padded batch ``[batch, seq]`` into hidden states ``[batch, seq, hidden]``.

    ``pad_mask`` is True at real tokens; it defaults to ``input_ids != PAD``.
    Padded keys receive no attention and padded outputs are zeroed.
    """
    cfg = model.config
    p = _params_of(model)
    ids = np.asarray(input_ids)
    _check_ids(cfg, ids)
    if pad_mask is None:
        pad_mask = ids != PAD
    pad_mask = np.asarray(pad_mask, dtype=bool)
    if training and cfg.dropout > 0 and rng is None:
        raise ValueError("training-mode forward needs an rng for dropout")
    b, t = ids.shape
    h, nh, hd = cfg.hidden, cfg.n_heads, cfg.head_dim
    dt = p["tok_emb"].dtype
    drop = cfg.dropout if training else 0.0

    x = ad.add(ad.embedding_lookup(p["tok_emb"], ids), ad.embedding_lookup(p["pos_emb"], np.arange(t)))
    x = ad.layer_norm(x, p["emb_ln.g"], p["emb_ln.b"], LN_EPS)
    x = ad.dropout(x, drop, rng)
    key_bias = ad.Tensor(np.where(pad_mask, 0.0, _NEG_INF).astype(dt)[:, None, None, :])
    inv_sqrt = 1.0 / np.sqrt(hd)
    attentions = []

    def heads(z):
        return ad.transpose(ad.reshape(z, (b, t, nh, hd)), (0, 2, 1, 3))

    for i in range(cfg.n_layers):
        pre = f"layers.{i}."
        q = heads(ad.linear(x, p[pre + "attn.wq"], p[pre + "attn.bq"]))
        k = heads(ad.linear(x, p[pre + "attn.wk"]))
        v = heads(ad.linear(x, p[pre + "attn.wv"], p[pre + "attn.bv"]))
        scores = ad.add(ad.scale(ad.matmul(q, ad.transpose(k, (0, 1, 3, 2))), inv_sqrt), key_bias)
        attn = ad.softmax(scores, axis=-1)
        if return_attention:
            attentions.append(attn.data)
        attn = ad.dropout(attn, drop, rng)
        ctx = ad.reshape(ad.transpose(ad.matmul(attn, v), (0, 2, 1, 3)), (b, t, h))
        out = ad.dropout(ad.linear(ctx, p[pre + "attn.wo"], p[pre + "attn.bo"]), drop, rng)
        x = ad.layer_norm(ad.add(x, out), p[pre + "attn_ln.g"], p[pre + "attn_ln.b"], LN_EPS)
        ff = ad.gelu(ad.linear(x, p[pre + "ffn.w1"], p[pre + "ffn.b1"]))
        ff = ad.dropout(ad.linear(ff, p[pre + "ffn.w2"], p[pre + "ffn.b2"]), drop, rng)
        x = ad.layer_norm(ad.add(x, ff), p[pre + "ffn_ln.g"], p[pre + "ffn_ln.b"], LN_EPS)

    x = ad.mul(x, ad.Tensor(pad_mask.astype(dt)[:, :, None]))
    if return_attention:
        return x, attentions
    return x


def mlm_logits(model, hidden):
    p = _params_of(model)
    return ad.linear(hidden, p["mlm.w"], p["mlm.b"])


def classify_logits(model, hidden):
    p = _params_of(model)
    if "cls.w" not in p:
        raise ConfigError("model has no classification head (label_vocab_size == 0)")
    return ad.linear(hidden, p["cls.w"], p["cls.b"])


def pad_batch(seqs, pad_value=PAD, dtype=np.int64):
    """Right-pad a list of id sequences into an array; returns (array, mask of real tokens)."""
    t = max((len(s) for s in seqs), default=0)
    out = np.full((len(seqs), t), pad_value, dtype=dtype)
    mask = np.zeros((len(seqs), t), dtype=bool)
    for i, s in enumerate(seqs):
        out[i, :len(s)] = s
        mask[i, :len(s)] = True
    return out, mask


# ---------------------------------------------------------------------------
# checkpoint files


def save_checkpoint(ckpt, path):
    shapes = param_shapes(ckpt.config)
    if set(shapes) != set(ckpt.params):
        raise RuntimeFailure("checkpoint parameters do not match the config's shape table")
    manifest, blobs, offset = [], [], 0
    for name, shape in shapes.items():
        arr = np.ascontiguousarray(ckpt.params[name].data, dtype="<f4")
        if arr.shape != tuple(shape):
            raise RuntimeFailure(f"parameter {name} has shape {arr.shape}, expected {shape}")
        raw = arr.tobytes()
        manifest.append({"name": name, "shape": list(shape), "offset": offset, "nbytes": len(raw)})
        blobs.append(raw)
        offset += len(raw)
    header = json.dumps({"config": ckpt.config.to_dict(), "meta": ckpt.meta, "tensors": manifest},
                        sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", FORMAT_VERSION, len(header)))
        fh.write(header)
        for raw in blobs:
            fh.write(raw)


def load_checkpoint(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise RuntimeFailure(f"{path}: not a glosskit checkpoint")
    version, hlen = struct.unpack("<II", blob[4:12])
    if version != FORMAT_VERSION:
        raise RuntimeFailure(f"{path}: unsupported checkpoint version {version}")
    header = json.loads(blob[12:12 + hlen].decode("utf-8"))
    base = 12 + hlen
    cfg = EncoderConfig.from_dict(header["config"])
    params = {}
    for ent in header["tensors"]:
        start = base + ent["offset"]
        arr = np.frombuffer(blob, dtype="<f4", count=ent["nbytes"] // 4, offset=start)
        params[ent["name"]] = ad.Tensor(arr.reshape(ent["shape"]).astype(np.float32), name=ent["name"])
    return Checkpoint(cfg, params, header.get("meta", {}))
