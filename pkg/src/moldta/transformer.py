"""Molecule encoder: token + position embeddings, stacked multi-head
self-attention blocks (post-norm: sublayer -> dropout -> add -> norm),
a masked-token prediction head, and pooling of the position-0 vector.

Forward functions operate on id batches [B, L]; the single-sequence entry
points wrap a batch of one.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .codec import EncodedSequence


@dataclass(frozen=True)
class TransformerConfig:
    vocab_size: int
    num_layers: int = 8
    num_heads: int = 8
    hidden: int = 128
    intermediate: int = 512
    dropout: float = 0.1
    max_len: int = 100

    def __post_init__(self):
        values = (self.vocab_size, self.num_layers, self.num_heads,
                  self.hidden, self.intermediate, self.max_len)
        if any(v <= 0 for v in values):
            raise ValueError("all transformer dimensions must be positive")
        if self.hidden % self.num_heads != 0:
            raise ValueError(
                f"hidden size {self.hidden} not divisible by {self.num_heads} heads")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must lie in [0, 1)")

    @property
    def head_dim(self) -> int:
        return self.hidden // self.num_heads

    def to_dict(self) -> dict:
        return {
            "vocab_size": self.vocab_size, "num_layers": self.num_layers,
            "num_heads": self.num_heads, "hidden": self.hidden,
            "intermediate": self.intermediate, "dropout": self.dropout,
            "max_len": self.max_len,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TransformerConfig":
        return cls(**d)


def trunc_normal(shape, rng, std: float = 0.02) -> np.ndarray:
    """Zero-mean Gaussian truncated at +/-2 std, re-drawing the tails."""
    out = rng.normal(0.0, std, size=shape)
    bad = np.abs(out) > 2 * std
    while bad.any():
        out[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(out) > 2 * std
    return out


def _param(shape, rng) -> Tensor:
    return Tensor(trunc_normal(shape, rng), requires_grad=True)


def _zeros(shape) -> Tensor:
    return Tensor(np.zeros(shape), requires_grad=True)


def _ones(shape) -> Tensor:
    return Tensor(np.ones(shape), requires_grad=True)


class LayerWeights:
    """One attention block: fused q/k/v projections, output projection,
    feed-forward pair, and the two normalization affines."""

    FIELDS = ("wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo",
              "ln1_g", "ln1_b", "ff1_w", "ff1_b", "ff2_w", "ff2_b",
              "ln2_g", "ln2_b")

    def __init__(self, cfg: TransformerConfig, rng):
        d, inter = cfg.hidden, cfg.intermediate
        self.wq, self.wk, self.wv = _param((d, d), rng), _param((d, d), rng), _param((d, d), rng)
        self.bq, self.bk, self.bv = _zeros(d), _zeros(d), _zeros(d)
        self.wo, self.bo = _param((d, d), rng), _zeros(d)
        self.ln1_g, self.ln1_b = _ones(d), _zeros(d)
        self.ff1_w, self.ff1_b = _param((d, inter), rng), _zeros(inter)
        self.ff2_w, self.ff2_b = _param((inter, d), rng), _zeros(d)
        self.ln2_g, self.ln2_b = _ones(d), _zeros(d)


class TransformerWeights:
    """All trainable tensors of the molecule encoder plus its LM head."""

    def __init__(self, cfg: TransformerConfig, rng):
        self.cfg = cfg
        self.mte = _param((cfg.vocab_size, cfg.hidden), rng)
        self.pe = _param((cfg.max_len, cfg.hidden), rng)
        self.layers = [LayerWeights(cfg, rng) for _ in range(cfg.num_layers)]
        self.lm_w = _param((cfg.hidden, cfg.vocab_size), rng)
        self.lm_b = _zeros(cfg.vocab_size)

    def named(self) -> dict[str, Tensor]:
        out = {"mte": self.mte, "pe": self.pe}
        for i, layer in enumerate(self.layers):
            for name in LayerWeights.FIELDS:
                out[f"layer{i}.{name}"] = getattr(layer, name)
        out["lm_w"] = self.lm_w
        out["lm_b"] = self.lm_b
        return out

    def load_arrays(self, arrays: dict[str, np.ndarray]):
        """Overwrite every weight from a name->array map (shape-checked)."""
        named = self.named()
        missing = set(named) - set(arrays)
        if missing:
            raise ValueError(f"missing transformer tensors: {sorted(missing)}")
        for name, tensor in named.items():
            arr = np.asarray(arrays[name], dtype=tensor.data.dtype)
            if arr.shape != tensor.data.shape:
                raise ValueError(f"shape mismatch for {name}: {arr.shape} vs {tensor.data.shape}")
            tensor.data = arr.copy()


def embed_ids(ids: np.ndarray, w: TransformerWeights) -> Tensor:
    """Token-embedding rows plus position embeddings, padding included."""
    ids = np.asarray(ids, dtype=np.int64)
    length = ids.shape[-1]
    if length > w.pe.data.shape[0]:
        raise ValueError(f"sequence length {length} exceeds position table {w.pe.data.shape[0]}")
    tok = ad.embedding_lookup(w.mte, ids)
    pos = ad.embedding_lookup(w.pe, np.arange(length))
    return ad.add(tok, pos)


def embed(seq: EncodedSequence, w: TransformerWeights) -> Tensor:
    """Single-sequence embedding: x_i = MTE[id_i] + PE[i] for every position."""
    return ad.take_index(embed_ids(seq.ids[None, :], w), 0, 0)


def attention_block(x: Tensor, key_mask: np.ndarray, layer: LayerWeights,
                    cfg: TransformerConfig, training: bool = False, rng=None,
                    collect_attn: Optional[list] = None) -> Tensor:
    """One encoder block over [B, L, D] with a boolean key mask [B, L]."""
    b, length, d = x.data.shape
    h, dk = cfg.num_heads, cfg.head_dim

    def heads(t):
        return ad.transpose(ad.reshape(t, (b, length, h, dk)), (0, 2, 1, 3))

    q = heads(ad.add(ad.matmul(x, layer.wq), layer.bq))
    k = heads(ad.add(ad.matmul(x, layer.wk), layer.bk))
    v = heads(ad.add(ad.matmul(x, layer.wv), layer.bv))

    scores = ad.scale(ad.matmul(q, ad.transpose(k, (0, 1, 3, 2))), 1.0 / np.sqrt(dk))
    probs = ad.softmax_rows(scores, mask=key_mask[:, None, None, :])
    if collect_attn is not None:
        collect_attn.append(probs.data.copy())
    ctx = ad.reshape(ad.transpose(ad.matmul(probs, v), (0, 2, 1, 3)), (b, length, d))
    attn_out = ad.add(ad.matmul(ctx, layer.wo), layer.bo)
    attn_out = ad.dropout(attn_out, cfg.dropout, training, rng)
    x = ad.layer_norm(ad.add(x, attn_out), layer.ln1_g, layer.ln1_b)

    ff = ad.gelu(ad.add(ad.matmul(x, layer.ff1_w), layer.ff1_b))
    ff = ad.add(ad.matmul(ff, layer.ff2_w), layer.ff2_b)
    ff = ad.dropout(ff, cfg.dropout, training, rng)
    return ad.layer_norm(ad.add(x, ff), layer.ln2_g, layer.ln2_b)


def encode_ids(ids: np.ndarray, mask: np.ndarray, w: TransformerWeights,
               cfg: TransformerConfig, training: bool = False, rng=None,
               collect_attn: Optional[list] = None) -> Tensor:
    """Full encoder over an id batch [B, L] -> [B, L, D]."""
    x = embed_ids(ids, w)
    for layer in w.layers:
        x = attention_block(x, np.asarray(mask, dtype=bool), layer, cfg,
                            training=training, rng=rng, collect_attn=collect_attn)
    return x


def encode(seq: EncodedSequence, w: TransformerWeights, cfg: TransformerConfig,
           training: bool = False, rng=None,
           collect_attn: Optional[list] = None) -> Tensor:
    """Single-sequence encoding [L, D]; composition of embed and the blocks."""
    out = encode_ids(seq.ids[None, :], seq.mask[None, :], w, cfg,
                     training=training, rng=rng, collect_attn=collect_attn)
    return ad.take_index(out, 0, 0)


def pool_rep(encoded: Tensor) -> Tensor:
    """The whole-molecule vector: row 0 of the final layer (the [REP] slot)."""
    return ad.take_index(encoded, 0, axis=0)


def pool_rep_batch(encoded: Tensor) -> Tensor:
    return ad.take_index(encoded, 0, axis=1)


def pool_mean_batch(encoded: Tensor, mask: np.ndarray) -> Tensor:
    """Mean over real (masked True) positions of [B, L, D] -> [B, D]."""
    mask = np.asarray(mask, dtype=np.float64)
    counts = mask.sum(axis=1, keepdims=True)
    if (counts == 0).any():
        raise ValueError("cannot mean-pool a sequence with no real tokens")
    weights = Tensor(mask[:, :, None] / counts[:, :, None])
    return ad.reduce_sum(ad.multiply(encoded, weights), axis=1)


def lm_logits(encoded: Tensor, w: TransformerWeights) -> Tensor:
    """Per-position vocabulary logits via the LM projection head."""
    return ad.add(ad.matmul(encoded, w.lm_w), w.lm_b)
