"""Whole-pipeline configuration and the combined affinity model.

A DtiModel owns the molecule encoder, the protein tower and the interaction
head; its checkpoint stores every tensor under the prefixes transformer.,
protein. and interaction., together with the configs and both vocabularies,
so a saved model is self-contained.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import transformer as mt
from .autodiff import Tensor
from .checkpoint import Checkpoint
from .codec import MOLECULE, PROTEIN, CodecConfig, Vocab
from .interaction import InteractionConfig, InteractionWeights, predict_affinity_batch
from .protein_cnn import ProteinCnnConfig, ProteinCnnWeights, protein_forward_ids
from .transformer import TransformerConfig, TransformerWeights

# Per-dataset presets: protein filter length, dense stack, learning rate.
MODE_PRESETS = {
    "kiba": {"filter_lengths": (12, 12, 12), "dense_sizes": (1024, 1024, 512),
             "learning_rate": 1e-4},
    "davis": {"filter_lengths": (8, 8, 8), "dense_sizes": (1024, 512),
              "learning_rate": 1e-3},
}


@dataclass(frozen=True)
class ModelConfig:
    """All architecture hyperparameters for one end-to-end model."""

    codec: CodecConfig
    transformer: TransformerConfig
    protein: ProteinCnnConfig
    interaction: InteractionConfig
    # How truncated molecules are pooled: "rep" keeps [REP] at position 0
    # while truncating (pool row 0); "mean" pools the masked mean instead.
    truncation_pooling: str = "rep"

    def __post_init__(self):
        if self.truncation_pooling not in ("rep", "mean"):
            raise ValueError("truncation_pooling must be 'rep' or 'mean'")
        if self.codec.mol_max_len != self.transformer.max_len:
            raise ValueError("codec mol_max_len must equal transformer max_len")

    @property
    def keep_rep_when_truncated(self) -> bool:
        return self.truncation_pooling == "rep"

    def to_dict(self) -> dict:
        return {
            "codec": {"mol_max_len": self.codec.mol_max_len,
                      "prot_max_len": self.codec.prot_max_len},
            "transformer": self.transformer.to_dict(),
            "protein": self.protein.to_dict(),
            "interaction": self.interaction.to_dict(),
            "truncation_pooling": self.truncation_pooling,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(
            codec=CodecConfig(**d["codec"]),
            transformer=TransformerConfig.from_dict(d["transformer"]),
            protein=ProteinCnnConfig.from_dict(d["protein"]),
            interaction=InteractionConfig.from_dict(d["interaction"]),
            truncation_pooling=d.get("truncation_pooling", "rep"),
        )

    @classmethod
    def for_mode(cls, mode: str, mol_vocab_size: int, prot_vocab_size: int,
                 **overrides) -> "ModelConfig":
        if mode not in MODE_PRESETS:
            raise ValueError(f"unknown dataset mode {mode!r}")
        preset = MODE_PRESETS[mode]
        codec = overrides.pop("codec", CodecConfig())
        transformer = overrides.pop(
            "transformer", TransformerConfig(vocab_size=mol_vocab_size,
                                             max_len=codec.mol_max_len))
        protein = overrides.pop(
            "protein", ProteinCnnConfig(vocab_size=prot_vocab_size,
                                        filter_lengths=preset["filter_lengths"]))
        interaction = overrides.pop(
            "interaction", InteractionConfig(dense_sizes=preset["dense_sizes"]))
        return cls(codec=codec, transformer=transformer, protein=protein,
                   interaction=interaction, **overrides)


class DtiModel:
    """Molecule encoder + protein tower + interaction head."""

    def __init__(self, cfg: ModelConfig, mol_vocab: Vocab, prot_vocab: Vocab, rng):
        if len(mol_vocab) != cfg.transformer.vocab_size:
            raise ValueError("molecule vocab size does not match transformer config")
        if len(prot_vocab) != cfg.protein.vocab_size:
            raise ValueError("protein vocab size does not match protein config")
        self.cfg = cfg
        self.mol_vocab = mol_vocab
        self.prot_vocab = prot_vocab
        self.tw = TransformerWeights(cfg.transformer, rng)
        self.pw = ProteinCnnWeights(cfg.protein, rng)
        self.iw = InteractionWeights(
            cfg.interaction,
            cfg.transformer.hidden + cfg.protein.out_width, rng)

    def named_params(self) -> dict[str, Tensor]:
        out = {}
        for name, tensor in self.tw.named().items():
            out[f"transformer.{name}"] = tensor
        for name, tensor in self.pw.named().items():
            out[f"protein.{name}"] = tensor
        for name, tensor in self.iw.named().items():
            out[f"interaction.{name}"] = tensor
        return out

    def forward_ids(self, mol_ids, mol_mask, prot_ids, prot_mask,
                    training: bool = False, rng=None) -> Tensor:
        """Affinity predictions [B] for encoded molecule/protein id batches."""
        encoded = mt.encode_ids(mol_ids, mol_mask, self.tw, self.cfg.transformer,
                                training=training, rng=rng)
        if self.cfg.truncation_pooling == "rep":
            m_rep = mt.pool_rep_batch(encoded)
        else:
            m_rep = mt.pool_mean_batch(encoded, mol_mask)
        p_rep = protein_forward_ids(prot_ids, prot_mask, self.pw, self.cfg.protein,
                                    training=training)
        return predict_affinity_batch(m_rep, p_rep, self.iw, self.cfg.interaction,
                                      training=training, rng=rng)

    def predict(self, enc_mols, enc_prots, batch_size: int = 32) -> np.ndarray:
        """Inference-mode predictions for aligned encoded sequence lists."""
        if len(enc_mols) != len(enc_prots):
            raise ValueError("molecule and protein lists must align")
        out = np.empty(len(enc_mols), dtype=np.float64)
        for start in range(0, len(enc_mols), batch_size):
            mols = enc_mols[start:start + batch_size]
            prots = enc_prots[start:start + batch_size]
            pred = self.forward_ids(
                np.stack([m.ids for m in mols]), np.stack([m.mask for m in mols]),
                np.stack([p.ids for p in prots]), np.stack([p.mask for p in prots]),
                training=False)
            out[start:start + len(mols)] = pred.data
        return out

    def to_checkpoint(self, extra_meta: dict | None = None) -> Checkpoint:
        meta = {
            "kind": "dti",
            "model": self.cfg.to_dict(),
            "mol_vocab": list(self.mol_vocab.tokens),
            "prot_vocab": list(self.prot_vocab.tokens),
        }
        if extra_meta:
            meta.update(extra_meta)
        tensors = {name: t.data.copy() for name, t in self.named_params().items()}
        return Checkpoint(meta=meta, tensors=tensors)

    @classmethod
    def from_checkpoint(cls, ckpt: Checkpoint) -> "DtiModel":
        if ckpt.meta.get("kind") != "dti":
            raise ValueError(f"not an affinity-model checkpoint: kind={ckpt.meta.get('kind')!r}")
        cfg = ModelConfig.from_dict(ckpt.meta["model"])
        mol_vocab = Vocab(kind=MOLECULE, tokens=tuple(ckpt.meta["mol_vocab"]))
        prot_vocab = Vocab(kind=PROTEIN, tokens=tuple(ckpt.meta["prot_vocab"]))
        model = cls(cfg, mol_vocab, prot_vocab, np.random.default_rng(0))
        named = model.named_params()
        missing = set(named) - set(ckpt.tensors)
        if missing:
            raise ValueError(f"checkpoint missing tensors: {sorted(missing)[:5]}")
        for name, tensor in named.items():
            arr = ckpt.tensors[name]
            if arr.shape != tensor.data.shape:
                raise ValueError(f"shape mismatch for {name}: {arr.shape} vs {tensor.data.shape}")
            tensor.data = arr.copy()
        return model
