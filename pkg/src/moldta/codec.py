"""Character-level tokenization, vocabularies, truncation and padding.

Molecule strings are decorated as [REP] [BEGIN] c1 .. cn [END] and padded
to a fixed length; protein strings are bare characters padded to a fixed
length. Vocabularies are closed: characters unseen at build time are hard
errors at encode time, not an unknown token.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError

MOLECULE = "molecule"
PROTEIN = "protein"

PAD = "[PAD]"
REP = "[REP]"
BEGIN = "[BEGIN]"
END = "[END]"
MASK = "[MASK]"

MOL_SPECIALS = (PAD, REP, BEGIN, END, MASK)
PROT_SPECIALS = (PAD,)


@dataclass(frozen=True)
class Vocab:
    """Bidirectional token<->id map; ids are dense and start at 0 ([PAD])."""

    kind: str
    tokens: tuple[str, ...]
    index: dict[str, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.kind not in (MOLECULE, PROTEIN):
            raise ValueError(f"unknown vocab kind {self.kind!r}")
        specials = MOL_SPECIALS if self.kind == MOLECULE else PROT_SPECIALS
        if tuple(self.tokens[: len(specials)]) != specials:
            raise ValueError(f"{self.kind} vocab must start with {specials}")
        index = {tok: i for i, tok in enumerate(self.tokens)}
        if len(index) != len(self.tokens):
            raise ValueError("duplicate tokens in vocab")
        object.__setattr__(self, "index", index)

    def __len__(self):
        return len(self.tokens)

    @property
    def specials(self):
        return MOL_SPECIALS if self.kind == MOLECULE else PROT_SPECIALS

    @property
    def pad_id(self):
        return 0

    def id_of(self, token: str) -> int:
        return self.index[token]

    def token_of(self, token_id: int) -> str:
        if not 0 <= token_id < len(self.tokens):
            raise DataError(f"token id {token_id} out of range [0, {len(self.tokens)})")
        return self.tokens[token_id]

    def special_ids(self) -> frozenset[int]:
        return frozenset(self.index[t] for t in self.specials)

    def payload_ids(self) -> np.ndarray:
        """Ids of ordinary (non-special) tokens, in vocabulary order."""
        n_special = len(self.specials)
        return np.arange(n_special, len(self.tokens), dtype=np.int64)

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            for token in self.tokens:
                fh.write(token + "\n")

    @classmethod
    def load(cls, path) -> "Vocab":
        with open(path, "r", encoding="utf-8") as fh:
            tokens = tuple(line.rstrip("\n") for line in fh)
        if not tokens:
            raise DataError(f"empty vocab file {path}")
        kind = MOLECULE if tuple(tokens[: len(MOL_SPECIALS)]) == MOL_SPECIALS else PROTEIN
        return cls(kind=kind, tokens=tokens)


@dataclass(frozen=True)
class CodecConfig:
    mol_max_len: int = 100
    prot_max_len: int = 1000

    def __post_init__(self):
        if self.mol_max_len <= 0 or self.prot_max_len <= 0:
            raise ValueError("sequence length limits must be strictly positive")


@dataclass
class EncodedSequence:
    """Fixed-length id sequence; mask is True at real (non-padding) positions."""

    ids: np.ndarray
    mask: np.ndarray
    truncated: bool

    def __post_init__(self):
        self.ids = np.asarray(self.ids, dtype=np.int64)
        self.mask = np.asarray(self.mask, dtype=bool)
        if self.ids.shape != self.mask.shape:
            raise ValueError("ids and mask lengths differ")


def build_vocab(corpus, kind: str) -> Vocab:
    """Collect the distinct characters of a corpus into a closed vocabulary.

    Ordering is deterministic: special tokens first, then observed characters
    sorted lexicographically.
    """
    specials = MOL_SPECIALS if kind == MOLECULE else PROT_SPECIALS
    seen = set()
    empty = True
    for line in corpus:
        empty = False
        seen.update(line)
    if empty:
        raise DataError("empty corpus")
    return Vocab(kind=kind, tokens=specials + tuple(sorted(seen)))


def _lookup(chars: str, vocab: Vocab) -> list[int]:
    ids = []
    for pos, ch in enumerate(chars):
        token_id = vocab.index.get(ch)
        if token_id is None:
            raise DataError(f"unknown character {ch!r} at position {pos}")
        ids.append(token_id)
    return ids


def encode_molecule(smiles: str, vocab: Vocab, cfg: CodecConfig,
                    keep_rep_when_truncated: bool = False) -> EncodedSequence:
    """Encode a molecule string to [REP] [BEGIN] chars [END] padded to mol_max_len.

    When the decorated sequence would exceed mol_max_len, the boundary tokens
    are dropped and the middle window of the payload is kept (head and tail
    truncated together); with keep_rep_when_truncated the [REP] token is
    retained at position 0 and the payload window shrinks by one.
    """
    if vocab.kind != MOLECULE:
        raise ValueError("encode_molecule requires a molecule vocab")
    limit = cfg.mol_max_len
    payload = _lookup(smiles, vocab)
    n = len(payload)
    if n + 3 <= limit:
        ids = [vocab.id_of(REP), vocab.id_of(BEGIN)] + payload + [vocab.id_of(END)]
        truncated = False
    elif keep_rep_when_truncated:
        window = min(n, limit - 1)
        start = (n - window) // 2
        ids = [vocab.id_of(REP)] + payload[start:start + window]
        truncated = True
    else:
        window = min(n, limit)
        start = (n - window) // 2
        ids = payload[start:start + window]
        truncated = True
    real = len(ids)
    ids = ids + [vocab.pad_id] * (limit - real)
    mask = np.arange(limit) < real
    return EncodedSequence(ids=np.array(ids, dtype=np.int64), mask=mask, truncated=truncated)


def encode_protein(fasta: str, vocab: Vocab, cfg: CodecConfig) -> EncodedSequence:
    """Encode a protein string as bare characters padded to prot_max_len.

    Proteins longer than prot_max_len keep their first prot_max_len characters.
    """
    if vocab.kind != PROTEIN:
        raise ValueError("encode_protein requires a protein vocab")
    limit = cfg.prot_max_len
    payload = _lookup(fasta, vocab)
    truncated = len(payload) > limit
    ids = payload[:limit]
    real = len(ids)
    ids = ids + [vocab.pad_id] * (limit - real)
    mask = np.arange(limit) < real
    return EncodedSequence(ids=np.array(ids, dtype=np.int64), mask=mask, truncated=truncated)


def decode(ids, vocab: Vocab) -> str:
    """Inverse of encoding: strip special tokens and padding, join the rest."""
    if isinstance(ids, EncodedSequence):
        ids = ids.ids
    special = vocab.special_ids()
    chars = []
    for token_id in np.asarray(ids).reshape(-1):
        token_id = int(token_id)
        token = vocab.token_of(token_id)
        if token_id not in special:
            chars.append(token)
    return "".join(chars)


def tokenize_molecule(smiles: str, cfg: CodecConfig | None = None) -> list[str]:
    """Token stream (strings, no padding) for one molecule, truncation included."""
    cfg = cfg or CodecConfig()
    n = len(smiles)
    if n + 3 <= cfg.mol_max_len:
        return [REP, BEGIN, *smiles, END]
    window = min(n, cfg.mol_max_len)
    start = (n - window) // 2
    return list(smiles[start:start + window])
