"""Affinity-table ingestion, cross-validation fold handling, and the
candidate-ranking workflow.

Dataset files are tab-separated with a header row naming the columns
smiles, fasta, affinity and (optionally) fold; fold ids 0-4 pin membership
in the five cross-validation folds, and rows without a fold id form the
held-out test set. Candidate files carry id, name, smiles columns.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .codec import encode_molecule, encode_protein
from .errors import DataError
from .model import DtiModel
from .training import pkd_transform

N_FOLDS = 5


@dataclass
class AffinityRecord:
    smiles: str
    fasta: str
    affinity: float
    fold: Optional[int] = None

    def __post_init__(self):
        if not math.isfinite(self.affinity):
            raise DataError(f"affinity must be finite, got {self.affinity}")
        if self.fold is not None and not 0 <= self.fold < N_FOLDS:
            raise DataError(f"fold id must lie in 0..{N_FOLDS - 1}, got {self.fold}")


def _read_table(path, required: tuple[str, ...], optional: tuple[str, ...] = ()):
    """Parse a header-first TSV into per-row dicts; errors carry line numbers."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    if not lines:
        raise DataError(f"{path}: empty file")
    header = lines[0].split("\t")
    known = set(required) | set(optional)
    missing = [c for c in required if c not in header]
    if missing:
        raise DataError(f"{path}: header missing columns {missing}")
    unknown = [c for c in header if c not in known]
    if unknown:
        raise DataError(f"{path}: unknown columns {unknown}")
    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        cells = line.split("\t")
        if len(cells) != len(header):
            raise DataError(f"{path} line {lineno}: expected {len(header)} "
                            f"columns, got {len(cells)}")
        rows.append((lineno, dict(zip(header, cells))))
    return rows


def load_affinity_dataset(path, mode: str = "kiba", raw_kd: bool = False):
    """Parse an affinity table; in davis mode with raw_kd, nanomolar values
    are log-transformed on the way in."""
    if mode not in ("kiba", "davis"):
        raise DataError(f"unknown dataset mode {mode!r}")
    if raw_kd and mode != "davis":
        raise DataError("raw_kd applies to davis mode only")
    rows = _read_table(path, required=("smiles", "fasta", "affinity"), optional=("fold",))
    records = []
    for lineno, row in rows:
        try:
            affinity = float(row["affinity"])
        except ValueError as exc:
            raise DataError(f"{path} line {lineno}: bad affinity "
                            f"{row['affinity']!r}") from exc
        if raw_kd:
            try:
                affinity = pkd_transform(affinity)
            except ValueError as exc:
                raise DataError(f"{path} line {lineno}: {exc}") from exc
        fold = None
        if "fold" in row and row["fold"] != "":
            try:
                fold = int(row["fold"])
            except ValueError as exc:
                raise DataError(f"{path} line {lineno}: bad fold id "
                                f"{row['fold']!r}") from exc
        try:
            records.append(AffinityRecord(smiles=row["smiles"], fasta=row["fasta"],
                                          affinity=affinity, fold=fold))
        except DataError as exc:
            raise DataError(f"{path} line {lineno}: {exc}") from exc
    if not records:
        raise DataError(f"{path}: no data rows")
    return records


@dataclass
class FoldSplit:
    """Five train/dev folds plus a disjoint held-out test set."""

    folds: list
    test: list

    def splits(self):
        """(train, dev) pairs, one per fold: dev = fold i, train = the rest."""
        out = []
        for i in range(len(self.folds)):
            train = [r for j, fold in enumerate(self.folds) if j != i for r in fold]
            out.append((train, self.folds[i]))
        return out


def split_folds(records, seed: int = 0, test_fraction: float = 1 / 6) -> FoldSplit:
    """Partition records into 5 folds plus test.

    Explicit fold ids are honored exactly (rows without one become test);
    otherwise a seeded shuffle holds out ceil(n * test_fraction) rows as test
    and deals the remainder into five nearly equal folds.
    """
    records = list(records)
    if len(records) < 10:
        raise DataError(f"too few records to split: {len(records)}")
    if any(r.fold is not None for r in records):
        folds = [[r for r in records if r.fold == i] for i in range(N_FOLDS)]
        test = [r for r in records if r.fold is None]
        return FoldSplit(folds=folds, test=test)
    rng = np.random.default_rng(seed)
    order = rng.permutation(len(records))
    n_test = math.ceil(len(records) * test_fraction)
    test = [records[i] for i in order[:n_test]]
    rest = [records[i] for i in order[n_test:]]
    base, extra = divmod(len(rest), N_FOLDS)
    folds = []
    start = 0
    for i in range(N_FOLDS):
        size = base + (1 if i < extra else 0)
        folds.append(rest[start:start + size])
        start += size
    return FoldSplit(folds=folds, test=test)


# ---------------------------------------------------------------------------
# candidate ranking
# ---------------------------------------------------------------------------

@dataclass
class Candidate:
    compound_id: str
    compound_name: Optional[str]
    smiles: str


@dataclass
class RankedCandidate:
    compound_id: str
    compound_name: Optional[str]
    smiles: str
    score: float
    rank: int


def load_candidates(path):
    rows = _read_table(path, required=("id", "name", "smiles"))
    out = []
    for _, row in rows:
        out.append(Candidate(compound_id=row["id"], compound_name=row["name"] or None,
                             smiles=row["smiles"]))
    if not out:
        raise DataError(f"{path}: no candidates")
    return out


def rank_candidates(candidates, target_fasta: str, model: DtiModel):
    """Score every candidate against one target and sort descending.

    Unencodable molecules become (id, reason) error entries, and the ranking
    proceeds over the rest. Score ties break by compound_id ascending; each
    score is a plain single-pair model prediction.
    """
    enc_prot = encode_protein(target_fasta, model.prot_vocab, model.cfg.codec)
    usable, errors = [], []
    for cand in candidates:
        try:
            enc = encode_molecule(cand.smiles, model.mol_vocab, model.cfg.codec,
                                  model.cfg.keep_rep_when_truncated)
        except DataError as exc:
            errors.append((cand.compound_id, str(exc)))
            continue
        usable.append((cand, enc))
    if not usable:
        return [], errors
    # batch of one keeps each score identical to a direct single-pair call
    scores = model.predict([enc for _, enc in usable],
                           [enc_prot] * len(usable), batch_size=1)
    order = sorted(range(len(usable)),
                   key=lambda i: (-scores[i], usable[i][0].compound_id))
    ranked = []
    for rank, i in enumerate(order, start=1):
        cand = usable[i][0]
        ranked.append(RankedCandidate(compound_id=cand.compound_id,
                                      compound_name=cand.compound_name,
                                      smiles=cand.smiles,
                                      score=float(scores[i]), rank=rank))
    return ranked, errors


def format_ranking(ranked) -> str:
    lines = ["rank\tcompound_id\tcompound_name\tscore"]
    for rc in ranked:
        lines.append(f"{rc.rank}\t{rc.compound_id}\t{rc.compound_name or ''}\t{rc.score!r}")
    return "\n".join(lines) + "\n"


def load_predictions(path):
    """Read an evaluation table with affinity and prediction columns."""
    rows = _read_table(path, required=("affinity", "prediction"))
    y, y_hat = [], []
    for lineno, row in rows:
        try:
            y.append(float(row["affinity"]))
            y_hat.append(float(row["prediction"]))
        except ValueError as exc:
            raise DataError(f"{path} line {lineno}: bad number") from exc
    if not y:
        raise DataError(f"{path}: no prediction rows")
    return np.array(y), np.array(y_hat)
