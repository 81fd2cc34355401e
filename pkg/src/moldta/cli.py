"""Command-line entry point.

Subcommands: pretrain, finetune, evaluate, rank, tokenize. A flat text
config file (dotted keys, `key = value` lines) supplies defaults; explicit
command-line flags win. Exit codes: 0 success, 1 usage, 2 data error,
3 numerical failure.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from .checkpoint import Checkpoint
from .codec import MOLECULE, PROTEIN, CodecConfig, Vocab, build_vocab, tokenize_molecule
from .data import (format_ranking, load_affinity_dataset, load_candidates,
                   load_predictions, rank_candidates, split_folds)
from .errors import DataError, NumericalError
from .interaction import InteractionConfig
from .metrics import evaluate
from .model import MODE_PRESETS, DtiModel, ModelConfig
from .protein_cnn import ProteinCnnConfig
from .training import (TrainRunConfig, encode_affinity_data, finetune, pretrain)
from .transformer import TransformerConfig


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


KNOWN_CONFIG_KEYS = {
    "model.num_layers", "model.num_heads", "model.hidden", "model.intermediate",
    "model.dropout", "model.mol_max_len", "model.prot_max_len", "model.embed_dim",
    "model.filter_lengths", "model.filter_counts", "model.dense_sizes",
    "model.truncation_pooling",
    "train.batch_size", "train.steps", "train.epochs", "train.learning_rate",
    "train.warmup_fraction", "train.checkpoint_interval", "train.log_interval",
    "train.seed",
    "data.heldout_fraction",
}


def load_config(path) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.read().splitlines()
    except OSError as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from exc
    out = {}
    for lineno, line in enumerate(lines, start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if "=" not in stripped:
            raise UsageError(f"{path} line {lineno}: expected key = value")
        key, value = stripped.split("=", 1)
        key = key.strip()
        if key not in KNOWN_CONFIG_KEYS:
            raise UsageError(f"{path} line {lineno}: unknown config key {key!r}")
        out[key] = value.strip()
    return out


def _get(config, key, cast, default):
    raw = config.get(key)
    if raw is None:
        return default
    try:
        return cast(raw)
    except ValueError as exc:
        raise UsageError(f"config key {key}: bad value {raw!r}") from exc


def _int_tuple(raw: str) -> tuple:
    return tuple(int(part) for part in raw.split(","))


def _pick(flag, config, key, cast, default):
    """Command-line flag beats config file beats default."""
    if flag is not None:
        return flag
    return _get(config, key, cast, default)


def _read_lines(path) -> list:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return fh.read().splitlines()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc


def _write_text(path, text: str):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)


def _transformer_config(config, vocab_size: int, mol_max_len: int) -> TransformerConfig:
    return TransformerConfig(
        vocab_size=vocab_size,
        num_layers=_get(config, "model.num_layers", int, 8),
        num_heads=_get(config, "model.num_heads", int, 8),
        hidden=_get(config, "model.hidden", int, 128),
        intermediate=_get(config, "model.intermediate", int, 512),
        dropout=_get(config, "model.dropout", float, 0.1),
        max_len=mol_max_len,
    )


def _run_config(args, config) -> TrainRunConfig:
    return TrainRunConfig(
        seed=_pick(args.seed, config, "train.seed", int, 0),
        batch_size=_get(config, "train.batch_size", int, 32),
        steps=_get(config, "train.steps", int, 1000),
        epochs=_get(config, "train.epochs", int, 10),
        learning_rate=_get(config, "train.learning_rate", float,
                           getattr(args, "default_lr", 1e-4)),
        warmup_fraction=_get(config, "train.warmup_fraction", float, 0.01),
        checkpoint_interval=_get(config, "train.checkpoint_interval", int, 0),
        log_interval=_get(config, "train.log_interval", int, 100),
    )


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_tokenize(args) -> int:
    cfg = CodecConfig(mol_max_len=args.mol_max_len)
    print(" ".join(tokenize_molecule(args.smiles, cfg)))
    return 0


def cmd_pretrain(args) -> int:
    config = load_config(args.config) if args.config else {}
    mol_max_len = _get(config, "model.mol_max_len", int, 100)
    codec_cfg = CodecConfig(mol_max_len=mol_max_len,
                            prot_max_len=_get(config, "model.prot_max_len", int, 1000))
    lines = [line for line in _read_lines(args.corpus) if line]
    if not lines:
        raise DataError(f"{args.corpus}: no molecules")
    vocab = Vocab.load(args.vocab) if args.vocab else build_vocab(lines, MOLECULE)
    if vocab.kind != MOLECULE:
        raise DataError("pretraining requires a molecule vocabulary")
    run = _run_config(args, config)
    heldout_fraction = _get(config, "data.heldout_fraction", float, 0.1)
    rng = np.random.default_rng(run.seed)
    order = rng.permutation(len(lines))
    n_heldout = int(len(lines) * heldout_fraction)
    heldout = [lines[i] for i in order[:n_heldout]]
    train = [lines[i] for i in order[n_heldout:]]
    if not train:
        raise DataError("heldout fraction leaves no training molecules")
    tcfg = _transformer_config(config, len(vocab), mol_max_len)
    pooling = _get(config, "model.truncation_pooling", str, "rep")

    os.makedirs(args.out, exist_ok=True)
    result = pretrain(train, vocab, tcfg, run, codec_cfg=codec_cfg, heldout=heldout,
                      keep_rep_when_truncated=(pooling == "rep"),
                      checkpoint_dir=args.out, log=print)
    ckpt_path = os.path.join(args.out, "pretrain.ckpt")
    result.checkpoint.save(ckpt_path)
    vocab.save(os.path.join(args.out, "mol_vocab.txt"))
    log_lines = [f"step {i + 1} loss = {loss!r}" for i, loss in enumerate(result.losses)]
    log_lines.append(f"payload_baseline = {result.payload_baseline!r}")
    log_lines.append(f"heldout_accuracy = {result.heldout_accuracy!r}")
    _write_text(os.path.join(args.out, "pretrain_log.txt"), "\n".join(log_lines) + "\n")
    print(f"saved checkpoint to {ckpt_path}")
    if result.heldout_accuracy is not None:
        print(f"heldout masked-token accuracy {result.heldout_accuracy:.4f} "
              f"(baseline {result.payload_baseline:.4f})")
    return 0


def _model_config_for(args, config, mode: str, mol_vocab_size: int,
                      prot_vocab_size: int, codec_cfg: CodecConfig) -> ModelConfig:
    preset = MODE_PRESETS[mode]
    transformer = _transformer_config(config, mol_vocab_size, codec_cfg.mol_max_len)
    protein = ProteinCnnConfig(
        vocab_size=prot_vocab_size,
        embed_dim=_get(config, "model.embed_dim", int, 128),
        filter_lengths=_get(config, "model.filter_lengths", _int_tuple,
                            preset["filter_lengths"]),
        filter_counts=_get(config, "model.filter_counts", _int_tuple, (32, 64, 96)),
    )
    interaction = InteractionConfig(
        dense_sizes=_get(config, "model.dense_sizes", _int_tuple, preset["dense_sizes"]),
        dropout=_get(config, "model.dropout", float, 0.1),
    )
    return ModelConfig(codec=codec_cfg, transformer=transformer, protein=protein,
                       interaction=interaction,
                       truncation_pooling=_get(config, "model.truncation_pooling",
                                               str, "rep"))


def cmd_finetune(args) -> int:
    config = load_config(args.config) if args.config else {}
    records = load_affinity_dataset(args.data, mode=args.mode, raw_kd=args.raw_kd)
    split = split_folds(records, seed=_pick(args.seed, config, "train.seed", int, 0))
    if not 0 <= args.fold < len(split.folds):
        raise UsageError(f"--fold must lie in 0..{len(split.folds) - 1}")
    train_records, dev_records = split.splits()[args.fold]
    if not train_records or not dev_records:
        raise DataError("chosen fold leaves an empty train or dev set")

    warm = Checkpoint.load(args.warm_start) if args.warm_start else None
    if warm is not None:
        codec_cfg = CodecConfig(mol_max_len=warm.meta["codec"]["mol_max_len"],
                                prot_max_len=_get(config, "model.prot_max_len", int, 1000))
        mol_vocab = Vocab(kind=MOLECULE, tokens=tuple(warm.meta["mol_vocab"]))
    else:
        codec_cfg = CodecConfig(mol_max_len=_get(config, "model.mol_max_len", int, 100),
                                prot_max_len=_get(config, "model.prot_max_len", int, 1000))
        mol_vocab = build_vocab((r.smiles for r in records), MOLECULE)
    prot_vocab = build_vocab((r.fasta for r in records), PROTEIN)

    model_cfg = _model_config_for(args, config, args.mode, len(mol_vocab),
                                  len(prot_vocab), codec_cfg)
    args.default_lr = MODE_PRESETS[args.mode]["learning_rate"]
    run = _run_config(args, config)
    train_enc = encode_affinity_data(train_records, mol_vocab, prot_vocab, codec_cfg,
                                     model_cfg.keep_rep_when_truncated)
    dev_enc = encode_affinity_data(dev_records, mol_vocab, prot_vocab, codec_cfg,
                                   model_cfg.keep_rep_when_truncated)
    result = finetune(train_enc, dev_enc, model_cfg, run, mol_vocab, prot_vocab,
                      warm_start=warm, log=print)
    os.makedirs(args.out, exist_ok=True)
    ckpt_path = os.path.join(args.out, "model.ckpt")
    result.best_checkpoint.save(ckpt_path)
    _write_text(os.path.join(args.out, "finetune_report.txt"), result.report_text())
    print(f"saved best checkpoint (epoch {result.best_epoch}, "
          f"dev mse {result.best_dev_mse:.6f}) to {ckpt_path}")
    return 0


def cmd_evaluate(args) -> int:
    if bool(args.predictions) == bool(args.checkpoint):
        raise UsageError("evaluate needs exactly one of --predictions or "
                         "--checkpoint with --data")
    if args.predictions:
        y, y_hat = load_predictions(args.predictions)
    else:
        if not args.data:
            raise UsageError("--checkpoint evaluation needs --data")
        model = DtiModel.from_checkpoint(Checkpoint.load(args.checkpoint))
        records = load_affinity_dataset(args.data, mode=args.mode, raw_kd=args.raw_kd)
        encoded = encode_affinity_data(records, model.mol_vocab, model.prot_vocab,
                                       model.cfg.codec,
                                       model.cfg.keep_rep_when_truncated)
        y = np.array([r.affinity for r in encoded])
        y_hat = model.predict([r.mol for r in encoded], [r.prot for r in encoded])
    report = evaluate(y, y_hat, args.mode)
    text = report.to_text()
    print(text, end="")
    if args.out:
        _write_text(args.out, text)
    return 0


def cmd_rank(args) -> int:
    if bool(args.target_fasta) == bool(args.target_file):
        raise UsageError("rank needs exactly one of --target-fasta or --target-file")
    if args.target_file:
        lines = _read_lines(args.target_file)
        fasta = "".join(line.strip() for line in lines if not line.startswith(">"))
    else:
        fasta = args.target_fasta
    if not fasta:
        raise DataError("empty target protein sequence")
    model = DtiModel.from_checkpoint(Checkpoint.load(args.checkpoint))
    candidates = load_candidates(args.candidates)
    ranked, errors = rank_candidates(candidates, fasta, model)
    if errors:
        print(f"warning: {len(errors)} candidate(s) skipped", file=sys.stderr)
        for compound_id, reason in errors:
            print(f"  {compound_id}: {reason}", file=sys.stderr)
    text = format_ranking(ranked)
    print(text, end="")
    if args.out:
        _write_text(args.out, text)
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> _Parser:
    parser = _Parser(prog="moldta",
                     description="drug-target binding affinity model toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="flat key = value config file")
        p.add_argument("--seed", type=int, help="overrides train.seed")
        p.add_argument("--deterministic", action="store_true",
                       help="runs are deterministic given --seed; accepted for "
                            "interface compatibility")

    p = sub.add_parser("tokenize", help="print the token stream for one molecule")
    p.add_argument("smiles")
    p.add_argument("--mol-max-len", type=int, default=100)
    p.set_defaults(fn=cmd_tokenize)

    p = sub.add_parser("pretrain", help="masked-token pretraining on a molecule corpus")
    common(p)
    p.add_argument("--corpus", required=True, help="newline-delimited molecule strings")
    p.add_argument("--vocab", help="reuse an existing vocabulary file")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(fn=cmd_pretrain)

    p = sub.add_parser("finetune", help="train the affinity model on a dataset")
    common(p)
    p.add_argument("--data", required=True, help="tab-separated affinity table")
    p.add_argument("--mode", choices=("kiba", "davis"), default="kiba")
    p.add_argument("--raw-kd", action="store_true",
                   help="davis affinities are raw nanomolar constants")
    p.add_argument("--fold", type=int, default=0, help="which fold is the dev set")
    p.add_argument("--warm-start", help="pretraining checkpoint to initialize from")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(fn=cmd_finetune)

    p = sub.add_parser("evaluate", help="compute metrics for predictions")
    common(p)
    p.add_argument("--predictions", help="table with affinity and prediction columns")
    p.add_argument("--checkpoint", help="model checkpoint to run over --data")
    p.add_argument("--data", help="affinity table to predict and score")
    p.add_argument("--mode", choices=("kiba", "davis"), default="kiba")
    p.add_argument("--raw-kd", action="store_true")
    p.add_argument("--out", help="write the report here as well")
    p.set_defaults(fn=cmd_evaluate)

    p = sub.add_parser("rank", help="rank candidate molecules against one target")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--candidates", required=True,
                   help="tab-separated table with id, name, smiles columns")
    p.add_argument("--target-fasta", help="target protein sequence as a string")
    p.add_argument("--target-file", help="file holding the target protein sequence")
    p.add_argument("--out", help="write the ranking table here as well")
    p.set_defaults(fn=cmd_rank)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.fn(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (DataError, FileNotFoundError, OSError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
