"""Command-line surface: subcommands, config handling, exit codes, artifacts."""

import numpy as np
import pytest

from moldta.checkpoint import Checkpoint
from moldta.cli import load_config, main

PROTS = ["MKTAYIAKQRQISFVKSHFSRQLEERLG", "MTEYKLVVVGAGGVGKSALTIQLIQNHF"]
SMIS = ["CCO", "CN=C=O", "CCCNC", "CC(C)O", "NCCN", "OC=O",
        "CCN", "CO", "C(=O)O", "CNC", "OCCO", "NC=O"]

TINY_CONFIG = """\
# tiny model for fast end-to-end runs
model.num_layers = 1
model.num_heads = 2
model.hidden = 8
model.intermediate = 12
model.mol_max_len = 16
model.prot_max_len = 40
model.embed_dim = 6
model.filter_lengths = 3,3
model.filter_counts = 4,5
model.dense_sizes = 7
train.batch_size = 4
train.steps = 15
train.epochs = 3
train.learning_rate = 0.002
train.log_interval = 10
"""


@pytest.fixture
def workspace(tmp_path):
    (tmp_path / "config.txt").write_text(TINY_CONFIG)
    (tmp_path / "corpus.txt").write_text("\n".join(SMIS) + "\n")
    rows = ["smiles\tfasta\taffinity"]
    for i, s in enumerate(SMIS):
        rows.append(f"{s}\t{PROTS[i % 2]}\t{4.0 + 0.3 * i}")
    (tmp_path / "data.tsv").write_text("\n".join(rows) + "\n")
    (tmp_path / "candidates.tsv").write_text(
        "id\tname\tsmiles\n3\tGamma\tCCO\n1\tAlpha\tCNC\n2\tBeta\tOCCO\n")
    return tmp_path


def test_tokenize_prints_nine_token_stream(capsys):
    assert main(["tokenize", "CN=C=O"]) == 0
    out = capsys.readouterr().out.strip()
    assert out == "[REP] [BEGIN] C N = C = O [END]"


def test_unknown_subcommand_exits_one(capsys):
    assert main(["frobnicate"]) == 1
    assert "usage error" in capsys.readouterr().err


def test_missing_file_exits_two(tmp_path, capsys):
    assert main(["pretrain", "--corpus", str(tmp_path / "nope.txt"),
                 "--out", str(tmp_path / "out")]) == 2
    assert "data error" in capsys.readouterr().err


def test_bad_config_key_exits_one(tmp_path, capsys):
    cfg = tmp_path / "bad.txt"
    cfg.write_text("model.num_voodoo = 3\n")
    assert main(["pretrain", "--corpus", str(cfg), "--out", str(tmp_path / "o"),
                 "--config", str(cfg)]) == 1
    assert "unknown config key" in capsys.readouterr().err


def test_load_config_parses_and_validates(tmp_path):
    cfg = tmp_path / "c.txt"
    cfg.write_text("# comment\n\nmodel.hidden = 32\ntrain.seed = 5\n")
    parsed = load_config(cfg)
    assert parsed == {"model.hidden": "32", "train.seed": "5"}
    cfg.write_text("model.hidden 32\n")
    from moldta.cli import UsageError
    with pytest.raises(UsageError, match="key = value"):
        load_config(cfg)


def test_pretrain_writes_artifacts(workspace, capsys):
    out = workspace / "pre"
    code = main(["pretrain", "--corpus", str(workspace / "corpus.txt"),
                 "--out", str(out), "--config", str(workspace / "config.txt"),
                 "--seed", "3"])
    assert code == 0
    assert (out / "pretrain.ckpt").exists()
    assert (out / "mol_vocab.txt").exists()
    log = (out / "pretrain_log.txt").read_text()
    assert "step 15 loss = " in log
    assert "heldout_accuracy = " in log
    ckpt = Checkpoint.load(out / "pretrain.ckpt")
    assert ckpt.meta["kind"] == "pretrain"
    assert ckpt.meta["transformer"]["hidden"] == 8


def test_finetune_then_evaluate_and_rank(workspace, capsys):
    pre_out = workspace / "pre"
    assert main(["pretrain", "--corpus", str(workspace / "corpus.txt"),
                 "--out", str(pre_out), "--config", str(workspace / "config.txt"),
                 "--seed", "3"]) == 0
    fit_out = workspace / "fit"
    code = main(["finetune", "--data", str(workspace / "data.tsv"),
                 "--mode", "kiba", "--out", str(fit_out),
                 "--config", str(workspace / "config.txt"), "--seed", "1",
                 "--warm-start", str(pre_out / "pretrain.ckpt")])
    assert code == 0
    assert (fit_out / "model.ckpt").exists()
    report = (fit_out / "finetune_report.txt").read_text()
    assert "best_epoch" in report and "dev_mse" in report

    # checkpoint + dataset evaluation path
    report_path = workspace / "report.txt"
    code = main(["evaluate", "--checkpoint", str(fit_out / "model.ckpt"),
                 "--data", str(workspace / "data.tsv"), "--mode", "kiba",
                 "--out", str(report_path)])
    assert code == 0
    text = report_path.read_text()
    assert "mse = " in text and "n = 12" in text

    # ranking against one target
    rank_path = workspace / "ranking.tsv"
    code = main(["rank", "--checkpoint", str(fit_out / "model.ckpt"),
                 "--candidates", str(workspace / "candidates.tsv"),
                 "--target-fasta", PROTS[0], "--out", str(rank_path)])
    assert code == 0
    lines = rank_path.read_text().splitlines()
    assert lines[0] == "rank\tcompound_id\tcompound_name\tscore"
    assert len(lines) == 4
    scores = [float(line.split("\t")[3]) for line in lines[1:]]
    assert scores == sorted(scores, reverse=True)
    assert [line.split("\t")[0] for line in lines[1:]] == ["1", "2", "3"]


def test_evaluate_predictions_file_perfect(workspace, capsys):
    preds = workspace / "preds.tsv"
    rows = ["affinity\tprediction"] + [f"{4 + 0.5 * i}\t{4 + 0.5 * i}" for i in range(20)]
    preds.write_text("\n".join(rows) + "\n")
    assert main(["evaluate", "--predictions", str(preds), "--mode", "kiba"]) == 0
    out = capsys.readouterr().out
    assert "mse = 0.0" in out
    assert "ci = 1.0" in out


def test_evaluate_requires_exactly_one_source(workspace, capsys):
    assert main(["evaluate", "--mode", "kiba"]) == 1
    assert main(["evaluate", "--predictions", "x", "--checkpoint", "y"]) == 1


def test_rank_target_file_fasta_format(workspace, capsys):
    pre_out = workspace / "pre2"
    assert main(["pretrain", "--corpus", str(workspace / "corpus.txt"),
                 "--out", str(pre_out), "--config", str(workspace / "config.txt")]) == 0
    fit_out = workspace / "fit2"
    assert main(["finetune", "--data", str(workspace / "data.tsv"),
                 "--out", str(fit_out), "--config", str(workspace / "config.txt")]) == 0
    target = workspace / "target.fasta"
    target.write_text(f">sp|TEST|EXAMPLE\n{PROTS[0][:14]}\n{PROTS[0][14:]}\n")
    capsys.readouterr()  # drop the training logs
    code = main(["rank", "--checkpoint", str(fit_out / "model.ckpt"),
                 "--candidates", str(workspace / "candidates.tsv"),
                 "--target-file", str(target)])
    assert code == 0
    out = capsys.readouterr().out
    assert out.startswith("rank\t")


def test_numerical_blowup_exits_three(workspace, capsys):
    cfg = workspace / "blowup.txt"
    cfg.write_text(TINY_CONFIG + "train.learning_rate = 1e150\n")
    with np.errstate(over="ignore", invalid="ignore"):
        code = main(["pretrain", "--corpus", str(workspace / "corpus.txt"),
                     "--out", str(workspace / "boom"), "--config", str(cfg)])
    assert code == 3
    assert "numerical failure" in capsys.readouterr().err


def test_cli_runs_are_deterministic(workspace):
    args_a = ["pretrain", "--corpus", str(workspace / "corpus.txt"),
              "--out", str(workspace / "da"), "--config", str(workspace / "config.txt"),
              "--seed", "7", "--deterministic"]
    args_b = ["pretrain", "--corpus", str(workspace / "corpus.txt"),
              "--out", str(workspace / "db"), "--config", str(workspace / "config.txt"),
              "--seed", "7", "--deterministic"]
    assert main(args_a) == 0
    assert main(args_b) == 0
    a = (workspace / "da" / "pretrain.ckpt").read_bytes()
    b = (workspace / "db" / "pretrain.ckpt").read_bytes()
    assert a == b
    assert (workspace / "da" / "pretrain_log.txt").read_text() == \
        (workspace / "db" / "pretrain_log.txt").read_text()
