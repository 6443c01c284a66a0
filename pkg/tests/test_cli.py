import re

import numpy as np
import pytest

from mvcnn import cli
from mvcnn.checkpoint import dumps
from mvcnn.embeddings import load_embedding_file
from mvcnn.network import NetworkConfig, build_model
from mvcnn.text import Vocabulary


@pytest.fixture
def files(tmp_path):
    (tmp_path / "v1.txt").write_text("a 1 0\nb 0 1\n")
    (tmp_path / "v2.txt").write_text("b 1 1\nc 2 0\n")
    (tmp_path / "data.tsv").write_text("0\ta b\n1\tc d\n")
    return tmp_path


def run(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def test_stats_fixture(files, capsys):
    code, out, _ = run(capsys, "stats", "--embeddings", files / "v1.txt", files / "v2.txt",
                       "--data", files / "data.tsv")
    assert code == 0
    numbers = dict(re.findall(r"^(.+?)\s+(\d+)$", out, re.M))
    assert numbers["Full hit"] == "1" and numbers["Partial hit"] == "2" and numbers["No hit"] == "1"
    assert numbers["v1"] == "2" and numbers["v2"] == "2" and numbers["Voc size"] == "4"


def test_missing_path(files, capsys):
    code, _, err = run(capsys, "stats", "--embeddings", files / "nope.txt", "--data", files / "data.tsv")
    assert code == 1
    assert "nope.txt" in err


def test_all_problems_listed(files, capsys):
    code, _, err = run(capsys, "train", "--lr", "-1", "--batch-size", "0")
    assert code == 1
    for needle in ("--train", "--seed", "--checkpoint", "--lr", "--batch-size"):
        assert needle in err


def test_config_file_and_override(files, capsys):
    (files / "run.cfg").write_text("# comment\nlr = 0.5\nkernels=3\n")
    args = cli.build_parser().parse_args(["gradcheck", "--config", str(files / "run.cfg"), "--lr", "0.25"])
    cfg = cli.resolve_config("gradcheck", args)
    assert cfg.lr == 0.25 and cfg.kernels == 3


def test_bad_config_key(files, capsys):
    (files / "run.cfg").write_text("nonsense = 1\n")
    code, _, err = run(capsys, "gradcheck", "--config", files / "run.cfg")
    assert code == 1 and "nonsense" in err


def test_effective_settings_echoed(capsys):
    _, _, err = run(capsys, "gradcheck", "--seed", 3)
    assert "# seed = 3" in err and "# lr = 0.01" in err


def test_gradcheck(capsys):
    code, out, _ = run(capsys, "gradcheck")
    assert code == 0
    assert float(re.search(r"max_rel_error (\S+)", out).group(1)) < 1e-4


def test_help_lists_every_key(capsys):
    with pytest.raises(SystemExit):
        cli.main(["--help"])
    out = capsys.readouterr().out
    for key in cli.KEYS:
        assert re.search(rf"^  {key.name} = ", out, re.M), key.name
    assert "lr = 0.01" in out and "dropout_keep = 0.8" in out and "l2 = 0.005" in out


def test_eval_fixture(files, capsys):
    vocab = Vocabulary.build([["x1", "x2", "x3", "x4"]])
    m = build_model(vocab, NetworkConfig(c=1, d=3, num_layers=1, filter_sizes=(3,),
                                         kernels_per_size=1), np.random.default_rng(0))
    m.out_W.value[...] = 0.0
    m.out_b.value[...] = [1.0, 0.0]
    (files / "m.ckpt").write_bytes(dumps(m))
    (files / "four.tsv").write_text("0\tx1\n0\tx2\n0\tx3\n1\tx4\n")
    code, out, _ = run(capsys, "eval", "--checkpoint", files / "m.ckpt", "--data", files / "four.tsv")
    assert code == 0 and out.strip() == "accuracy 0.75"


def test_mutual_learn(files, capsys):
    out_dir = files / "out"
    code, out, _ = run(capsys, "mutual-learn", "--embeddings", files / "v1.txt", files / "v2.txt",
                       "--output-dir", out_dir)
    assert code == 0
    for name in ("v1", "v2"):
        assert load_embedding_file(out_dir / f"{name}.txt").vocab == {"a", "b", "c"}
    rows = (out_dir / "provenance.tsv").read_text().splitlines()
    assert rows[0].split("\t") == ["word", "v1", "v2"]
    assert "c\timputed\tpretrained" in rows


def test_train_pretrain_eval_pipeline(files, capsys):
    corpus = files / "corpus.txt"
    corpus.write_text("a b c\nb c d e\nc a\n")
    common = ["--seed", 1, "--dim", 4, "--layers", 1, "--filter-sizes", "3", "--kernels", 2]
    code, out, _ = run(capsys, "pretrain", "--corpus", corpus, "--checkpoint", files / "p.ckpt",
                       "--pretrain-epochs", 2, *common)
    assert code == 0 and "sha256" in out
    code, out, _ = run(capsys, "train", "--train", files / "data.tsv", "--checkpoint",
                       files / "t.ckpt", "--init-checkpoint", files / "p.ckpt",
                       "--max-epochs", 2, *common)
    assert code == 0 and "best_epoch" in out
    code, out, _ = run(capsys, "eval", "--checkpoint", files / "t.ckpt", "--data", files / "data.tsv")
    assert code == 0 and out.startswith("accuracy")


def test_runtime_error_exit_code(files, capsys):
    (files / "bad.tsv").write_text("zero\ta b\n")
    code, _, err = run(capsys, "train", "--train", files / "bad.tsv", "--checkpoint",
                       files / "t.ckpt", "--seed", 0)
    assert code == 2 and "bad.tsv" in err
