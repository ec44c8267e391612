import json

import numpy as np
import pytest

from markedflow import checkpoint
from markedflow.cli import _splits, blob_hash, c_histogram, main
from markedflow.config import parse_config
from markedflow.event_data import load_dataset

SMALL = """\
hawkes.num_sequences = 30
train.epochs = 2
train.K = 10
train.optimizer = adam
train.lr = 1e-3
train.batch_size = 8
model.dim = 8
eval.num_samples = 4
sample.count = 3
"""


def write_cfg(tmp, extra=""):
    out = tmp / "out"
    text = SMALL + f"data.path = {out / 'events.jsonl'}\noutput_dir = {out}\n" + extra
    path = tmp / "run.cfg"
    path.write_text(text)
    return path, out


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("cli")
    cfg, out = write_cfg(tmp)
    assert main(["simulate", "--config", str(cfg)]) == 0
    assert main(["train", "--config", str(cfg)]) == 0
    return cfg, out


def test_print_schema(capsys):
    assert main(["--print-schema"]) == 0
    assert "train.epochs" in capsys.readouterr().out


def test_no_command():
    assert main([]) == 2


def test_blob_hash_matches_git():
    # `printf 'hello\n' | git hash-object --stdin`
    assert blob_hash(b"hello\n") == "ce013625030ba8dba906f756967f9e9ca394464a"


def test_simulate_poisson_round_trip(tmp_path):
    cfg, out = write_cfg(
        tmp_path, "data.num_marks = 1\nhawkes.base_rates = 1.5\nhawkes.excitation = 0\nhawkes.coupling_scales = 1\n"
    )
    assert main(["simulate", "--config", str(cfg)]) == 0
    data = load_dataset(out / "events.jsonl", 1)
    assert len(data) == 30
    manifest = json.loads((out / "run-manifest-simulate.json").read_text())
    assert manifest["config_sha256"] == parse_config(cfg).digest()
    assert manifest["inputs"][str(cfg)] == blob_hash(cfg.read_bytes())


def test_train_outputs(trained):
    cfg, out = trained
    lines = (out / "loss.tsv").read_text().splitlines()
    assert lines[0].split("\t") == ["epoch", "mean_loss", "vlb", "wall_time"]
    assert len(lines) == 3
    ck = checkpoint.load(out / "model.ckpt")
    assert ck.config["train.epochs"] == 2
    manifest = json.loads((out / "run-manifest-train.json").read_text())
    assert manifest["seed"] == 0
    assert str(out / "events.jsonl") in manifest["inputs"]


def test_vlb_log_and_periodic_checkpoint(tmp_path, monkeypatch):
    cfg, out = write_cfg(tmp_path, "train.log_vlb = true\ntrain.checkpoint_every = 1\n")
    assert main(["simulate", "--config", str(cfg)]) == 0
    saved = []
    real_save = checkpoint.save
    monkeypatch.setattr(checkpoint, "save", lambda path, ck: saved.append(ck.extra["epoch"]) or real_save(path, ck))
    assert main(["train", "--config", str(cfg)]) == 0
    assert saved == [1, 2]
    rows = [l.split("\t") for l in (out / "loss.tsv").read_text().splitlines()[1:]]
    assert len(rows) == 2 and all(np.isfinite(float(r[2])) for r in rows)
    assert checkpoint.load(out / "model.ckpt").extra == {"epoch": 2}


def test_train_is_pure(trained):
    cfg, out = trained
    before = (out / "model.ckpt").read_bytes()
    assert main(["train", "--config", str(cfg)]) == 0
    assert (out / "model.ckpt").read_bytes() == before


def test_evaluate_reproducible(trained, capsys):
    cfg, out = trained
    assert main(["evaluate", "--config", str(cfg)]) == 0
    first = (out / "eval.json").read_bytes()
    assert main(["evaluate", "--config", str(cfg)]) == 0
    assert (out / "eval.json").read_bytes() == first
    printed = capsys.readouterr().out.splitlines()
    report = json.loads(printed[0])["eval"]
    assert set(report) >= {"mape", "crps", "acc", "vlb", "seed"}


def test_evaluate_seeds(trained, capsys):
    cfg, out = trained
    assert main(["evaluate", "--config", str(cfg), "--seeds", "0,1,2"]) == 0
    saved = json.loads((out / "eval.json").read_text())
    assert saved["seeds"] == [0, 1, 2]
    assert len(saved["reports"]) == 3
    assert saved["summary"]["acc"]["sd"] >= 0
    assert "metric" in capsys.readouterr().out


def test_sample_records(trained):
    cfg, out = trained
    assert main(["sample", "--config", str(cfg)]) == 0
    recs = [json.loads(l) for l in (out / "samples.jsonl").read_text().splitlines()]
    _, _, test_set, _ = _splits(parse_config(cfg))
    assert len(recs) == test_set.num_events
    assert all(len(r["draws"]) == 3 and r["tau_point"] > 0 for r in recs)
    assert all(abs(sum(r["p_mark"]) - 1) < 1e-9 for r in recs)
    assert [r["true_mark"] for r in recs] == [int(m) for s in test_set.sequences for m in s.marks]


def test_inspect_c_zero_in_central_bin(tmp_path):
    cfg, out = write_cfg(tmp_path)
    assert main(["simulate", "--config", str(cfg)]) == 0
    assert main(["train", "--config", str(cfg), "--joint-noise", "off"]) == 0
    assert main(["inspect-c", "--config", str(cfg), "--bins", "5"]) == 0
    rows = [l.split("\t") for l in (out / "c_histogram.tsv").read_text().splitlines()[1:]]
    counts = [int(r[2]) for r in rows]
    assert counts == [0, 0, 2, 0, 0]
    lo, hi = float(rows[2][0]), float(rows[2][1])
    assert lo < 0 < hi


def test_histogram_range():
    counts, edges = c_histogram(np.array([0.0, 0.0, 0.0, 1.9]), 11)
    assert edges[0] == -2.0 and edges[-1] == 2.0
    assert counts[5] == 3 and counts[-1] == 1


def test_overrides_reach_manifest(trained, tmp_path):
    cfg, out = trained
    other = tmp_path / "o"
    assert main(["train", "--config", str(cfg), "--out", str(other), "--seed", "5", "--steps", "4"]) == 0
    ck = checkpoint.load(other / "model.ckpt")
    assert ck.config["seed"] == 5 and ck.config["train.K"] == 4
    assert json.loads((other / "run-manifest-train.json").read_text())["seed"] == 5


def test_errors_exit_nonzero(tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("epoks = 3\n")
    assert main(["train", "--config", str(bad)]) == 1
    assert "did you mean" in capsys.readouterr().err
    assert main(["evaluate", "--config", str(tmp_path / "missing.cfg")]) == 1
    cfg, out = write_cfg(tmp_path)
    assert main(["train", "--config", str(cfg)]) == 1
    assert "error:" in capsys.readouterr().err
