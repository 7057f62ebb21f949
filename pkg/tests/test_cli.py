"""Command-line interface: subcommands, file formats and exit codes."""

from __future__ import annotations

import json

import pytest

from wayside import cli, datagen, fuse
from wayside.cli import main


@pytest.fixture(scope="module")
def batch(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert main(["synth", "-n", "24", "--out", str(d / "passages")]) == 0
    return d


def test_synth_writes_batch(batch):
    recs = datagen.load_batch(batch / "passages")
    assert len(recs) == 24
    header = (batch / "passages" / "passage_0000.csv").read_text().splitlines()[0]
    assert header == "t_seconds,strain,accel"


def test_pipeline_commands(batch):
    d = batch
    assert main(["peaks", "--passages", str(d / "passages"), "--algorithm", "SD",
                 "--out", str(d / "peaks.csv"), "--dataset", str(d / "iwd.csv")]) == 0
    assert (d / "peaks.csv").read_text().startswith("passage,")
    assert len(fuse.load_dataset(d / "iwd.csv")) == 24
    assert main(["clf", "train", "--data", str(d / "iwd.csv"), "--model", str(d / "m.json")]) == 0
    assert main(["clf", "eval", "--data", str(d / "iwd.csv"), "--model", str(d / "m.json"),
                 "--out", str(d / "metrics.json")]) == 0
    assert set(json.loads((d / "metrics.json").read_text())) >= {"accuracy", "auc_roc"}
    assert main(["clf", "tune", "--data", str(d / "iwd.csv"), "--trials", "1", "--folds", "2",
                 "--out", str(d / "search.json")]) == 0


def test_embed_commands(batch, tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"embed": {"epochs": 2}}))
    d = batch
    assert main(["embed", "train", "--config", str(cfg), "--windows", str(d / "passages"),
                 "--model", str(tmp_path / "vae.bin")]) == 0
    assert main(["embed", "apply", "--windows", str(d / "passages"), "--model",
                 str(tmp_path / "vae.bin"), "--out", str(tmp_path / "emb.csv")]) == 0
    lines = (tmp_path / "emb.csv").read_text().splitlines()
    assert len(lines) == 25 and lines[0].split(",")[0] == "mu0"


def test_stats_commands(tmp_path):
    rows = ["strategy,seed,detector,accuracy"]
    for seed in range(6):
        for s, acc in (("A", 0.7), ("B", 0.8), ("C", 0.9)):
            rows.append(f"{s},{seed},SD,{acc + 0.001 * seed}")
    res = tmp_path / "cells.csv"
    res.write_text("\n".join(rows) + "\n")
    assert main(["stats", "friedman", "--results", str(res), "--out", str(tmp_path / "f.csv")]) == 0
    assert "statistic" in (tmp_path / "f.csv").read_text()
    assert main(["stats", "shaffer", "--results", str(res), "--out", str(tmp_path / "s.csv")]) == 0
    assert main(["report", "--results", str(tmp_path)]) == 0
    assert (tmp_path / "report.md").exists()


def test_exit_codes(tmp_path):
    assert main(["bogus"]) == 2
    assert main(["synth", "--config", str(tmp_path / "missing.json")]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"synth": {"n_passages": 3}}))
    assert main(["synth", "--config", str(bad)]) == 2
    # a dataset with one class cannot be trained on: stage failure
    ds = tmp_path / "one.csv"
    ds.write_text("a,b,label,soft_label,domain_id\n1,2,0,,\n3,4,0,,\n")
    assert main(["clf", "train", "--data", str(ds), "--model", str(tmp_path / "m.json")]) == 3


def test_help_exits_zero():
    assert main(["--help"]) == 0
    assert cli.build_parser().prog == "wayside"
