import math
import os
import pathlib

import pytest

import davlab

ROOT = pathlib.Path(__file__).resolve().parents[2]
TABULAR = ROOT / "configs" / "tabular_dav.json"
TINY = ROOT / "configs" / "tiny_discrete.json"


def test_config_defaults_and_hash():
    cfg = davlab.load_config(TABULAR)
    assert cfg["alpha"] == 0.5
    assert cfg["particles"] == 10
    assert davlab.config_hash(cfg) == davlab.config_hash(TABULAR)
    cfg["seed"] = 3
    assert davlab.config_hash(cfg) != davlab.config_hash(TABULAR)


def test_bad_config_raises():
    with pytest.raises(davlab.ConfigError):
        davlab.load_config({"world": "discrete", "bogus": 1})
    with pytest.raises(davlab.Error):
        davlab.load_config({"world": "continuous", "eval": {"elbo": "exact"}})


def test_align_matches_cli_csv_and_resumes(tmp_path):
    a = davlab.align(TABULAR, out_dir=tmp_path / "a")
    assert a["csv"].splitlines()[0] == davlab.CSV_HEADER
    assert len(a["records"]) == 51
    assert a["records"][-1]["elbo"] > a["records"][0]["elbo"]
    assert (tmp_path / "a" / "metrics.csv").read_text() == a["csv"]
    davlab.align(TABULAR, out_dir=tmp_path / "b", stop_after=20)
    c = davlab.align(TABULAR, resume=tmp_path / "b" / "checkpoint_epoch_20.dlck")
    assert c["csv"] == a["csv"]
    assert c["theta"] == a["theta"]
    with pytest.raises(davlab.CheckpointError):
        cfg = davlab.load_config(TABULAR)
        cfg["seed"] = 9
        davlab.align(cfg, resume=tmp_path / "b" / "checkpoint_epoch_20.dlck")


def test_evaluate_and_ablate(tmp_path):
    davlab.align(TABULAR, out_dir=tmp_path)
    e = davlab.evaluate(tmp_path / "checkpoint_final.dlck", n=32, seed=1)
    assert e["samples"] == 32
    assert len(e["amortized_samples"]) == 32
    assert all(set(s) <= set("AB") for s in e["posterior_samples"])
    one = davlab.evaluate(tmp_path / "checkpoint_final.dlck", n=1)
    assert math.isnan(one["diversity"])
    rw = davlab.ablate("reweight", TABULAR)
    assert len(rw["records"]) == 51


def test_oracle():
    checks = davlab.oracle(TINY, repeats=2000)
    assert all(ok for _, ok, _ in checks)
    bad = davlab.oracle(TINY, corrupt=True, repeats=2000)
    assert not all(ok for _, ok, _ in bad)
