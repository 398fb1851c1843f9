import argparse
import glob
import json
import os

import pandas as pd
import pytest

import cli
import gen_data
import scan
import test
import train
from utils.datasets import SequenceBatch
from utils.parse_config import ArgumentParser, add_common_args, load_run_config, parse_run_config
from utils.utils import ConfigError, run_command

SMALL = ["--task", "adding", "--T", "10", "--hidden", "6", "--n_train", "40", "--n_valid", "10", "--n_test", "10"]


def run_dirs(out, pattern):
    return sorted(glob.glob(os.path.join(str(out), pattern)))


def options(argv):
    return add_common_args(ArgumentParser()).parse_args(argv)


def test_gen_writes_three_identical_splits(tmp_path):
    for name in ("a", "b"):
        assert run_command(gen_data.main, SMALL + ["--out", str(tmp_path / name)]) == 0
    for split, size in (("train", 40), ("valid", 10), ("test", 10)):
        first = tmp_path / "a" / f"adding_T10_{split}.seq"
        assert first.read_bytes() == (tmp_path / "b" / first.name).read_bytes()
        assert len(SequenceBatch.load(first)) == size


def test_gen_rejects_short_temporal_order(tmp_path, capsys):
    assert run_command(gen_data.main, ["--task", "temporal_order", "--T", "5", "--out", str(tmp_path)]) == 2
    assert "window" in capsys.readouterr().err


def test_usage_errors_exit_with_one():
    with pytest.raises(SystemExit) as e:
        run_command(gen_data.main, ["--no_such_flag"])
    assert e.value.code == 1
    assert cli.main(["unknown"]) == 1
    assert cli.main([]) == 1


def test_train_smoke_run_and_eval(tmp_path):
    out = tmp_path / "runs"
    argv = SMALL + ["--epochs", "0", "--reg", "both", "--seeds", "0,1", "--out", str(out), "--quiet"]
    assert cli.main(["train"] + argv) == 0
    sweep = run_dirs(out, "*_train_adding_T10_seed0")
    assert len(sweep) == 1
    with open(os.path.join(sweep[0], "summary.json")) as f:
        summary = json.load(f)
    assert [(r["reg"], r["seed"]) for r in summary["runs"]] == [("off", 0), ("off", 1), ("on", 0), ("on", 1)]
    assert len(pd.read_csv(os.path.join(sweep[0], "summary.csv"))) == 4

    on_init = os.path.join(sweep[0], "reg-on_seed0", "init_model.json")
    off_init = os.path.join(sweep[0], "reg-off_seed0", "init_model.json")
    with open(on_init, "rb") as a, open(off_init, "rb") as b:
        assert a.read() == b.read()

    data = tmp_path / "data"
    assert gen_data.main(SMALL + ["--seed", "4", "--out", str(data)]) == 0
    model = os.path.join(sweep[0], "reg-on_seed0", "model.json")
    argv = ["--model", model, "--data", str(data / "adding_T10_test.seq"), "--out", str(tmp_path / "eval")]
    assert cli.main(["eval"] + argv) == 0
    with open(tmp_path / "eval" / "eval_summary.json") as f:
        evaluation = json.load(f)
    assert 0.0 <= evaluation["accuracy"] <= 1.0 and evaluation["n"] == 10


def test_eval_rejects_mismatched_dataset(tmp_path):
    assert train.main(SMALL + ["--epochs", "0", "--out", str(tmp_path), "--quiet"]) == 0
    model = glob.glob(os.path.join(str(tmp_path), "*", "reg-on_seed0", "model.json"))[0]
    gen_args = ["--task", "temporal_order", "--T", "10", "--n_train", "4", "--n_valid", "4", "--n_test", "4"]
    assert gen_data.main(gen_args + ["--out", str(tmp_path / "data")]) == 0
    data = str(tmp_path / "data" / "temporal_order_T10_test.seq")
    assert run_command(test.main, ["--model", model, "--data", data]) == 2


def test_missing_model_file_is_an_input_error(tmp_path):
    assert run_command(test.main, ["--model", str(tmp_path / "none.json"), "--data", str(tmp_path / "none.seq")]) == 2


def test_numerical_blowup_exits_with_three(tmp_path):
    argv = SMALL + ["--epochs", "1", "--iters", "5", "--alpha", "1e300", "--reg", "off", "--out", str(tmp_path), "--quiet"]
    assert run_command(train.main, argv) == 3


def test_scan_writes_one_profile_per_sigma(tmp_path):
    argv = ["--task", "adding", "--T", "10", "--h", "1", "--probes", "5", "--sigmas", "0.005,0.01,0.02"]
    for name in ("a", "b"):
        assert cli.main(["scan"] + argv + ["--out", str(tmp_path / name)]) == 0
    first = run_dirs(tmp_path / "a", "*_scan_adding_T10_seed0")[0]
    second = run_dirs(tmp_path / "b", "*_scan_adding_T10_seed0")[0]
    names = sorted(os.listdir(first))
    assert names == [scan.profile_name(s) for s in (0.005, 0.01, 0.02)]
    for name in names:
        assert len(pd.read_csv(os.path.join(first, name))) == 2
        with open(os.path.join(first, name), "rb") as a, open(os.path.join(second, name), "rb") as b:
            assert a.read() == b.read()


def test_config_file_and_flag_precedence(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("# comment\n[task]\nkind=multiplication\nT=20\n\n[train]\nmu=0.5  # lower momentum\n[run]\nseeds=1,2\n")
    assert parse_run_config(str(path))["train"]["mu"] == "0.5"
    config = load_run_config(options(["--config", str(path), "--T", "30"]))
    assert config.task.kind == "multiplication"
    assert config.task.T == 30
    assert config.train.mu == 0.5
    assert config.train.alpha == 3e-4
    assert config.seeds == [1, 2]


def test_config_errors_name_the_field(tmp_path):
    path = tmp_path / "bad.cfg"
    path.write_text("[train]\nmomentum=0.5\n")
    with pytest.raises(ConfigError, match="train.momentum"):
        load_run_config(options(["--config", str(path)]))
    with pytest.raises(ConfigError, match="train.mu"):
        load_run_config(options(["--mu", "1.5"]))
    with pytest.raises(ConfigError, match="train.alpha"):
        path.write_text("[train]\nalpha=fast\n")
        load_run_config(options(["--config", str(path)]))


def test_shipped_configs_are_valid():
    for path in glob.glob(os.path.join(os.path.dirname(__file__), os.pardir, "config", "*.cfg")):
        load_run_config(argparse.Namespace(config=path))


def test_init_scale_setting(tmp_path):
    assert load_run_config(options([])).train.init_scale == "spectral"
    path = tmp_path / "run.cfg"
    path.write_text("[net]\ninit_scale=std\n")
    assert load_run_config(options(["--config", str(path)])).train.init_scale == "std"
    assert load_run_config(options(["--config", str(path), "--init_scale", "spectral"])).train.init_scale == "spectral"
    path.write_text("[net]\ninit_scale=variance\n")
    with pytest.raises(ConfigError, match="net.init_scale"):
        load_run_config(options(["--config", str(path)]))
    for name in glob.glob(os.path.join(os.path.dirname(__file__), os.pardir, "config", "*.cfg")):
        assert load_run_config(argparse.Namespace(config=name)).train.init_scale == "spectral"
