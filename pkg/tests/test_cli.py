import json

import numpy as np
import pytest
from scipy import stats

from autosampling.cli import EXIT_CONFIG, OUTPUT_ROOT_ENV, main, read_config
from autosampling.core import load_schedule, save_distribution, SamplingDistribution
from autosampling.search import read_run_log

TINY = """
[search]
population_size = 2
intervals_per_exploitation = 2
interval_len = 2
batch_size = 4
total_alternations = 2
seed = 3

[trainer]
base_lr = 0.05
lr_schedule = constant

[data]
num_clusters = 3
samples_per_cluster = 10
feature_dim = 4
redundancy_factor = 2
label_noise_fraction = 0.1
"""


@pytest.fixture
def cfg_path(tmp_path):
    p = tmp_path / "tiny.ini"
    p.write_text(TINY)
    return p


def run(*argv):
    return main([str(a) for a in argv])


def test_search_writes_manifest_and_artifacts(cfg_path, tmp_path):
    out = tmp_path / "run"
    assert run("search", cfg_path, "-o", out) == 0
    man = json.loads((out / "manifest.json").read_text())
    assert man["command"] == "search" and man["seed"] == 3 and man["layout_version"] == 1
    for rel in man["artifacts"].values():
        assert (out / rel).exists()
    sched = load_schedule(out / "schedule.bin")
    assert sched.num_samples == 2 * 2 * 2 * 4
    assert len(read_run_log(out / "run_log.jsonl")) == 4
    assert man["config"]["search"]["population_size"] == 2


def test_search_is_byte_reproducible(cfg_path, tmp_path):
    assert run("search", cfg_path, "-o", tmp_path / "a") == 0
    assert run("search", cfg_path, "-o", tmp_path / "b", "--jobs", "2") == 0
    for name in ("schedule.bin", "distribution.bin", "model.bin"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_beta_below_one_rejected(cfg_path, tmp_path, capsys):
    assert run("search", cfg_path, "-o", tmp_path / "x", "--beta", "0.5") == EXIT_CONFIG
    assert "beta" in capsys.readouterr().err


def test_unknown_field_rejected(tmp_path):
    p = tmp_path / "bad.ini"
    p.write_text("[search]\npopulaton_size = 3\n")
    assert run("search", p, "-o", tmp_path / "x") == EXIT_CONFIG


def test_refuses_to_overwrite(cfg_path, tmp_path):
    out = tmp_path / "run"
    assert run("search", cfg_path, "-o", out) == 0
    assert run("search", cfg_path, "-o", out) == EXIT_CONFIG
    assert run("search", cfg_path, "-o", out, "--force") == 0


def test_output_root_env(cfg_path, tmp_path, monkeypatch):
    monkeypatch.setenv(OUTPUT_ROOT_ENV, str(tmp_path / "root"))
    assert run("baseline", cfg_path, "-o", "base") == 0
    assert (tmp_path / "root" / "base" / "manifest.json").exists()


def test_overrides_mirror_config(cfg_path):
    cfg, data = read_config(cfg_path, {"population_size": 5})
    assert cfg.population_size == 5 and data["num_clusters"] == "3"


def test_replay_reproduces_search_metric(cfg_path, tmp_path):
    assert run("search", cfg_path, "-o", tmp_path / "run") == 0
    assert run("replay", "--manifest", tmp_path / "run", "-o", tmp_path / "rep") == 0
    a = json.loads((tmp_path / "run" / "manifest.json").read_text())["metrics"]["final_eval"]
    b = json.loads((tmp_path / "rep" / "manifest.json").read_text())["metrics"]["final_eval"]
    assert a == b
    assert (tmp_path / "run" / "model.bin").read_bytes() == (tmp_path / "rep" / "model.bin").read_bytes()


def test_replay_transfer_to_mlp(cfg_path, tmp_path):
    assert run("search", cfg_path, "-o", tmp_path / "run") == 0
    assert run("replay", "--config", cfg_path, "--schedule", tmp_path / "run" / "schedule.bin",
               "--hidden-dim", "6", "-o", tmp_path / "rep") == 0
    man = json.loads((tmp_path / "rep" / "manifest.json").read_text())
    assert man["config"]["trainer"]["hidden_dim"] == 6


def test_replay_needs_inputs(tmp_path):
    assert run("replay", "-o", tmp_path / "rep") == EXIT_CONFIG


def test_analyze_conserves_totals(cfg_path, tmp_path):
    assert run("search", cfg_path, "-o", tmp_path / "run") == 0
    assert run("analyze", tmp_path / "run", "-o", tmp_path / "ana", "--segments", "6") == 0
    man = json.loads((tmp_path / "ana" / "manifest.json").read_text())
    hist = np.loadtxt(tmp_path / "ana" / man["artifacts"]["histogram"], delimiter=",", skiprows=1)
    assert hist[:, 2].sum() == load_schedule(tmp_path / "run" / "schedule.bin").num_samples
    cond = (tmp_path / "ana" / man["artifacts"]["conditions"]).read_text().splitlines()
    assert [r.split(",")[0] for r in cond[1:]] == ["UNIFORM", "STATIC", "DYNAMIC"]


def test_static_uniform_matches_baseline_in_distribution(tmp_path):
    p = tmp_path / "c.ini"
    p.write_text(TINY.replace("total_alternations = 2", "total_alternations = 200"))
    save_distribution(SamplingDistribution.uniform(60), tmp_path / "u.bin")
    assert run("static", p, "--distribution", tmp_path / "u.bin", "-o", tmp_path / "st") == 0
    assert run("baseline", p, "-o", tmp_path / "bl") == 0
    a = np.bincount(load_schedule(tmp_path / "st" / "schedule.bin").flat(), minlength=60)
    b = np.bincount(load_schedule(tmp_path / "bl" / "schedule.bin").flat(), minlength=60)
    assert a.sum() == b.sum()
    assert stats.chi2_contingency(np.vstack([a, b])).pvalue > 0.001


def test_static_rejects_size_mismatch(cfg_path, tmp_path):
    save_distribution(SamplingDistribution.uniform(7), tmp_path / "u.bin")
    assert run("static", cfg_path, "--distribution", tmp_path / "u.bin", "-o", tmp_path / "st") == EXIT_CONFIG


def test_compare_command(cfg_path, tmp_path, capsys):
    assert run("compare", cfg_path, "--seeds", "1,2", "-o", tmp_path / "cmp") == 0
    man = json.loads((tmp_path / "cmp" / "manifest.json").read_text())
    assert set(man["metrics"]) == {"UNIFORM", "STATIC", "DYNAMIC"} and man["seeds"] == [1, 2]
    assert "DYNAMIC" in capsys.readouterr().out


def test_csv_dataset(cfg_path, tmp_path, small_dataset):
    from autosampling.core import save_dataset_csv
    save_dataset_csv(small_dataset, tmp_path / "d.csv")
    p = tmp_path / "csv.ini"
    p.write_text(TINY.split("[data]")[0] + "[data]\ncsv = d.csv\n")
    assert run("search", p, "-o", tmp_path / "run") == 0
    assert load_schedule(tmp_path / "run" / "schedule.bin").dataset_size == small_dataset.num_samples


def test_runtime_failure_exit_code(cfg_path, tmp_path):
    assert run("search", cfg_path, "-o", tmp_path / "r", "--batch-size", "100000") == 2


def test_shipped_config_parses():
    from pathlib import Path
    cfg, data = read_config(Path(__file__).parents[1] / "configs" / "desk.ini")
    assert cfg.population_size == 8 and cfg.interval_len == 10


def test_manifest_records_absolute_csv_path(tmp_path, small_dataset):
    from autosampling.core import save_dataset_csv
    save_dataset_csv(small_dataset, tmp_path / "d.csv")
    p = tmp_path / "csv.ini"
    p.write_text(TINY.split("[data]")[0] + "[data]\ncsv = d.csv\n")
    assert run("search", p, "-o", tmp_path / "run") == 0
    man = json.loads((tmp_path / "run" / "manifest.json").read_text())
    assert man["config"]["data"]["csv"] == str((tmp_path / "d.csv").resolve())
    assert run("replay", "--manifest", tmp_path / "run" / "manifest.json", "-o", tmp_path / "rep") == 0
