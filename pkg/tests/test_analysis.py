from dataclasses import replace

import numpy as np
import pytest
from scipy import stats

from autosampling.analysis import (
    artifact_name,
    compare_conditions,
    exploration_ablation,
    frequency_loss_table,
    make_static_schedule,
    pearson,
    rank_ordering,
    replay_run,
    segment_histogram,
    stage_histograms,
    static_distribution,
    transfer_run,
)
from autosampling.core import PROVENANCE_STATIC, RngStream, SamplingDistribution, SamplingSchedule
from autosampling.sampling import draw_uniform_epoch_schedule
from autosampling.search import run_autosampling


def test_histogram_uniform_epoch():
    s = draw_uniform_epoch_schedule(100, 10, 10, RngStream(0))
    h = segment_histogram(s, 100, 10)
    assert h.counts.tolist() == [10] * 10 and h.total == 100


def test_histogram_point_mass():
    s = SamplingSchedule(np.zeros((5, 4), int), np.zeros(5), 100)
    assert segment_histogram(s, 100, 10).counts.tolist() == [20] + [0] * 9


def test_histogram_500_segments_of_50k():
    s = draw_uniform_epoch_schedule(50_000, 390, 128, RngStream(1))
    h = segment_histogram(s, 50_000, 500)
    assert h.counts.shape == (500,) and h.total == 390 * 128


def test_histogram_requires_divisor():
    with pytest.raises(ValueError):
        segment_histogram(SamplingSchedule.empty(10), 10, 3)


def test_histogram_reordering_and_export(tmp_path):
    s = SamplingSchedule.from_flat([5, 5, 5, 0, 9, 9], 1, 10)
    h = segment_histogram(s, 10, 5)
    order = rank_ordering(h)
    assert order.tolist()[:2] == [2, 4]
    h2 = h.reordered(order)
    assert np.array_equal(h2.counts, h.counts)
    h2.to_csv(tmp_path / "h.csv")
    rows = (tmp_path / "h.csv").read_text().splitlines()
    assert rows[0] == "rank,segment,count" and rows[1] == "0,2,3"
    with pytest.raises(ValueError):
        h.reordered([0, 0, 1, 2, 3])


def test_stage_histograms_share_reference_order():
    ids = np.array([[0, 1], [2, 3], [8, 8], [9, 9]])
    s = SamplingSchedule(ids, [0, 0, 1, 1], 10)
    hs = stage_histograms(s, 5)
    assert set(hs) == {0, 1}
    assert np.array_equal(hs[0].ordering, hs[1].ordering)
    assert hs[1].ordering[0] == 4
    assert sum(h.total for h in hs.values()) == s.num_samples


def test_freq_loss_constant_frequency_undefined():
    s = SamplingSchedule.from_flat(np.arange(10), 2, 10)
    t = frequency_loss_table(s, np.random.default_rng(0).random(10))
    assert t.correlation is None


def test_freq_loss_identity_correlation():
    flat = np.repeat(np.arange(6), [1, 2, 3, 4, 5, 6])
    s = SamplingSchedule.from_flat(flat, 1, 6)
    t = frequency_loss_table(s, np.arange(1, 7, dtype=float))
    assert t.correlation == pytest.approx(1.0)
    assert t.frequencies.sum() == s.num_samples


def test_freq_loss_independent_inputs_weakly_correlated():
    rng = np.random.default_rng(7)
    hits = 0
    for _ in range(100):
        flat = rng.integers(0, 500, size=5000)
        s = SamplingSchedule.from_flat(flat, 1, 500)
        r = frequency_loss_table(s, rng.random(500)).correlation
        hits += abs(r) < 0.2
    # |r| < 0.2 holds with probability ~ 1 - 1e-5 per trial at n=500
    assert hits == 100


def test_freq_loss_subset_and_validation(tmp_path):
    s = SamplingSchedule.from_flat(np.arange(20) % 7, 2, 10)
    t = frequency_loss_table(s, np.arange(10.0), ids=[1, 3, 5])
    assert t.ids.tolist() == [1, 3, 5] and t.frequencies.tolist() == [3, 3, 3]
    t.to_csv(tmp_path / "f.csv")
    assert (tmp_path / "f.csv").read_text().splitlines()[1] == "1,3,1.0"
    with pytest.raises(ValueError):
        frequency_loss_table(s, np.arange(5.0))


def test_pearson_matches_scipy():
    rng = np.random.default_rng(1)
    x, y = rng.random(50), rng.random(50)
    assert pearson(x, y) == pytest.approx(stats.pearsonr(x, y)[0], abs=1e-12)


def test_static_schedule_uniform_chi_square():
    s = make_static_schedule(SamplingDistribution.uniform(50), 2000, 32, RngStream(3))
    assert s.num_samples == 2000 * 32 and np.all(s.provenance == PROVENANCE_STATIC)
    assert stats.chisquare(np.bincount(s.flat(), minlength=50)).pvalue > 0.001
    assert s == make_static_schedule(SamplingDistribution.uniform(50), 2000, 32, RngStream(3))


def test_replay_reproduces_search(small_config, small_dataset):
    res = run_autosampling(small_config, small_dataset)
    model, ev = replay_run(res.schedule, small_config.hidden_dim, small_config.hyper, small_dataset,
                           small_config.seed)
    assert model.to_bytes() == res.model.to_bytes() and ev == res.final_eval


def test_replay_empty_schedule_is_init(small_config, small_dataset):
    from autosampling.search import initial_model
    model, ev = replay_run(SamplingSchedule.empty(small_dataset.num_samples), None, small_config.hyper,
                           small_dataset, small_config.seed)
    assert model == initial_model(small_config, small_dataset)


def test_transfer_to_other_architecture(small_config, small_dataset):
    res = run_autosampling(small_config, small_dataset)
    model, ev = transfer_run(res.distribution, 8, small_config.hyper, small_dataset, 1, 20, 8)
    assert model.arch.hidden_dim == 8 and model.step == 20 and 0 <= ev.metric <= 1


def test_static_distribution_final_only():
    ids = np.array([[0, 0], [1, 1]])
    s = SamplingSchedule(ids, [0, 1], 2)
    assert static_distribution(s).probs.tolist() == [0.5, 0.5]
    assert static_distribution(s, final_only=True).probs.tolist() == [0.0, 1.0]


def test_compare_conditions_shape_and_fairness(small_config, small_dataset, tmp_path):
    table = compare_conditions(small_config, small_dataset, [1, 2])
    assert table.conditions == ("UNIFORM", "STATIC", "DYNAMIC") and table.metrics.shape == (3, 2)
    assert np.all(table.samples == small_config.total_batches * small_config.batch_size)
    table.to_csv(tmp_path / "t.csv")
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "condition,seed_1,seed_2,mean,std" and len(lines) == 4
    with pytest.raises(ValueError):
        compare_conditions(small_config, small_dataset, [1])


def test_compare_conditions_dynamic_matches_search(small_config, small_dataset):
    table = compare_conditions(small_config, small_dataset, [4, 5])
    for j, seed in enumerate((4, 5)):
        res = run_autosampling(replace(small_config, seed=seed), small_dataset)
        assert table.row("DYNAMIC")[j] == res.final_eval.metric


def test_ablation_default_rows(small_config, small_dataset):
    table = exploration_ablation(small_config, lambda s: small_dataset, [0, 1])
    assert table.conditions == ("uniform", "random", "mixture")
    assert "uniform" in str(table)


def test_artifact_name():
    assert artifact_name("exp1", "STATIC", 3, "histogram") == "exp1__STATIC__s3__histogram.csv"
    assert artifact_name("exp1", "compare", None, "table") == "exp1__compare__all__table.csv"
