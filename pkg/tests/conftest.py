import pytest

from autosampling.core import PURPOSE_DATA, RngStream
from autosampling.search import SearchConfig
from autosampling.trainer import SyntheticSpec, gen_synthetic_dataset


@pytest.fixture(scope="session")
def small_synth():
    spec = SyntheticSpec(num_clusters=3, samples_per_cluster=20, feature_dim=4, separation=2.0,
                         redundancy_factor=2, label_noise_fraction=0.1, val_fraction=0.25)
    return gen_synthetic_dataset(spec, RngStream(11, 0, 0, PURPOSE_DATA))


@pytest.fixture(scope="session")
def small_dataset(small_synth):
    return small_synth.dataset


@pytest.fixture
def small_config():
    return SearchConfig(population_size=3, intervals_per_exploitation=2, interval_len=3, batch_size=8,
                        total_alternations=3, exploration_type="mixture", seed=5, base_lr=0.05,
                        lr_schedule="constant")


def brute_force_counts(flat, size):
    counts = [0] * size
    for x in flat:
        counts[int(x)] += 1
    return counts


ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance_report():
    """Record one PASS/FAIL line per acceptance criterion for the session summary."""
    def report(number, title, ok, detail=""):
        line = f"[{'PASS' if ok else 'FAIL'}] criterion {number:>2}: {title}" + (f" -- {detail}" if detail else "")
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok
    return report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda l: int(l.split("criterion")[1].split(":")[0])):
            terminalreporter.write_line(line)
