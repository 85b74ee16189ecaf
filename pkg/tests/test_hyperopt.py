"""Random search: scale-correct sampling, determinism, ranking, trial log."""

from collections import Counter

import numpy as np
import pytest
from scipy import stats

import lesionbench as lb
from lesionbench.errors import ConfigError
from lesionbench.hyperopt import SearchEntry, SearchSpace, default_space, standard_config_from


def test_default_space_ranges():
    by_name = {e.name: e for e in default_space().entries}
    assert (by_name["dropout"].lower, by_name["dropout"].upper) == (0.0, 0.5)
    assert by_name["dropout"].scale == "linear" and not by_name["dropout"].integer
    assert (by_name["batch_size"].lower, by_name["batch_size"].upper) == (4, 512)
    assert by_name["batch_size"].scale == "log2" and by_name["batch_size"].integer
    assert (by_name["kernel_size"].lower, by_name["kernel_size"].upper) == (2, 5)
    assert (by_name["learning_rate"].lower, by_name["learning_rate"].upper) == (0.001, 0.01)
    assert by_name["learning_rate"].scale == "log10"
    assert (by_name["num_conv_layers"].lower, by_name["num_conv_layers"].upper) == (5, 10)
    assert (by_name["pool_size"].lower, by_name["pool_size"].upper) == (3, 4)
    assert (by_name["filters_per_layer"].lower, by_name["filters_per_layer"].upper) == (6, 12)


def test_samples_respect_bounds_and_types():
    space = default_space()
    for trial in range(200):
        config = lb.sample(space, seed=0, trial_index=trial)
        assert 0.0 <= config["dropout"] <= 0.5
        assert isinstance(config["dropout"], float)
        assert config["batch_size"] in {4, 8, 16, 32, 64, 128, 256, 512}
        assert config["kernel_size"] in {2, 3, 4, 5}
        assert 0.001 <= config["learning_rate"] <= 0.01
        assert config["num_conv_layers"] in {5, 6, 7, 8, 9, 10}
        assert config["pool_size"] in {3, 4}
        assert config["filters_per_layer"] in set(range(6, 13))
        for key in ("batch_size", "kernel_size", "num_conv_layers",
                    "pool_size", "filters_per_layer"):
            assert isinstance(config[key], int)


def test_sample_deterministic_per_seed_and_trial():
    space = default_space()
    assert lb.sample(space, 3, 7) == lb.sample(space, 3, 7)
    assert lb.sample(space, 3, 7) != lb.sample(space, 3, 8)
    assert lb.sample(space, 4, 7) != lb.sample(space, 3, 7)


def test_every_sampled_config_builds_a_model():
    space = default_space()
    for trial in range(12):
        config = lb.sample(space, seed=1, trial_index=trial)
        arch, train = standard_config_from(config)
        spec = lb.make_standard_spec(lb.StandardCnnConfig(**arch), image_size=224)
        model = lb.build(spec, seed=0)
        assert model.num_parameters() > 0
        lb.TrainConfig(seed=0, **train)


def test_degenerate_integer_range_is_constant():
    space = SearchSpace(entries=(SearchEntry("k", 3.0, 3.0 + 1e-9, "linear", True),))
    values = {lb.sample(space, 0, i)["k"] for i in range(50)}
    assert values == {3}


def test_log10_draws_split_at_log_midpoint():
    # 1e5 learning-rate draws: the log midpoint of [0.001, 0.01] is
    # 10^-2.5 ~= 0.00316; a log-uniform sampler puts half the mass below it
    space = SearchSpace(entries=(SearchEntry("lr", 0.001, 0.01, "log10", False),))
    midpoint = 10.0 ** -2.5
    below = 0
    n = 100_000
    for i in range(n):
        if lb.sample(space, 42, i)["lr"] < midpoint:
            below += 1
    assert 0.495 <= below / n <= 0.505


def test_linear_draws_pass_chi_square():
    space = SearchSpace(entries=(SearchEntry("x", 0.0, 1.0, "linear", False),))
    n = 100_000
    values = np.array([lb.sample(space, 9, i)["x"] for i in range(n)])
    counts, _ = np.histogram(values, bins=10, range=(0.0, 1.0))
    chi2 = float(((counts - n / 10) ** 2 / (n / 10)).sum())
    p = float(stats.chi2.sf(chi2, df=9))
    assert p > 0.01


def test_log2_batch_draws_cover_all_powers():
    space = default_space()
    counts = Counter(lb.sample(space, 5, i)["batch_size"] for i in range(4000))
    assert set(counts) == {4, 8, 16, 32, 64, 128, 256, 512}
    # interior powers each capture ~1/7 of the log2 axis; endpoints half that
    for power in (8, 16, 32, 64, 128, 256):
        assert counts[power] > 250


def test_search_entry_validation():
    with pytest.raises(ConfigError):
        SearchEntry("x", 1.0, 0.5)
    with pytest.raises(ConfigError):
        SearchEntry("x", 0.0, 1.0, "log10")
    with pytest.raises(ConfigError):
        SearchEntry("x", 0.1, 1.0, "ln")
    with pytest.raises(ConfigError):
        SearchSpace(entries=(SearchEntry("a", 0, 1), SearchEntry("a", 0, 2)))


def test_standard_config_from_rejects_unknown_names():
    with pytest.raises(ConfigError):
        standard_config_from({"momentum": 0.9})


# ---------------------------------------------------------------------------
# search orchestration

def _toy_objective(config):
    # deterministic, maximized at small dropout
    return 1.0 - config["dropout"]


def test_search_ranks_by_objective_desc():
    space = SearchSpace(entries=(SearchEntry("dropout", 0.0, 0.5, "linear", False),))
    trials = lb.search(space, budget=8, objective=_toy_objective, seed=0)
    assert len(trials) == 8
    objectives = [t.objective for t in trials]
    assert objectives == sorted(objectives, reverse=True)
    assert {t.trial_index for t in trials} == set(range(8))
    assert all(t.status == "ok" for t in trials)


def test_search_is_deterministic():
    space = SearchSpace(entries=(SearchEntry("dropout", 0.0, 0.5, "linear", False),))
    a = lb.search(space, budget=5, objective=_toy_objective, seed=3)
    b = lb.search(space, budget=5, objective=_toy_objective, seed=3)
    assert [(t.trial_index, t.config, t.objective) for t in a] == \
           [(t.trial_index, t.config, t.objective) for t in b]


def test_search_failures_rank_last_and_do_not_abort():
    space = SearchSpace(entries=(SearchEntry("dropout", 0.0, 0.5, "linear", False),))

    def flaky(config):
        if config["dropout"] > 0.25:
            raise ValueError("diverged")
        return config["dropout"]

    trials = lb.search(space, budget=12, objective=flaky, seed=1)
    statuses = [t.status for t in trials]
    n_ok = statuses.count("ok")
    assert 0 < n_ok < 12
    assert statuses == ["ok"] * n_ok + ["failed"] * (12 - n_ok)
    for t in trials:
        if t.status == "failed":
            assert t.objective is None
            assert "ValueError: diverged" == t.error


def test_search_tie_break_is_trial_index():
    space = SearchSpace(entries=(SearchEntry("dropout", 0.0, 0.5, "linear", False),))
    trials = lb.search(space, budget=6, objective=lambda c: 0.5, seed=0)
    assert [t.trial_index for t in trials] == list(range(6))


def test_search_budget_validation():
    space = default_space()
    with pytest.raises(ConfigError):
        lb.search(space, budget=0, objective=_toy_objective)


def test_trial_log_round_trip(tmp_path):
    space = SearchSpace(entries=(SearchEntry("dropout", 0.0, 0.5, "linear", False),))

    def flaky(config):
        if config["dropout"] > 0.4:
            raise ValueError("nope")
        return config["dropout"]

    path = tmp_path / "trials.jsonl"
    trials = lb.search(space, budget=10, objective=flaky, seed=2, log_path=path)
    logged = lb.read_trial_log(path)
    # the log is in execution order; the return value is ranked
    assert [t.trial_index for t in logged] == list(range(10))
    by_index = {t.trial_index: t for t in trials}
    for entry in logged:
        ranked = by_index[entry.trial_index]
        assert entry.config == ranked.config
        assert entry.objective == ranked.objective
        assert entry.status == ranked.status
        assert entry.error == ranked.error


def test_trial_log_line_format(tmp_path):
    space = SearchSpace(entries=(SearchEntry("dropout", 0.0, 0.5, "linear", False),))
    path = tmp_path / "trials.jsonl"
    lb.search(space, budget=1, objective=lambda c: 0.25, seed=0, log_path=path)
    line = path.read_text().splitlines()[0]
    assert line.startswith('{"config": {"dropout": ')
    assert '"objective": 0.25' in line
    assert '"status": "ok"' in line
    assert '"trial_index": 0' in line


def test_search_finds_quadratic_optimum_region():
    # 50 log-uniform draws over [0.001, 0.01] reliably land one near the
    # peak of a quadratic centered at 0.005
    space = SearchSpace(entries=(SearchEntry("learning_rate", 0.001, 0.01,
                                             "log10", False),))

    def objective(config):
        return -(config["learning_rate"] - 0.005) ** 2

    trials = lb.search(space, budget=50, objective=objective, seed=1)
    assert 0.003 <= trials[0].config["learning_rate"] <= 0.008


def test_search_budget_one_runs_exactly_one_trial():
    space = SearchSpace(entries=(SearchEntry("dropout", 0.0, 0.5, "linear", False),))
    trials = lb.search(space, budget=1, objective=_toy_objective, seed=0)
    assert len(trials) == 1
    assert trials[0].trial_index == 0
