import math

import numpy as np
import pytest
from pydantic import ValidationError as PydanticValidationError

from analytic import AnnealedParams
from errors import DomainError, ValidationError
from estimators import (
    Aggregates,
    ExperimentConfig,
    annealed_mean_check,
    estimate_lambda,
    estimate_m,
    fit_scaling,
    lambda_above_one_probe,
    lambda_profile,
    markov_check,
    prob_n_zero,
    ratio_of_moments,
    scaling_fit,
    second_moment_ratio,
)
from exact_counting import build_count_layers, count_n
from lattice_core import Environment, GraphMode, Vertex, derive_seed


def config(p=0.5, d=1, **kwargs) -> ExperimentConfig:
    return ExperimentConfig(params=AnnealedParams.of(p, d), **kwargs)


def test_aggregates_from_values():
    a = Aggregates.from_values([1.0, 2.0, 3.0, None, math.inf])
    assert a.count == 3
    assert a.mean == pytest.approx(2.0)
    assert a.stdev == pytest.approx(1.0)
    assert a.stderr == pytest.approx(1 / math.sqrt(3))
    assert a.ci_low == pytest.approx(2.0 - 1.96 / math.sqrt(3))
    assert a.half_width == pytest.approx(1.96 / math.sqrt(3))

    empty = Aggregates.from_values([None])
    assert empty.count == 0
    assert math.isnan(empty.mean)


def test_experiment_config_validation():
    assert config(n=5, alpha=0.5).lengths() == [5]
    assert config(n_grid=[4, 8], alpha=0.5).lengths() == [4, 8]
    with pytest.raises(ValidationError):
        config(alpha=0.5).lengths()
    with pytest.raises(ValidationError):
        config(n_grid=[4, 4]).lengths()
    with pytest.raises(ValidationError):
        config(n=5).alphas()
    with pytest.raises(PydanticValidationError):
        config(n=5, reps=0)


def test_config_accepts_camel_case_keys():
    parsed = ExperimentConfig.model_validate({"params": {"p": 0.3, "d": 2}, "nGrid": [3, 6], "alphaGrid": [0.4], "masterSeed": 9})
    assert parsed.n_grid == [3, 6]
    assert parsed.master_seed == 9
    assert parsed.environment(0).seed == derive_seed(9, 0)


def test_estimate_m_all_good_environment():
    mode = GraphMode.semi(1)
    result = estimate_m(config(n_grid=[5, 10], reps=3), env_factory=lambda rep: Environment.constant(mode, 1, n_max=10))
    row = result.row("M_n/n", 10)
    assert row.aggregates.mean == 1.0
    assert row.aggregates.stdev == 0.0
    assert result.extras["nSequence"] == [5, 10]


def test_estimate_m_dominates_straight_path():
    result = estimate_m(config(p=0.4, d=2, n_grid=[6, 12], reps=8, master_seed=3))
    assert result.extras["dominatesStraightPath"]
    for record in result.per_rep:
        assert all(m >= s for m, s in zip(record["m_over_n"], record["straight_over_n"]))
    assert result.row("M_n/n").n == 12


def test_estimate_m_is_thread_independent():
    one = estimate_m(config(n_grid=[10, 20], reps=6, master_seed=5, threads=1))
    many = estimate_m(config(n_grid=[10, 20], reps=6, master_seed=5, threads=3))
    exclude = {"wall_clock", "config"}
    assert one.model_dump(exclude=exclude) == many.model_dump(exclude=exclude)


def test_estimate_m_is_monotone_in_p():
    low = estimate_m(config(p=0.3, n=25, reps=5, master_seed=11))
    high = estimate_m(config(p=0.6, n=25, reps=5, master_seed=11))
    for a, b in zip(low.per_rep, high.per_rep):
        assert a["m_over_n"][0] <= b["m_over_n"][0]


def test_lambda_at_zero_threshold_is_out_degree():
    result = estimate_lambda(config(d=2, n=8, alpha=0.0, reps=3, backend="exact"))
    row = result.row("lambda", 8, 0.0)
    assert row.aggregates.mean == pytest.approx(4.0)
    assert row.zero_fraction == 0.0


def test_lambda_at_full_density_is_below_one():
    result = estimate_lambda(config(n=50, alpha=1.0, reps=20, master_seed=2))
    assert result.row("lambda", 50, 1.0).aggregates.mean < 1.0


def test_lambda_below_p_is_close_to_out_degree():
    result = estimate_lambda(config(n=100, alpha=0.3, reps=20, master_seed=4))
    assert result.row("lambda", 100, 0.3).aggregates.mean == pytest.approx(2.0, rel=0.02)


def test_lambda_rejects_alpha_above_one():
    with pytest.raises(DomainError):
        estimate_lambda(config(n=10, alpha=1.5))


def test_lambda_profile_is_monotone_in_alpha():
    result = lambda_profile(config(n=20, alpha_grid=[0.2, 0.5, 0.8], reps=5, master_seed=6))
    assert result.experiment == "lambda_profile"
    assert result.extras["monotoneInAlpha"]
    assert result.extras["phi"][0] == 2.0
    assert len(result.extras["lambdaMean"]) == 3


def test_prob_zero_matches_exact_counts():
    cfg = config(n_grid=[4, 8, 12], alpha=0.6, reps=30, master_seed=8)
    result = prob_n_zero(cfg)
    for rep, record in enumerate(result.per_rep):
        layers = build_count_layers(cfg.environment(rep), 12, backend="exact", keep_levels=[4, 8, 12])
        assert record["zero"] == [count_n(layers, t, 0.6).is_zero for t in (4, 8, 12)]


def test_prob_zero_extreme_thresholds():
    assert prob_n_zero(config(n_grid=[5, 10], alpha=0.0, reps=10)).extras["frequencies"] == [0.0, 0.0]
    assert prob_n_zero(config(n_grid=[5, 10], alpha=1.5, reps=10)).extras["frequencies"] == [1.0, 1.0]


@pytest.mark.slow
def test_prob_zero_decays_below_m():
    result = prob_n_zero(config(n_grid=[3, 6, 9, 12], alpha=0.6, reps=2000, master_seed=1))
    freqs = result.extras["frequencies"]
    assert all(a > b for a, b in zip(freqs, freqs[1:]))
    assert result.extras["slope"] is not None and result.extras["slope"] < 0


def test_ratio_of_moments_synthetic():
    ratio, stderr = ratio_of_moments(np.array([0.0, math.log(3.0)]))
    assert ratio == pytest.approx(1.25)
    assert math.isfinite(stderr)
    ratio, _ = ratio_of_moments(np.array([-np.inf, -np.inf]))
    assert math.isnan(ratio)


def test_second_moment_ratio_of_constant_counts_is_one():
    result = second_moment_ratio(config(n=10, alpha=0.0, reps=5))
    assert result.aggregates.mean == pytest.approx(1.0)

    mode = GraphMode.semi(1)
    fixed = second_moment_ratio(config(n=10, alpha=0.7, reps=4), env_factory=lambda rep: Environment.constant(mode, 1, n_max=10))
    assert fixed.aggregates.mean == pytest.approx(1.0)


def test_annealed_mean_is_unbiased():
    result = annealed_mean_check(config(n=10, alpha=0.6, reps=400, master_seed=12))
    assert all(abs(z) < 4 for z in result.extras["zScores"].values())


def test_markov_bound_holds():
    result = markov_check(config(n=10, alpha=0.6, reps=200, master_seed=13))
    assert all(result.extras["withinMarkovBound"].values())
    assert result.row("P(N>10EN)").aggregates.mean <= 0.1 + 3 * math.sqrt(0.09 / 200)


def test_fit_scaling_recovers_exponent():
    p_grid = [0.01, 0.02, 0.05, 0.1, 0.2]
    m_hat = [2 * p ** 0.5 for p in p_grid[:-1]] + [10.0]
    half_widths = [0.01 * m for m in m_hat[:-1]] + [5.0]
    fit = fit_scaling(p_grid, m_hat, half_widths, expected_gamma=0.5)
    assert fit.used == [True, True, True, True, False]
    assert fit.gamma == pytest.approx(0.5, abs=1e-9)
    assert fit.intercept == pytest.approx(math.log(2), abs=1e-9)
    with pytest.raises(ValidationError):
        fit_scaling([0.1, 0.2], [0.3, 0.4], [1.0, 0.001])


def test_interchange_bound_on_single_good_line():
    n = 6
    mode = GraphMode.semi(2)
    line = {Vertex((t, 0), t): 1 for t in range(1, n + 1)}

    def env_factory(rep: int) -> Environment:
        return Environment.constant(mode, 0, n_max=n).with_overrides(line)

    result = lambda_above_one_probe(config(d=2, n=n, alpha=0.5, reps=2, backend="exact"), env_factory)
    assert result.extras["degenerateReps"] == 2
    assert result.extras["allBoundsHold"]
    assert all(r["max_weight"] == n for r in result.per_rep)


def test_interchange_bounds_hold_on_random_environments():
    result = lambda_above_one_probe(config(d=2, n=10, alpha=0.5, reps=4, backend="exact", master_seed=21))
    assert result.extras["allBoundsHold"]
    assert result.extras["violations"] == []
    assert 0.0 <= result.extras["fractionAboveOne"] <= 1.0


def test_estimate_m_is_at_least_p():
    for p, d in [(0.3, 1), (0.2, 2)]:
        result = estimate_m(config(p=p, d=d, n=40, reps=10, master_seed=17))
        assert result.aggregates.mean >= p - 2 * result.aggregates.stderr


@pytest.mark.slow
def test_lambda_below_p_full_size():
    result = estimate_lambda(config(n=200, alpha=0.25, reps=100, master_seed=1))
    row = result.row("lambda", 200, 0.25)
    assert row.aggregates.mean == pytest.approx(2.0, rel=0.02)
    assert row.zero_fraction == 0.0


@pytest.mark.slow
def test_quenched_profile_rarely_exceeds_phi():
    result = lambda_profile(config(n=200, alpha_grid=[0.3, 0.5, 0.7, 0.9], reps=100, master_seed=2))
    assert all(fraction < 0.01 for fraction in result.extras["markovExceedance"].values())
    assert result.extras["monotoneInAlpha"]


@pytest.mark.slow
def test_annealed_mean_full_size():
    result = annealed_mean_check(config(p=0.3, n=20, alpha_grid=[0.3, 0.5, 0.7], reps=10_000, master_seed=3))
    assert all(abs(z) < 3 for z in result.extras["zScores"].values())


@pytest.mark.slow
@pytest.mark.parametrize(
    "d,n,reps,tolerance",
    [(1, 800, 100, 0.15), (2, 300, 50, 0.2)],
)
def test_scaling_exponent_small_p(d, n, reps, tolerance):
    fit, results = scaling_fit([0.01, 0.02, 0.05, 0.1], config(p=0.1, d=d, n=n, reps=reps, master_seed=1, threads=4))
    assert len(results) == 4
    assert sum(fit.used) >= 3
    assert fit.gamma == pytest.approx(1.0 / (d + 1), abs=tolerance)


@pytest.mark.slow
def test_second_moment_ratio_across_lengths_d4(record_property):
    result = second_moment_ratio(config(p=0.3, d=4, n_grid=[12, 20], alpha=0.32, reps=100, master_seed=5))
    short = result.row("second_moment_ratio", 12, 0.32).aggregates.mean
    long = result.row("second_moment_ratio", 20, 0.32).aggregates.mean
    record_property("ratio_n12", short)
    record_property("ratio_n20", long)
    record_property("relative_change", abs(long - short) / short)
    # empirical moments: mean of squares >= square of mean
    assert short >= 1.0 - 1e-9
    assert long >= 1.0 - 1e-9
