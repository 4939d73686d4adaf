import math
from fractions import Fraction

import numpy as np
import pytest

from analytic import (
    AnnealedParams,
    alpha_one,
    collision_rho,
    largest_exact_t,
    log_binomial_tail,
    log_expected_n,
    meeting_curve,
    meeting_table_bytes,
    phi,
    phi_curve_rows,
    phi_root,
    second_moment_sum,
)
from errors import DomainError, ResourceLimitError
from lattice_core import GraphKind


def exact_tail(n: int, kmin: int, p: Fraction) -> Fraction:
    return sum((Fraction(math.comb(n, k)) * p ** k * (1 - p) ** (n - k) for k in range(kmin, n + 1)), Fraction(0))


def test_params_validation():
    assert AnnealedParams.of(0.3, 2).out_degree == 4
    assert AnnealedParams.of(0.3, 2, "full").out_degree == 3
    with pytest.raises(DomainError):
        AnnealedParams.of(1.0, 1)
    with pytest.raises(DomainError):
        AnnealedParams.of(0.5, 0)


def test_phi_special_points():
    params = AnnealedParams.of(0.3, 2)
    assert phi(0.3, params) == 4.0
    assert phi(0.1, params) == 4.0
    assert phi(1.0, params) == pytest.approx(4 * 0.3)
    assert phi(0.3 + 1e-12, params) == pytest.approx(4.0, rel=1e-9)
    assert phi(1.0 - 1e-12, params) == pytest.approx(1.2, rel=1e-9)
    with pytest.raises(DomainError):
        phi(1.5, params)


def test_phi_value_against_direct_formula():
    params = AnnealedParams.of(0.5, 1)
    direct = 2 * (0.5 / 0.75) ** 0.75 * (0.5 / 0.25) ** 0.25
    assert phi(0.75, params) == pytest.approx(direct, rel=1e-13)
    assert phi(0.75, params) == pytest.approx(4 * 3 ** -0.75, rel=1e-13)


def test_phi_is_strictly_decreasing_above_p():
    params = AnnealedParams.of(0.2, 1)
    values = [phi(a, params) for a in np.linspace(0.2, 1.0, 200)]
    assert all(a > b for a, b in zip(values, values[1:]))


def test_binomial_tail_edges():
    assert log_binomial_tail(10, 0, 0.3) == 0.0
    assert log_binomial_tail(10, 11, 0.3) == -math.inf
    assert math.exp(log_binomial_tail(2, 2, 0.5)) == pytest.approx(0.25, rel=1e-14)


def test_binomial_tail_matches_rational_arithmetic():
    p = Fraction(2, 5)
    value = math.exp(log_binomial_tail(50, 30, 0.4))
    assert value == pytest.approx(float(exact_tail(50, 30, p)), rel=1e-12)
    for n in (1, 7, 20, 60):
        for kmin in range(0, n + 2, max(1, n // 6)):
            expected = exact_tail(n, kmin, Fraction(3, 10))
            got = log_binomial_tail(n, kmin, 0.3)
            if expected == 0:
                assert got == -math.inf
            else:
                assert math.exp(got) == pytest.approx(float(expected), rel=1e-10)


def test_binomial_tail_non_increasing_in_kmin():
    tails = [log_binomial_tail(40, k, 0.45) for k in range(42)]
    assert all(a >= b for a, b in zip(tails, tails[1:]))


def test_expected_count_trivial_cases():
    params = AnnealedParams.of(0.3, 2)
    assert log_expected_n(9, 0.0, params) == pytest.approx(9 * math.log(4))
    assert math.exp(log_expected_n(1, 1.0, params)) == pytest.approx(4 * 0.3)


@pytest.mark.parametrize("p", [0.1, 0.3, 0.5])
def test_expected_count_root_approaches_phi(p):
    params = AnnealedParams.of(p, 1)
    for alpha in np.arange(p + 0.05, 0.96, 0.1):
        root = math.exp(log_expected_n(2000, float(alpha), params) / 2000)
        assert abs(root - phi(float(alpha), params)) <= 0.01 * phi(float(alpha), params)


def test_alpha_one():
    assert alpha_one(AnnealedParams.of(0.5, 1)) == pytest.approx(1.0)
    assert alpha_one(AnnealedParams.of(0.25, 2)) == pytest.approx(1.0)
    assert alpha_one(AnnealedParams.of(0.01, 1)) == pytest.approx(0.150515, abs=1e-6)
    with pytest.raises(DomainError):
        alpha_one(AnnealedParams.model_construct(p=1.0, d=1, mode=GraphKind.SEMI))


def test_phi_root_solves_phi_equals_one():
    params = AnnealedParams.of(0.2, 1)
    root = phi_root(params)
    assert root.boundary is None
    assert abs(phi(root.alpha, params) - 1.0) <= 1e-9
    grid = np.linspace(0.2, 1.0, 1_000_001)
    values = np.array([phi(a, params) for a in grid[::100]])
    coarse = grid[::100][np.argmax(values < 1.0)]
    assert abs(coarse - root.alpha) <= 1e-4


def test_phi_root_small_p_is_below_one():
    assert phi_root(AnnealedParams.of(0.05, 1)).alpha < 1.0


def test_phi_root_boundary_is_flagged():
    root = phi_root(AnnealedParams.of(0.6, 1))
    assert root.alpha == 1.0
    assert root.boundary is not None


def test_phi_curve_rows():
    params = AnnealedParams.of(0.5, 1)
    rows = phi_curve_rows([0.5, 0.75], params, [10])
    assert rows[0][:2] == [0.5, 2.0]
    assert len(rows[1]) == 3


@pytest.mark.parametrize("d", [1, 2, 3])
def test_rho_one_step_bound(d):
    estimate = collision_rho(AnnealedParams.of(0.5, d), T=1, mc_samples=0)
    assert estimate.lower_bound == pytest.approx(1 / (2 * d))
    assert estimate.point_estimate == estimate.lower_bound


def test_rho_curve_is_non_decreasing():
    curve = meeting_curve(AnnealedParams.of(0.5, 2), 30)
    assert np.all(np.diff(curve) >= 0)
    assert curve[0] == pytest.approx(0.25)


def test_rho_recurrent_in_one_dimension():
    estimate = collision_rho(AnnealedParams.of(0.5, 1), T=10_000, mc_samples=0)
    assert estimate.lower_bound > 0.95


def test_rho_memory_refusal():
    with pytest.raises(ResourceLimitError):
        meeting_curve(AnnealedParams.of(0.5, 4), 200, memory_budget=10_000_000)


def test_largest_exact_t_fits_the_budget():
    # 107^4 * 16 fits in 2 GiB, 109^4 * 16 does not
    assert largest_exact_t(4) == 53
    assert largest_exact_t(1) == 100
    assert largest_exact_t(4, memory_budget=meeting_table_bytes(4, 10)) == 10
    assert largest_exact_t(4, memory_budget=meeting_table_bytes(4, 10) - 1) == 9
    with pytest.raises(ResourceLimitError):
        largest_exact_t(3, memory_budget=100)


def test_rho_transient_in_four_dimensions():
    estimate = collision_rho(AnnealedParams.of(0.5, 4), T=6, mc_samples=20_000, horizon=200, seed=3)
    assert estimate.lower_bound <= estimate.point_estimate <= 1.0
    assert estimate.point_estimate < 0.9
    assert estimate.point_estimate >= estimate.lower_bound - 3 * estimate.mc_stderr


def test_rho_monte_carlo_is_thread_independent():
    params = AnnealedParams.of(0.5, 3)
    one = collision_rho(params, T=4, mc_samples=25_000, horizon=100, seed=9, threads=1)
    many = collision_rho(params, T=4, mc_samples=25_000, horizon=100, seed=9, threads=3)
    assert one == many


@pytest.mark.slow
def test_rho_transient_in_four_dimensions_full_size():
    estimate = collision_rho(AnnealedParams.of(0.5, 4), T=10, mc_samples=100_000, horizon=1000, seed=1)
    assert estimate.point_estimate < 0.9


def test_second_moment_sum_trivial_cases():
    params = AnnealedParams.of(0.3, 1)
    assert second_moment_sum(100, 0.5, 0.5, 0.0, params) == 0.0
    rho, n, beta = 0.4, 50, 0.3
    m = math.floor(beta * n)
    assert second_moment_sum(n, 0.0, beta, rho, params) == pytest.approx(rho * (1 - rho ** m) / (1 - rho), rel=1e-12)
    with pytest.raises(DomainError):
        second_moment_sum(n, 0.5, 0.0, rho, params)
    with pytest.raises(DomainError):
        second_moment_sum(n, 0.5, 0.5, 1.0, params)


def test_second_moment_sum_stays_bounded_in_four_dimensions():
    params = AnnealedParams.of(0.3, 4)
    rho = collision_rho(params, T=6, mc_samples=0).lower_bound
    small = second_moment_sum(400, 0.31, 0.05, rho, params)
    large = second_moment_sum(800, 0.31, 0.05, rho, params)
    assert abs(large - small) < 0.05 * small
