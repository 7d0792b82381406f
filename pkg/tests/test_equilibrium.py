import concurrent.futures

import numpy as np
import pytest
import scipy.integrate

from spectre.rmt.equilibrium import (
    EquilibriumContext,
    delta,
    detectability_threshold,
    edge_solve,
    finite_horizon,
    g_of_m,
    g_of_x,
    g_prime,
    isolated_count,
    limiting_density,
    m_of_x,
    m_tilde_of_x,
    spike_location,
    spike_m,
    x_of_m,
    x_prime_of_m,
)
from spectre.rmt.montecarlo import Scenario, equilibrium_context, noise_covariance, observe, run_trials
from spectre.rmt.rmt_models import ArmaSpec, DomainError, NuQuadrature, SubcriticalPowerError
from spectre.rmt.spectral_model import build_nu

WHITE = build_nu(ArmaSpec())


def white_ctx(c: float) -> EquilibriumContext:
    return EquilibriumContext(nu=WHITE, c=c)


@pytest.mark.parametrize("c", [0.1, 0.25, 0.5, 0.9, 2.0])
def test_white_closed_forms(c: float) -> None:
    ctx = white_ctx(c)
    root_c = np.sqrt(c)
    assert ctx.edge.b == pytest.approx((1 + root_c) ** 2, abs=1e-8)
    assert ctx.edge.m_b == pytest.approx(-1.0 / (root_c * (1 + root_c)), abs=1e-8)
    assert detectability_threshold(ctx) == pytest.approx(root_c, abs=1e-8)
    for power in (1.5, 3.0, 10.0):
        if power > root_c:
            assert spike_location(ctx, power) == pytest.approx((1 + power) * (c + power) / power, abs=1e-8)


def test_white_closed_forms_quoted() -> None:
    ctx = white_ctx(0.5)
    assert ctx.edge.b == pytest.approx((1 + np.sqrt(0.5)) ** 2, abs=1e-8)
    assert detectability_threshold(ctx) == pytest.approx(np.sqrt(0.5), abs=1e-8)
    assert spike_location(ctx, 1.5) == pytest.approx(10.0 / 3.0, abs=1e-8)

    quarter = white_ctx(0.25)
    assert quarter.edge.b == pytest.approx(2.25, abs=1e-8)
    assert quarter.edge.m_b == pytest.approx(-4.0 / 3.0, abs=1e-8)
    assert detectability_threshold(quarter) == pytest.approx(0.5, abs=1e-8)


def test_edge_is_solved_once() -> None:
    ctx = white_ctx(0.5)
    with concurrent.futures.ThreadPoolExecutor(max_workers=8) as pool:
        edges = list(pool.map(lambda _: ctx.edge, range(32)))
    assert all(edge is edges[0] for edge in edges)
    assert edge_solve(ctx) == pytest.approx(tuple(edges[0]))


def test_invalid_ratio() -> None:
    with pytest.raises(DomainError):
        white_ctx(0.0)


def test_inverse_consistency() -> None:
    ctx = EquilibriumContext(nu=build_nu(ArmaSpec.ar1(0.6)), c=0.5)
    m_b = ctx.edge.m_b
    rng = np.random.default_rng(7)
    for m in m_b * rng.uniform(1e-3, 0.999, size=50):
        assert m_of_x(ctx, x_of_m(ctx, m)) == pytest.approx(m, abs=1e-9)


def test_x_of_m_is_increasing() -> None:
    ctx = EquilibriumContext(nu=build_nu(ArmaSpec.ar1(0.6)), c=0.5)
    grid = np.linspace(ctx.edge.m_b, 0.0, 102)[1:-1]
    assert all(x_prime_of_m(ctx, m) > 0 for m in grid)
    values = [x_of_m(ctx, m) for m in grid]
    assert np.all(np.diff(values) > 0)


def test_m_domain_errors() -> None:
    ctx = white_ctx(0.5)
    with pytest.raises(DomainError):
        x_of_m(ctx, 0.1)
    with pytest.raises(DomainError):
        m_of_x(ctx, ctx.edge.b - 0.1)


def test_g_forms_agree() -> None:
    ctx = EquilibriumContext(nu=build_nu(ArmaSpec(ar=(0.5, -0.3), ma=(0.4,))), c=0.3)
    for x in ctx.edge.b + np.array([0.01, 0.5, 3.0, 40.0]):
        m = m_of_x(ctx, x)
        assert g_of_x(ctx, x) == pytest.approx(g_of_m(ctx, m), rel=1e-9)
        assert g_of_x(ctx, x) == pytest.approx(x * m * m_tilde_of_x(ctx, x), rel=1e-12)


def test_g_monotone_and_positive() -> None:
    ctx = white_ctx(0.5)
    grid = np.linspace(ctx.edge.b + 0.01, ctx.edge.b + 50.0, 100)
    values = np.array([g_of_x(ctx, x) for x in grid])
    assert np.all(values > 0)
    assert np.all(np.diff(values) < 0)
    assert all(g_prime(ctx, x) < 0 for x in grid[::10])


def test_g_tail() -> None:
    ctx = EquilibriumContext(nu=build_nu(ArmaSpec.ar1(0.6)), c=0.5)
    x = 1e6
    assert x * g_of_x(ctx, x) == pytest.approx(1.0, abs=1e-3)


@pytest.mark.parametrize("spec", [ArmaSpec(), ArmaSpec.ar1(0.6)])
def test_g_prime_finite_difference(spec: ArmaSpec) -> None:
    ctx = EquilibriumContext(nu=build_nu(spec), c=0.5)
    x = ctx.edge.b + 1.0
    step = 1e-5
    numeric = (g_of_x(ctx, x + step) - g_of_x(ctx, x - step)) / (2 * step)
    assert g_prime(ctx, x) == pytest.approx(numeric, rel=1e-6)


def test_delta_limits() -> None:
    ctx = white_ctx(0.5)
    assert 0 < delta(ctx, ctx.edge.b + 1e-6) < 0.01
    assert delta(ctx, 1e6) == pytest.approx(1.0, abs=1e-4)


@pytest.mark.parametrize("spec", [ArmaSpec(), ArmaSpec.ar1(0.6)])
def test_delta_derivative_identity(spec: ArmaSpec) -> None:
    ctx = EquilibriumContext(nu=build_nu(spec), c=0.5)
    x = ctx.edge.b + 1.0
    step = 1e-4
    m_prime = (m_of_x(ctx, x + step) - m_of_x(ctx, x - step)) / (2 * step)
    assert delta(ctx, x) * m_prime == pytest.approx(m_of_x(ctx, x) ** 2, abs=1e-8)


def test_correlated_threshold_exceeds_white() -> None:
    white = white_ctx(0.5)
    correlated = EquilibriumContext(nu=build_nu(ArmaSpec.ar1(0.6)), c=0.5)
    assert correlated.edge.b > white.edge.b
    assert detectability_threshold(correlated) > detectability_threshold(white)


def test_spike_solution() -> None:
    ctx = EquilibriumContext(nu=build_nu(ArmaSpec.ar1(0.6)), c=0.5)
    p_lim = detectability_threshold(ctx)
    for power in (1.01 * p_lim, 2 * p_lim, 100.0, 1e6):
        m = spike_m(ctx, power)
        assert power * g_of_m(ctx, m) == pytest.approx(1.0, abs=1e-9)
        assert spike_location(ctx, power) > ctx.edge.b
    with pytest.raises(SubcriticalPowerError):
        spike_m(ctx, 0.99 * p_lim)


def test_isolated_count() -> None:
    ctx = white_ctx(0.5)
    assert isolated_count(ctx, [10.0, 1.0, 0.7, 0.1]) == 2
    assert isolated_count(ctx, []) == 0


def test_finite_horizon_sources() -> None:
    eigenvalues = np.ones(40)
    from_array = finite_horizon(eigenvalues, 0.5)
    from_nu = finite_horizon(NuQuadrature.atoms(eigenvalues), 0.5)
    assert from_array.edge.b == pytest.approx(white_ctx(0.5).edge.b, abs=1e-10)
    assert from_nu.edge.m_b == pytest.approx(from_array.edge.m_b)
    assert from_nu.with_ratio(0.25).edge.b == pytest.approx(2.25, abs=1e-8)


def test_limiting_density_marchenko_pastur() -> None:
    c = 0.5
    ctx = white_ctx(c)
    lower, upper = (1 - np.sqrt(c)) ** 2, (1 + np.sqrt(c)) ** 2
    grid = np.linspace(lower + 0.05, upper - 0.05, 40)
    expected = np.sqrt((upper - grid) * (grid - lower)) / (2 * np.pi * c * grid)
    assert np.allclose(limiting_density(ctx, grid), expected, atol=1e-4)
    outside = limiting_density(ctx, np.array([upper + 0.5]))
    assert outside[0] < 1e-4
    with pytest.raises(DomainError):
        limiting_density(ctx, [-1.0, 1.0])


def test_limiting_density_mass() -> None:
    ctx = EquilibriumContext(nu=build_nu(ArmaSpec.ar1(0.6)), c=0.5)
    grid = np.linspace(1e-3, ctx.edge.b + 0.5, 600)
    density = limiting_density(ctx, grid)
    assert np.all(density >= 0)
    assert scipy.integrate.trapezoid(density, grid) == pytest.approx(1.0, abs=0.02)


@pytest.mark.slow
@pytest.mark.parametrize("a", [0.0, 0.3, 0.6])
def test_edge_containment(a: float) -> None:
    """The largest noise eigenvalue stays near `b`, for most draws"""
    sc = Scenario(n=400, t=800, noise=ArmaSpec.ar1(a))
    b = sc.context().edge.b
    # 0.15 for white noise, scaled with the edge.
    tolerance = 0.15 * b / (1 + np.sqrt(sc.c_t)) ** 2
    largest = run_trials(lambda rng: observe(sc, rng).eigenvalues[0], seed=11, trials=100)
    inside = np.abs(np.array(largest) - b) <= tolerance
    assert inside.mean() >= 0.95


@pytest.mark.slow
@pytest.mark.parametrize(("ratio", "separates"), [(2.0, True), (0.5, False)])
def test_spike_separation_around_threshold(ratio: float, separates: bool) -> None:
    noise = ArmaSpec.ar1(0.6)
    ctx = equilibrium_context(noise, 0.5)
    power = ratio * detectability_threshold(ctx)
    sc = Scenario.from_snr_db(snr_db=[10 * np.log10(power)], n=400, t=800, thetas_deg=(10.0,), noise=noise)
    largest = np.array(run_trials(lambda rng: observe(sc, rng).eigenvalues[0], seed=13, trials=50))
    b = ctx.edge.b
    if separates:
        rho = spike_location(ctx, power)
        assert np.mean(largest > (b + rho) / 2) >= 0.9
        assert np.mean(largest) == pytest.approx(rho, abs=0.25 * (rho - b))
    else:
        assert np.mean(np.abs(largest - b) <= 0.15 * b / (1 + np.sqrt(0.5)) ** 2) >= 0.9


def test_finite_horizon_spike_near_limit() -> None:
    noise = ArmaSpec.ar1(0.6)
    finite = finite_horizon(noise_covariance(noise, 200), 0.5)
    assert abs(spike_location(finite, 4.0) - spike_location(equilibrium_context(noise, 0.5), 4.0)) < 0.05
