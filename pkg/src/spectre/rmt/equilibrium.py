"""
Deterministic equivalents of the noise Gram spectrum:
Stieltjes transforms on the real axis right of the bulk, the bulk edge,
the spike map `g` and its derivative, the detectability threshold,
spike locations and the limiting density.

The real-axis transform `m(x)` is obtained by inverting the explicit map
`x(m) = -1/m + integral of t / (1 + c m t) nu(dt)`, increasing on `(m_b, 0)`.
"""

from __future__ import annotations

import dataclasses
import logging
import threading

import numpy as np
import scipy.optimize

from .rmt_models import (
    BracketError,
    ConvergenceError,
    DomainError,
    EdgeSolution,
    NuQuadrature,
    SolverConfig,
    SubcriticalPowerError,
    ToeplitzCovariance,
)

LOGGER = logging.getLogger(__name__)

DENSITY_ETA = 1e-6


@dataclasses.dataclass(frozen=True, kw_only=True, eq=False)
class EquilibriumContext:
    nu: NuQuadrature
    c: float
    solver: SolverConfig = dataclasses.field(default_factory=SolverConfig)
    _edge_lock: threading.Lock = dataclasses.field(default_factory=threading.Lock, init=False, repr=False)
    _edge_box: list[EdgeSolution] = dataclasses.field(default_factory=list, init=False, repr=False)

    def __post_init__(self) -> None:
        if not self.c > 0:
            raise DomainError(message="Dimension ratio must be positive", details={"c": self.c})

    @property
    def edge(self) -> EdgeSolution:
        """Lazily solved, single computation even under concurrent first access"""
        if not self._edge_box:
            with self._edge_lock:
                if not self._edge_box:
                    self._edge_box.append(edge_solve(self))
        return self._edge_box[0]

    @property
    def m_lower(self) -> float:
        """Left end `-1 / (c b_nu)` of the admissible `m` interval"""
        return -1.0 / (self.c * self.nu.b_nu)

    def with_ratio(self, c: float) -> EquilibriumContext:
        return EquilibriumContext(nu=self.nu, c=c, solver=self.solver)


def _denominators(ctx: EquilibriumContext, m: float) -> np.ndarray:
    return 1.0 + ctx.c * m * ctx.nu.nodes


def _check_m(ctx: EquilibriumContext, m: float) -> None:
    if not ctx.m_lower < m < 0:
        raise DomainError(message="m outside of (-1/(c b_nu), 0)", details={"m": m, "lower": ctx.m_lower})


def x_of_m(ctx: EquilibriumContext, m: float) -> float:
    _check_m(ctx, m)
    return -1.0 / m + float(ctx.nu.integrate(ctx.nu.nodes / _denominators(ctx, m)))


def x_prime_of_m(ctx: EquilibriumContext, m: float) -> float:
    _check_m(ctx, m)
    return 1.0 / m**2 - ctx.c * float(ctx.nu.integrate((ctx.nu.nodes / _denominators(ctx, m)) ** 2))


def g_of_m(ctx: EquilibriumContext, m: float) -> float:
    """`g` in the `m` parametrization: `-integral of m / (1 + c m t) nu(dt)`"""
    _check_m(ctx, m)
    return -m * float(ctx.nu.integrate(1.0 / _denominators(ctx, m)))


def _edge_residual(ctx: EquilibriumContext, m: float) -> float:
    return float(ctx.nu.integrate((m * ctx.nu.nodes / _denominators(ctx, m)) ** 2)) - 1.0 / ctx.c


def edge_solve(ctx: EquilibriumContext) -> EdgeSolution:
    """Root `m_b` of `integral of (m t / (1 + c m t))^2 nu(dt) = 1/c`, and `b = x(m_b)`"""
    solver = ctx.solver
    lower = ctx.m_lower
    upper = lower * 1e-9

    gap = 0.5
    for _ in range(solver.max_iter):
        lower_in = lower * (1.0 - gap)
        if _edge_residual(ctx, lower_in) > 0:
            break
        gap /= solver.bracket_expansion
    else:
        raise BracketError(
            message="Edge equation does not change sign near -1/(c b_nu)",
            details={"c": ctx.c, "b_nu": ctx.nu.b_nu, "last_gap": gap},
        )

    m_b = scipy.optimize.brentq(
        lambda m: _edge_residual(ctx, m),
        lower_in,
        upper,
        xtol=solver.abs_tol * min(1.0, abs(lower_in)),
        maxiter=solver.max_iter,
    )
    b = x_of_m(ctx, m_b)
    LOGGER.debug(
        "Solved bulk edge",
        extra=dict(x_c=ctx.c, x_b=b, x_m_b=m_b, x_residual=_edge_residual(ctx, m_b)),
    )
    return EdgeSolution(b=b, m_b=m_b)


def _check_x(ctx: EquilibriumContext, x: float) -> EdgeSolution:
    edge = ctx.edge
    if not x > edge.b + 1e-12:
        raise DomainError(message="x must lie right of the bulk edge", details={"x": x, "b": edge.b})
    return edge


def m_of_x(ctx: EquilibriumContext, x: float) -> float:
    edge = _check_x(ctx, x)
    # `x(-1/x) >= x` since the integral term is nonnegative on the domain.
    upper = -1.0 / x
    return scipy.optimize.brentq(
        lambda m: x_of_m(ctx, m) - x,
        edge.m_b,
        upper,
        xtol=ctx.solver.abs_tol * min(1.0, abs(upper)),
        maxiter=ctx.solver.max_iter,
    )


def m_tilde_of_x(ctx: EquilibriumContext, x: float) -> float:
    return ctx.c * m_of_x(ctx, x) - (1.0 - ctx.c) / x


def g_of_x(ctx: EquilibriumContext, x: float) -> float:
    m = m_of_x(ctx, x)
    return x * m * (ctx.c * m - (1.0 - ctx.c) / x)


def _delta_at_m(ctx: EquilibriumContext, m: float) -> float:
    return 1.0 - ctx.c * float(ctx.nu.integrate((m * ctx.nu.nodes / _denominators(ctx, m)) ** 2))


def delta(ctx: EquilibriumContext, x: float) -> float:
    return _delta_at_m(ctx, m_of_x(ctx, x))


def g_prime_at_m(ctx: EquilibriumContext, x: float, m: float) -> float:
    """`g'(x)` given an already solved `m = m(x)`"""
    m_prime = m**2 / _delta_at_m(ctx, m)
    c = ctx.c
    return c * m**2 + 2.0 * c * x * m * m_prime - (1.0 - c) * m_prime


def g_prime(ctx: EquilibriumContext, x: float) -> float:
    """Derivative of `g = c x m^2 - (1 - c) m` through `m'(x) = m^2 / delta`"""
    return g_prime_at_m(ctx, x, m_of_x(ctx, x))


def detectability_threshold(ctx: EquilibriumContext) -> float:
    """`p_lim = 1 / g(b+)`"""
    return 1.0 / g_of_m(ctx, ctx.edge.m_b)


def isolated_count(ctx: EquilibriumContext, powers: list[float] | tuple[float, ...]) -> int:
    """Number of powers producing isolated eigenvalues"""
    p_lim = detectability_threshold(ctx)
    return sum(1 for power in powers if power > p_lim)


def spike_m(ctx: EquilibriumContext, p: float) -> float:
    """`m(rho)` for the spike of power `p`, i.e. the root of `p g(m) = 1` on `(m_b, 0)`"""
    p_lim = detectability_threshold(ctx)
    if not p > p_lim:
        raise SubcriticalPowerError(details={"p": p, "p_lim": p_lim})
    m_b = ctx.edge.m_b
    solver = ctx.solver

    upper = m_b / solver.bracket_expansion
    for _ in range(solver.max_iter):
        if p * g_of_m(ctx, upper) < 1.0:
            break
        upper /= solver.bracket_expansion
    else:
        raise BracketError(message="Could not bracket the spike location", details={"p": p})

    return scipy.optimize.brentq(
        lambda m: p * g_of_m(ctx, m) - 1.0,
        m_b,
        upper,
        xtol=solver.abs_tol * min(1.0, abs(upper)),
        maxiter=solver.max_iter,
    )


def spike_location(ctx: EquilibriumContext, p: float) -> float:
    """`rho`: the unique `x > b` with `p g(x) = 1`"""
    return x_of_m(ctx, spike_m(ctx, p))


def finite_horizon(
    source: ToeplitzCovariance | np.ndarray | NuQuadrature,
    c_t: float,
    *,
    solver: SolverConfig | None = None,
) -> EquilibriumContext:
    """Context for `(nu_T, c_T)`, `nu_T` being the eigenvalue measure of `R_T`"""
    if isinstance(source, NuQuadrature):
        nu = source
    elif isinstance(source, ToeplitzCovariance):
        nu = NuQuadrature.atoms(source.eigenvalues)
    else:
        nu = NuQuadrature.atoms(np.asarray(source))
    return EquilibriumContext(nu=nu, c=c_t, solver=solver or SolverConfig())


def _x_and_derivative(ctx: EquilibriumContext, m: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    nodes = ctx.nu.nodes
    frac = nodes[None, :] / (1.0 + ctx.c * m[:, None] * nodes[None, :])
    x = -1.0 / m + ctx.nu.integrate(frac)
    x_prime = 1.0 / m**2 - ctx.c * ctx.nu.integrate(frac**2)
    return x, x_prime


def _solve_complex(ctx: EquilibriumContext, z: np.ndarray, m: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Damped fixed point followed by Newton polishing, keeping `Im m > 0`"""
    solver = ctx.solver
    nodes = ctx.nu.nodes
    omega = np.ones(z.shape)
    prev_res = np.full(z.shape, np.inf)
    for _ in range(solver.max_iter // 4):
        integral = ctx.nu.integrate(nodes[None, :] / (1.0 + ctx.c * m[:, None] * nodes[None, :]))
        target = 1.0 / (-z + integral)
        res = np.abs(target - m)
        # Halve the damping where the residual grew.
        omega = np.where(res > prev_res, np.maximum(omega / 2, 1e-3), omega)
        prev_res = res
        m = (1.0 - omega) * m + omega * target
        m = m.real + 1j * np.maximum(m.imag, 1e-300)
        # Newton below takes over once the iterates settle.
        if np.all(res < np.sqrt(solver.abs_tol)):
            break

    for _ in range(solver.max_iter):
        x, x_prime = _x_and_derivative(ctx, m)
        res = np.abs(x - z)
        active = res > solver.abs_tol * np.maximum(1.0, np.abs(z))
        if not np.any(active):
            break
        step = np.where(active, (x - z) / x_prime, 0.0)
        new_m = m - step
        # Backtrack steps leaving the upper half plane.
        for _ in range(30):
            bad = new_m.imag <= 0
            if not np.any(bad):
                break
            step = np.where(bad, step / 2, step)
            new_m = m - step
        m = np.where(new_m.imag > 0, new_m, m)
    x, _ = _x_and_derivative(ctx, m)
    return m, np.abs(x - z)


def limiting_density(ctx: EquilibriumContext, grid: np.ndarray | list[float]) -> np.ndarray:
    """`f(x) ~ Im m(x + i eta) / pi` with `eta` continued down to `1e-6`"""
    points = np.asarray(grid, dtype=float)
    if np.any(points <= 0):
        raise DomainError(message="Density grid points must be positive")
    if ctx.c > 1:
        LOGGER.warning("Limiting density for c > 1 excludes the atom at zero", extra=dict(x_c=ctx.c))

    m = -1.0 / (points + 1j)
    residual = np.zeros(points.shape)
    for eta in np.logspace(0, np.log10(DENSITY_ETA), 7):
        z = points + 1j * eta
        m, residual = _solve_complex(ctx, z, m)

    tolerance = ctx.solver.x_tol * np.maximum(1.0, points)
    failed = residual > tolerance
    if np.any(failed):
        raise ConvergenceError(
            message="Stieltjes fixed point did not converge, reduce the damping or refine the grid",
            details={"failed_points": int(failed.sum()), "max_residual": float(residual.max())},
        )
    return m.imag / np.pi
