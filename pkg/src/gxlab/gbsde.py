"""Markovian backward-equation solver via the associated nonlinear PDE.

For terminal data phi(X_T) the first component of the solution triple is
u(t, X_t) where u solves, backward in time,

    du/dt + b u_x + f(t, u, sigma u_x)
          + 2 G( h u_x + 0.5 sigma^2 u_xx + g(t, u, sigma u_x) ) = 0,

discretized with centered differences and an explicit Euler step evaluated
at the later layer. The scheme is monotone when

    dt <= safety * dx^2 / (sigma2_max * max_x sigma(x)^2)   and
    dt * (L_f + 2 sigma2_max L_g + max|b|) <= 0.5,

which gives a discrete comparison principle, exact up to rounding, that the
comparison reports rely on. Edge nodes are linearly extended (zero second
difference) and carry no drift, so they stay frozen at the terminal data;
the wide default domain keeps their influence at the center below 1e-12.

The martingale-defect component K is recovered per volatility scenario as a
node-conditional residual: the increment of u along the scenario's two-point
transition, netted against the f and g integrals. Its predictable part is
dt * (rate * eta - 2G(eta)) <= 0 with eta the G-argument above, so each
extracted trajectory decreases up to interpolation error.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import exprlang
from .errors import (
    CflViolation,
    LipschitzBlowup,
    NonFiniteValue,
    ScenarioOutOfRange,
)
from .gcore import GBsdeProblem, UncertaintySet, twoG_array
from .gheat import DEFAULT_CFL_SAFETY, Grid1D, SolutionField, _store_indices

#: sup-norm growth beyond this multiple of the terminal data trips the guard
BLOWUP_FACTOR = 1e6


def monotone_dx_bound(gamma: UncertaintySet, lip: float, b_max: float,
                      h_max: float, sig_max: float, sig2_min_x: float) -> float:
    """Largest dx for which the centered scheme stays monotone.

    Derived from d(update)/d(u_{i+1}) >= 0 with the G-slope at its lower
    bound sigma2_min: dx * (|b| + L sigma + sigma2_min (|h| + L sigma))
    <= sigma2_min * min_x sigma^2.
    """
    denom = b_max + lip * sig_max + gamma.sigma2_min * (h_max + lip * sig_max)
    if denom <= 0.0:
        return math.inf
    return gamma.sigma2_min * sig2_min_x / denom


def _sup_on_probe(node, half_width: float, x0: float) -> float:
    probe = x0 + np.linspace(-half_width, half_width, 257)
    vals = np.abs(np.asarray(exprlang.evaluate(node, {"x": probe}), dtype=float))
    return float(vals.max())


def default_grid(problem: GBsdeProblem, x0: float = 0.0, nx: int = 513,
                 half_width: float | None = None,
                 cfl_safety: float = DEFAULT_CFL_SAFETY) -> Grid1D:
    """Grid sized for this problem: CFL, monotonicity bound, drift margin."""
    gamma = problem.gamma
    T = problem.horizon
    if half_width is None:
        half_width = 8.0 * gamma.sigma_max * math.sqrt(T)
    b_max = _sup_on_probe(problem.forward.b, half_width, x0)
    h_max = _sup_on_probe(problem.forward.h11, half_width, x0)
    sig_probe = x0 + np.linspace(-half_width, half_width, 257)
    sig_vals = np.abs(np.asarray(
        exprlang.evaluate(problem.forward.sigma, {"x": sig_probe}), dtype=float))
    sig_max = float(np.max(sig_vals))
    sig2_min_x = float(np.min(sig_vals) ** 2)
    half_width += (b_max + 2.0 * gamma.sigma2_max * h_max) * T

    lip = problem.generator.lipschitz_or_sample().padded
    dx_bound = monotone_dx_bound(gamma, lip, b_max, h_max, sig_max, sig2_min_x)
    dx = min(2.0 * half_width / (nx - 1), dx_bound)
    from .gheat import snap_down_pow2
    dx = snap_down_pow2(dx)
    half_cells = math.ceil(half_width / dx)
    dt_diff = cfl_safety * dx * dx / (gamma.sigma2_max * max(sig_max ** 2, 1e-300))
    dt_zeroth = 0.5 / max(lip + 2.0 * gamma.sigma2_max * lip + b_max, 1e-300)
    dt_max = min(dt_diff, dt_zeroth)
    nt = max(1, math.ceil(T / dt_max))
    return Grid1D(x0 - half_cells * dx, x0 + half_cells * dx,
                  2 * half_cells + 1, T / nt, nt)


@dataclass(frozen=True)
class GBsdeSolution:
    """Value field u, its gradient payoff Z = sigma u_x, and y0 = u(0, x0)."""

    problem: GBsdeProblem
    x0: float
    field: SolutionField
    z_values: np.ndarray  # same layer layout as field.values
    y0: float
    t_start: float = 0.0

    @property
    def grid(self) -> Grid1D:
        return self.field.grid

    def z_at(self, k: int, x: float) -> float:
        return float(np.interp(x, self.grid.xs(), self.z_values[k]))

    def y_at(self, k: int, x: float) -> float:
        return float(np.interp(x, self.grid.xs(), self.field.values[k]))


class _Marcher:
    """Precomputed coefficient arrays and one backward step."""

    def __init__(self, problem: GBsdeProblem, grid: Grid1D, t_start: float,
                 cfl_safety: float, rng=None):
        gamma = problem.gamma
        if gamma.kind != "interval":
            raise NonFiniteValue("PDE solver requires an interval uncertainty set")
        self.problem = problem
        self.grid = grid
        self.t_start = t_start
        self.gamma = gamma
        xs = grid.xs()
        self.xs = xs

        def coeff(node) -> np.ndarray:
            v = exprlang.evaluate(node, {"x": xs})
            return np.broadcast_to(np.asarray(v, dtype=float), xs.shape)

        self.b = coeff(problem.forward.b)
        self.h = coeff(problem.forward.h11)
        self.sig = coeff(problem.forward.sigma)
        self.sig2 = self.sig * self.sig

        lip = problem.generator.lipschitz_or_sample(rng=rng)
        self.lip = lip
        dx = grid.dx
        diff_bound = cfl_safety * dx * dx / (gamma.sigma2_max * float(self.sig2.max()))
        if grid.dt > diff_bound * (1 + 1e-12):
            raise CflViolation(
                f"dt={grid.dt:.3g} exceeds diffusion bound {diff_bound:.3g}")
        zeroth = grid.dt * (lip.padded + 2.0 * gamma.sigma2_max * lip.padded
                            + float(np.abs(self.b).max()))
        if zeroth > 0.5 * (1 + 1e-12):
            raise CflViolation(
                f"dt * zeroth-order coefficient = {zeroth:.3g} exceeds 0.5; "
                "refine dt or declare a smaller Lipschitz constant")
        # Peclet-type bound: centered first differences stay monotone only
        # while the worst-case diffusion sigma2_min * sigma^2 dominates the
        # advection from b and the z-sensitivity of f and g.
        dx_bound = monotone_dx_bound(
            gamma, lip.padded, float(np.abs(self.b).max()),
            float(np.abs(self.h).max()), float(np.abs(self.sig).max()),
            float(self.sig2.min()))
        if dx > dx_bound * (1 + 1e-12):
            raise CflViolation(
                f"dx={dx:.3g} exceeds monotonicity bound {dx_bound:.3g}; "
                "increase nx (advection-dominated grid would lose the "
                "comparison principle)")

        self.f = exprlang.compile_expr(problem.generator.f)
        self.g = exprlang.compile_expr(problem.generator.g11)
        self.inv_2dx = 1.0 / (2.0 * dx)
        self.inv_dx2 = 1.0 / (dx * dx)

    def terminal(self) -> np.ndarray:
        u = exprlang.evaluate(self.problem.terminal, {"x": self.xs})
        u = np.broadcast_to(np.asarray(u, dtype=float), self.xs.shape).astype(float)
        if not np.all(np.isfinite(u)):
            raise NonFiniteValue("terminal data is not finite on the grid")
        return u.copy()

    def step(self, u: np.ndarray, t_next: float) -> np.ndarray:
        """One backward Euler layer; edge nodes stay frozen."""
        dc = (u[2:] - u[:-2]) * self.inv_2dx
        d2 = (u[2:] + u[:-2] - 2.0 * u[1:-1]) * self.inv_dx2
        ui = u[1:-1]
        z = self.sig[1:-1] * dc
        env = {"t": t_next, "y": ui, "z": z}
        fv = self.f(env)
        gv = self.g(env)
        arg = self.h[1:-1] * dc + 0.5 * self.sig2[1:-1] * d2 + gv
        rhs = self.b[1:-1] * dc + fv + twoG_array(self.gamma, arg)
        out = u.copy()
        out[1:-1] = ui + self.grid.dt * rhs
        return out

    def z_layer(self, u: np.ndarray) -> np.ndarray:
        """Z = sigma u_x with one-sided differences at the edges."""
        z = np.empty_like(u)
        z[1:-1] = (u[2:] - u[:-2]) * self.inv_2dx
        z[0] = (u[1] - u[0]) / self.grid.dx
        z[-1] = (u[-1] - u[-2]) / self.grid.dx
        return self.sig * z


def solve_gbsde(problem: GBsdeProblem, x0: float = 0.0, grid: Grid1D | None = None,
                nx: int = 513, t_start: float = 0.0, full_storage: bool = False,
                max_layers: int = 65, cfl_safety: float = DEFAULT_CFL_SAFETY) -> GBsdeSolution:
    """Solve the backward problem; returns the value field, Z field and y0.

    Layer k of the stored field is time t_start + k dt (terminal layer
    last). ``full_storage`` keeps every layer, which scenario residual
    extraction requires.
    """
    if grid is None:
        grid = default_grid(problem, x0=x0, nx=nx)
    nt = max(1, round(problem.horizon / grid.dt))
    if abs(nt * grid.dt - problem.horizon) > 1e-9 * max(1.0, problem.horizon):
        raise CflViolation(
            f"grid horizon {grid.horizon:.6g} does not match problem horizon "
            f"{problem.horizon:.6g}")
    m = _Marcher(problem, grid, t_start, cfl_safety)

    u = m.terminal()
    blowup_cap = BLOWUP_FACTOR * (1.0 + float(np.abs(u).max()))
    store = _store_indices(nt, nt + 1 if full_storage else max_layers)
    values = np.empty((len(store), grid.nx))
    zvals = np.empty_like(values)
    ptr = len(store) - 1
    if store[ptr] == nt:
        values[ptr] = u
        zvals[ptr] = m.z_layer(u)
        ptr -= 1
    for k in range(nt - 1, -1, -1):
        u = m.step(u, t_start + (k + 1) * grid.dt)
        sup = float(np.abs(u).max())
        if not math.isfinite(sup):
            raise NonFiniteValue(f"non-finite layer at step {k}")
        if sup > blowup_cap:
            raise LipschitzBlowup(
                f"sup|u| = {sup:.3g} exceeds {blowup_cap:.3g}; generator growth "
                "is inconsistent with its declared Lipschitz constant")
        if ptr >= 0 and store[ptr] == k:
            values[ptr] = u
            zvals[ptr] = m.z_layer(u)
            ptr -= 1
    times = t_start + store * grid.dt
    field = SolutionField(grid, times, values)
    y0 = float(np.interp(x0, grid.xs(), values[0]))
    return GBsdeSolution(problem, x0, field, zvals, y0, t_start)


# --- scenario residuals -------------------------------------------------------

@dataclass(frozen=True)
class KTrajectory:
    """Cumulative martingale-defect residual along one volatility scenario."""

    scenario_id: str
    times: np.ndarray
    rates: np.ndarray
    values: np.ndarray

    @property
    def max_increment(self) -> float:
        return float(np.diff(self.values).max(initial=-np.inf))

    @property
    def final(self) -> float:
        return float(self.values[-1])


def _quad_interp(u: np.ndarray, grid: Grid1D, xq: float) -> float:
    """Three-point (quadratic) interpolation at xq.

    Linear interpolation carries an O(dx^2 u_xx) one-sided bias that would
    masquerade as a K increment; the quadratic stencil is exact on parabolas
    and keeps the residual at the noise level the tolerance assumes.
    """
    i = min(max(int(round((xq - grid.x_min) / grid.dx)), 1), grid.nx - 2)
    s = (xq - (grid.x_min + i * grid.dx)) / grid.dx
    return float(u[i] + 0.5 * s * (u[i + 1] - u[i - 1])
                 + 0.5 * s * s * (u[i + 1] - 2.0 * u[i] + u[i - 1]))


def _scenario_rates(scenario, nt: int, dt: float, t_start: float,
                    gamma: UncertaintySet) -> np.ndarray:
    if isinstance(scenario, str):
        raise ValueError("named scenarios are resolved by extract_k; pass rates")
    if callable(scenario):
        rates = np.array([float(scenario(t_start + k * dt)) for k in range(nt)])
    else:
        arr = np.asarray(scenario, dtype=float)
        rates = np.full(nt, float(arr)) if arr.ndim == 0 else arr
    if rates.shape != (nt,):
        raise ValueError(f"scenario must provide {nt} rates, got shape {rates.shape}")
    if rates.min() < gamma.sigma2_min - 1e-12 or rates.max() > gamma.sigma2_max + 1e-12:
        raise ScenarioOutOfRange(
            f"scenario rates must lie in [{gamma.sigma2_min}, {gamma.sigma2_max}]")
    return rates


def extract_k(problem: GBsdeProblem, solution: GBsdeSolution, scenario,
              scenario_id: str = "scenario") -> KTrajectory:
    """Accumulate the K residual along a piecewise-constant variance scenario.

    ``scenario`` is a constant, an array of per-step rates, a callable of
    time, or the string "worst" (greedy argmax of the G-term along the
    path). The coin-flip part of the transition is averaged out nodewise, so
    the trajectory is the predictable residual, which decreases whenever the
    scenario is suboptimal and vanishes along the worst case.
    """
    grid = solution.grid
    nt = grid.nt
    if len(solution.field.times) != nt + 1:
        raise ValueError("extract_k needs a solution solved with full_storage=True")
    m = _Marcher(problem, grid, solution.t_start, cfl_safety=1.0)  # already solved
    xs = grid.xs()
    dt = grid.dt
    gamma = problem.gamma

    greedy = isinstance(scenario, str) and scenario == "worst"
    rates = None if greedy else _scenario_rates(scenario, nt, dt, solution.t_start, gamma)

    x = solution.x0
    k_val = 0.0
    out = np.zeros(nt + 1)
    used = np.empty(nt)
    u_all = solution.field.values
    for k in range(nt):
        t_k = solution.t_start + k * dt
        u_k = u_all[k]
        u_next = u_all[k + 1]
        y = _quad_interp(u_k, grid, x)
        # local gradient and curvature at the current state
        i = min(max(int(round((x - grid.x_min) / grid.dx)), 1), grid.nx - 2)
        dc = (u_k[i + 1] - u_k[i - 1]) * m.inv_2dx
        d2 = (u_k[i + 1] + u_k[i - 1] - 2.0 * u_k[i]) * m.inv_dx2
        b = float(np.interp(x, xs, m.b))
        h = float(np.interp(x, xs, m.h))
        sig = float(np.interp(x, xs, m.sig))
        z = sig * dc
        env = {"t": t_k, "y": y, "z": z}
        fv = float(m.f(env))
        gv = float(m.g(env))
        eta = h * dc + 0.5 * sig * sig * d2 + gv
        if greedy:
            rate = gamma.sigma2_max if eta >= 0 else gamma.sigma2_min
        else:
            rate = float(rates[k])
        used[k] = rate
        drift = (b + h * rate) * dt
        spread = sig * math.sqrt(rate * dt)
        e_next = 0.5 * (_quad_interp(u_next, grid, x + drift + spread)
                        + _quad_interp(u_next, grid, x + drift - spread))
        k_val += e_next - y + dt * fv + rate * dt * gv
        out[k + 1] = k_val
        x += drift
    times = solution.t_start + np.arange(nt + 1) * dt
    return KTrajectory(scenario_id, times, used, out)


def k_tolerance(grid: Grid1D, factor: float = 10.0) -> float:
    """Tolerance for the decrease of K: interpolation noise of one step."""
    return factor * grid.dt * grid.dx


# --- comparison reports ---------------------------------------------------------

@dataclass(frozen=True)
class ComparisonRow:
    terminal_id: str
    violations: int
    worst_gap: float
    witness: tuple | None


@dataclass(frozen=True)
class ComparisonReport:
    rows: tuple[ComparisonRow, ...]
    tolerance: float

    @property
    def total_violations(self) -> int:
        return sum(r.violations for r in self.rows)


def comparison_tolerance(grid: Grid1D, scale: float = 1.0) -> float:
    """tau for order checks: base noise plus twice a truncation estimate."""
    return 1e-6 + 2.0 * scale * (grid.dt + grid.dx * grid.dx)


def compare_solutions(problem1: GBsdeProblem, problem2: GBsdeProblem,
                      terminals: Sequence[tuple[str, object]],
                      grid: Grid1D | None = None, x0: float = 0.0, nx: int = 257,
                      tolerance: float | None = None) -> ComparisonReport:
    """Scan for order violations u1 < u2 - tau across shared terminal data.

    Both problems must share the uncertainty set, forward coefficients and
    horizon; each listed terminal expression is solved under both
    generators and compared node by node on the stored layers.
    """
    if problem1.gamma != problem2.gamma:
        raise ValueError("problems must share the uncertainty set")
    if problem1.horizon != problem2.horizon:
        raise ValueError("problems must share the horizon")
    if grid is None:
        g1 = default_grid(problem1, x0=x0, nx=nx)
        g2 = default_grid(problem2, x0=x0, nx=nx)
        # shared grid: finer spacing and time step of the two
        dx = min(g1.dx, g2.dx)
        width = max(x0 - g1.x_min, x0 - g2.x_min)
        half_cells = math.ceil(width / dx - 1e-9)
        dt = min(g1.dt, g2.dt)
        nt = max(1, math.ceil(problem1.horizon / dt - 1e-9))
        grid = Grid1D(x0 - half_cells * dx, x0 + half_cells * dx,
                      2 * half_cells + 1, problem1.horizon / nt, nt)
    tau = comparison_tolerance(grid) if tolerance is None else tolerance
    rows = []
    for tid, expr in terminals:
        node = expr if not isinstance(expr, str) else exprlang.parse(expr)
        p1 = _with_terminal(problem1, node)
        p2 = _with_terminal(problem2, node)
        s1 = solve_gbsde(p1, x0=x0, grid=grid)
        s2 = solve_gbsde(p2, x0=x0, grid=grid)
        gap = s2.field.values - s1.field.values
        mask = gap > tau
        count = int(mask.sum())
        worst = float(gap.max())
        witness = None
        if count:
            k, i = np.unravel_index(int(np.argmax(gap)), gap.shape)
            witness = (float(s1.field.times[k]), float(grid.xs()[i]))
        rows.append(ComparisonRow(tid, count, worst, witness))
    return ComparisonReport(tuple(rows), tau)


def _with_terminal(problem: GBsdeProblem, terminal) -> GBsdeProblem:
    return GBsdeProblem(problem.forward, problem.generator, terminal,
                        problem.horizon, problem.gamma)
