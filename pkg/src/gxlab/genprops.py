"""Generator-level predicates and their expectation-level consequences.

A generator pair (f, g) induces a nonlinear expectation through its backward
equation. Pointwise identities on (f, g) are equivalent to structural
properties of that expectation:

  translation   f(t,y,z) - f(t,y',z) + 2G(g(t,y,z) - g(t,y',z)) = 0
                  <=>  constants added to the data pass through;
  subadd        f(t,y+y',z+z') - f - f' + 2G(g(..) - g - g') <= 0
                  <=>  the expectation is sub-additive;
  convex        the lambda-mixture inequality  <=>  convexity;
  poshom        f(t,Ly,Lz) - L f = 2G(L g - g(L.)) = -2G(g(L.) - L g)
                  <=>  positive homogeneity;
  converse-gap  f2 - f1 + 2G(g2 - g1) <= 0
                  <=>  solution order for every terminal datum.

The predicates are exact expression arithmetic on small grids (tolerance
1e-10). The crosscheck harness drives both directions through the PDE
solver: holding predicates must reproduce the expectation-level property
within solver tolerance, and failing ones must yield a constructed
counterexample, including the small-horizon probe payoff

    y + <z, h> (qv increment) + z (state increment),   <z, h> = -g1(t,y,z),

whose slope separates the two expectations by exactly the gap.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import exprlang
from .errors import DimensionMismatch, InconclusiveTolerance
from .exprlang import Bin, Const, Node
from .gbsde import default_grid, solve_gbsde
from .gcore import ForwardSpec, GBsdeProblem, GeneratorSpec, UncertaintySet, twoG, twoG_array
from .representation import GridPolicy, ReprCase, SlopeEstimate, slope_estimate

PREDICATES = ("translation", "subadd", "convex", "poshom", "converse-gap")

#: predicates are pure arithmetic, so the pass tolerance can sit just above
#: rounding noise
PREDICATE_TOL = 1e-10


@dataclass(frozen=True)
class PredicateGrid:
    """Sample points for predicate evaluation."""

    ts: tuple[float, ...] = (0.0, 0.25, 0.5, 0.75)
    ys: tuple[float, ...] = (-2.0, -1.0, 0.0, 1.0, 2.0)
    zs: tuple[float, ...] = (-2.0, -1.0, -0.5, 0.0, 0.5, 1.0, 2.0)
    lambdas_unit: tuple[float, ...] = (0.0, 0.25, 0.5, 0.75, 1.0)
    lambdas_pos: tuple[float, ...] = (0.0, 0.5, 1.0, 2.0, 5.0)

    def describe(self, lambdas: tuple[float, ...] | None = None) -> str:
        parts = [f"t in {self.ts}", f"y in {self.ys}", f"z in {self.zs}"]
        if lambdas is not None:
            parts.append(f"lambda in {lambdas}")
        return "; ".join(parts)


@dataclass(frozen=True)
class PredicateReport:
    predicate: str
    sample_grid: str
    worst_violation: float
    witness: tuple | None
    verdict: str  # "holds" | "fails"

    def __post_init__(self):
        if self.verdict not in ("holds", "fails"):
            raise ValueError(f"bad verdict {self.verdict!r}")
        if (self.witness is not None) != (self.verdict == "fails"):
            raise ValueError("witness must be present exactly when the predicate fails")

    @property
    def holds(self) -> bool:
        return self.verdict == "holds"


def _require_interval(gamma: UncertaintySet) -> None:
    if gamma.kind != "interval":
        raise DimensionMismatch("predicate grids require an interval uncertainty set")


def converse_gap(gen1: GeneratorSpec, gen2: GeneratorSpec, gamma: UncertaintySet,
                 t: float, y: float, z: float) -> float:
    """f2 - f1 + 2G(g2 - g1) at one point; <= 0 is the comparison condition."""
    if gen1.dim != gen2.dim:
        raise DimensionMismatch("generators have different dimensions")
    env = {"t": t, "y": y, "z": z}
    df = exprlang.evaluate(gen2.f, env) - exprlang.evaluate(gen1.f, env)
    if gen1.dim == 1:
        dg = exprlang.evaluate(gen2.g11, env) - exprlang.evaluate(gen1.g11, env)
        return df + twoG(gamma, dg)
    dg = np.array([[exprlang.evaluate(gen2.g[i][j], env)
                    - exprlang.evaluate(gen1.g[i][j], env)
                    for j in range(gen1.dim)] for i in range(gen1.dim)])
    return df + twoG(gamma, dg)


def _report(predicate: str, grid_desc: str, values: np.ndarray, points,
            absolute: bool) -> PredicateReport:
    """Reduce pointwise predicate values to a report.

    ``absolute`` predicates must vanish (violation = |value|); inequality
    predicates must be <= 0 (violation = positive part).
    """
    viol = np.abs(values) if absolute else np.maximum(values, 0.0)
    worst = float(viol.max())
    if worst <= PREDICATE_TOL:
        return PredicateReport(predicate, grid_desc, worst, None, "holds")
    k = int(np.argmax(viol))
    witness = tuple(float(p.reshape(-1)[k]) for p in points)
    return PredicateReport(predicate, grid_desc, worst, witness, "fails")


def check_translation(gen: GeneratorSpec, gamma: UncertaintySet,
                      grid: PredicateGrid | None = None) -> PredicateReport:
    """Invariance in y: f and the G-weighted g jointly ignore level shifts."""
    _require_interval(gamma)
    grid = grid or PredicateGrid()
    t, y, yp, z = np.meshgrid(grid.ts, grid.ys, grid.ys, grid.zs, indexing="ij")
    f = exprlang.compile_expr(gen.f)
    g = exprlang.compile_expr(gen.g11)
    lhs = (f({"t": t, "y": y, "z": z}) - f({"t": t, "y": yp, "z": z})
           + twoG_array(gamma, g({"t": t, "y": y, "z": z}) - g({"t": t, "y": yp, "z": z})))
    return _report("translation", grid.describe(), np.asarray(lhs), (t, y, yp, z), absolute=True)


def check_subadditivity(gen: GeneratorSpec, gamma: UncertaintySet,
                        grid: PredicateGrid | None = None) -> PredicateReport:
    _require_interval(gamma)
    grid = grid or PredicateGrid()
    t, y, yp, z, zp = np.meshgrid(grid.ts, grid.ys, grid.ys, grid.zs, grid.zs, indexing="ij")
    f = exprlang.compile_expr(gen.f)
    g = exprlang.compile_expr(gen.g11)
    lhs = (f({"t": t, "y": y + yp, "z": z + zp})
           - f({"t": t, "y": y, "z": z}) - f({"t": t, "y": yp, "z": zp})
           + twoG_array(gamma, g({"t": t, "y": y + yp, "z": z + zp})
                        - g({"t": t, "y": y, "z": z}) - g({"t": t, "y": yp, "z": zp})))
    return _report("subadd", grid.describe(), np.asarray(lhs), (t, y, yp, z, zp), absolute=False)


def check_convexity(gen: GeneratorSpec, gamma: UncertaintySet,
                    grid: PredicateGrid | None = None) -> PredicateReport:
    _require_interval(gamma)
    grid = grid or PredicateGrid()
    lam, t, y, yp, z, zp = np.meshgrid(grid.lambdas_unit, grid.ts, grid.ys, grid.ys,
                                       grid.zs, grid.zs, indexing="ij")
    f = exprlang.compile_expr(gen.f)
    g = exprlang.compile_expr(gen.g11)
    ym = lam * y + (1.0 - lam) * yp
    zm = lam * z + (1.0 - lam) * zp
    lhs = (f({"t": t, "y": ym, "z": zm})
           - lam * f({"t": t, "y": y, "z": z}) - (1.0 - lam) * f({"t": t, "y": yp, "z": zp})
           + twoG_array(gamma, g({"t": t, "y": ym, "z": zm})
                        - lam * g({"t": t, "y": y, "z": z})
                        - (1.0 - lam) * g({"t": t, "y": yp, "z": zp})))
    return _report("convex", grid.describe(grid.lambdas_unit), np.asarray(lhs),
                   (lam, t, y, yp, z, zp), absolute=False)


def check_positive_homogeneity(gen: GeneratorSpec, gamma: UncertaintySet,
                               grid: PredicateGrid | None = None) -> PredicateReport:
    """Scaling identity, checked in both of its equivalent G-signed forms."""
    _require_interval(gamma)
    grid = grid or PredicateGrid()
    lam, t, y, z = np.meshgrid(grid.lambdas_pos, grid.ts, grid.ys, grid.zs, indexing="ij")
    f = exprlang.compile_expr(gen.f)
    g = exprlang.compile_expr(gen.g11)
    df = f({"t": t, "y": lam * y, "z": lam * z}) - lam * f({"t": t, "y": y, "z": z})
    dg = lam * g({"t": t, "y": y, "z": z}) - g({"t": t, "y": lam * y, "z": lam * z})
    gap1 = df - twoG_array(gamma, dg)
    gap2 = df + twoG_array(gamma, -dg)
    lhs = np.maximum(np.abs(gap1), np.abs(gap2))
    return _report("poshom", grid.describe(grid.lambdas_pos), np.asarray(lhs),
                   (lam, t, y, z), absolute=True)


def check_converse_gap(gen1: GeneratorSpec, gen2: GeneratorSpec, gamma: UncertaintySet,
                       grid: PredicateGrid | None = None) -> PredicateReport:
    """Comparison condition for the pair: gap <= 0 everywhere on the grid."""
    _require_interval(gamma)
    grid = grid or PredicateGrid()
    t, y, z = np.meshgrid(grid.ts, grid.ys, grid.zs, indexing="ij")
    f1 = exprlang.compile_expr(gen1.f)
    f2 = exprlang.compile_expr(gen2.f)
    g1 = exprlang.compile_expr(gen1.g11)
    g2 = exprlang.compile_expr(gen2.g11)
    env = {"t": t, "y": y, "z": z}
    lhs = f2(env) - f1(env) + twoG_array(gamma, g2(env) - g1(env))
    return _report("converse-gap", grid.describe(), np.asarray(lhs), (t, y, z), absolute=False)


def check_predicate(name: str, gen: GeneratorSpec, gamma: UncertaintySet,
                    grid: PredicateGrid | None = None,
                    gen2: GeneratorSpec | None = None) -> PredicateReport:
    if name == "translation":
        return check_translation(gen, gamma, grid)
    if name == "subadd":
        return check_subadditivity(gen, gamma, grid)
    if name == "convex":
        return check_convexity(gen, gamma, grid)
    if name == "poshom":
        return check_positive_homogeneity(gen, gamma, grid)
    if name == "converse-gap":
        if gen2 is None:
            raise ValueError("converse-gap needs a second generator")
        return check_converse_gap(gen, gen2, gamma, grid)
    raise ValueError(f"unknown predicate {name!r}; known: {PREDICATES}")


def y_dependence_gap(gen: GeneratorSpec, grid: PredicateGrid | None = None) -> float:
    """max |f(t,y,z) - f(t,0,z)| + |g(t,y,z) - g(t,0,z)| over the grid.

    For a strictly non-degenerate interval this vanishes exactly when the
    translation predicate holds (the G-band collapses only at 0).
    """
    grid = grid or PredicateGrid()
    t, y, z = np.meshgrid(grid.ts, grid.ys, grid.zs, indexing="ij")
    f = exprlang.compile_expr(gen.f)
    g = exprlang.compile_expr(gen.g11)
    gap = (np.abs(f({"t": t, "y": y, "z": z}) - f({"t": t, "y": 0.0, "z": z}))
           + np.abs(g({"t": t, "y": y, "z": z}) - g({"t": t, "y": 0.0, "z": z})))
    return float(np.asarray(gap).max())


def degenerate_pair(g0: Node | str, gamma: UncertaintySet) -> GeneratorSpec:
    """The classical-case family f = -2G(1) g0 paired with g = g0.

    With sigma2_min = sigma2_max the G-band is a line and this pair
    satisfies the translation identity for any base expression g0.
    """
    node = g0 if not isinstance(g0, str) else exprlang.parse(g0)
    scale = twoG(gamma, 1.0)
    f = Bin("*", Const(-scale), node)
    return GeneratorSpec(f, ((node,),))


# --- expectation-level crosschecks ---------------------------------------------

#: solver tolerance for properties the scheme preserves exactly
CROSSCHECK_TOL = 1e-6


def _plus(a: Node, b: Node) -> Node:
    return Bin("+", a, b)


def _scaled(lam: float, a: Node) -> Node:
    return Bin("*", Const(float(lam)), a)


def _as_node(e) -> Node:
    return e if not isinstance(e, str) else exprlang.parse(e)


@dataclass(frozen=True)
class CrosscheckRow:
    label: str
    value: float  # signed defect; see each harness for its meaning


@dataclass(frozen=True)
class CrosscheckReport:
    predicate: str
    rows: tuple[CrosscheckRow, ...]
    tolerance: float

    @property
    def worst(self) -> float:
        return max((r.value for r in self.rows), default=0.0)

    @property
    def holds(self) -> bool:
        return self.worst <= self.tolerance

    def row(self, label: str) -> CrosscheckRow:
        for r in self.rows:
            if r.label == label:
                return r
        raise KeyError(label)


def _std_problem(gen: GeneratorSpec, gamma: UncertaintySet, terminal: Node,
                 horizon: float) -> GBsdeProblem:
    return GBsdeProblem(ForwardSpec.make(), gen, terminal, horizon, gamma)


def _y0(gen: GeneratorSpec, gamma: UncertaintySet, terminal: Node, horizon: float,
        grid) -> float:
    problem = _std_problem(gen, gamma, terminal, horizon)
    return solve_gbsde(problem, x0=0.0, grid=grid, max_layers=2).y0


def _shared_grid(gen: GeneratorSpec, gamma: UncertaintySet, horizon: float, nx: int):
    return default_grid(_std_problem(gen, gamma, Const(0.0), horizon), x0=0.0, nx=nx)


def crosscheck_translation(gen: GeneratorSpec, gamma: UncertaintySet,
                           payoffs: Sequence, constants: Sequence[float] = (-1.0, 0.5, 2.0),
                           horizon: float = 1.0, nx: int = 257,
                           tolerance: float = CROSSCHECK_TOL) -> CrosscheckReport:
    """rows: |y0(phi + c) - y0(phi) - c| per payoff and constant."""
    grid = _shared_grid(gen, gamma, horizon, nx)
    rows = []
    for k, payoff in enumerate(payoffs):
        node = _as_node(payoff)
        base = _y0(gen, gamma, node, horizon, grid)
        for c in constants:
            shifted = _y0(gen, gamma, _plus(node, Const(float(c))), horizon, grid)
            rows.append(CrosscheckRow(f"payoff{k}/c={c:g}", abs(shifted - base - c)))
    return CrosscheckReport("translation", tuple(rows), tolerance)


def crosscheck_subadditivity(gen: GeneratorSpec, gamma: UncertaintySet,
                             pairs: Sequence[tuple], horizon: float = 1.0, nx: int = 257,
                             tolerance: float = CROSSCHECK_TOL) -> CrosscheckReport:
    """rows: y0(phi1 + phi2) - y0(phi1) - y0(phi2); positive = violation."""
    grid = _shared_grid(gen, gamma, horizon, nx)
    rows = []
    for k, (a, b) in enumerate(pairs):
        na, nb = _as_node(a), _as_node(b)
        excess = (_y0(gen, gamma, _plus(na, nb), horizon, grid)
                  - _y0(gen, gamma, na, horizon, grid)
                  - _y0(gen, gamma, nb, horizon, grid))
        rows.append(CrosscheckRow(f"pair{k}", excess))
    return CrosscheckReport("subadd", tuple(rows), tolerance)


def crosscheck_convexity(gen: GeneratorSpec, gamma: UncertaintySet,
                         pairs: Sequence[tuple], lambdas: Sequence[float] = (0.25, 0.5, 0.75),
                         horizon: float = 1.0, nx: int = 257,
                         tolerance: float = CROSSCHECK_TOL) -> CrosscheckReport:
    """rows: y0(mix) - mix of y0; positive = violation of convexity."""
    grid = _shared_grid(gen, gamma, horizon, nx)
    rows = []
    for k, (a, b) in enumerate(pairs):
        na, nb = _as_node(a), _as_node(b)
        ya = _y0(gen, gamma, na, horizon, grid)
        yb = _y0(gen, gamma, nb, horizon, grid)
        for lam in lambdas:
            mix = _plus(_scaled(lam, na), _scaled(1.0 - lam, nb))
            excess = _y0(gen, gamma, mix, horizon, grid) - (lam * ya + (1.0 - lam) * yb)
            rows.append(CrosscheckRow(f"pair{k}/lam={lam:g}", excess))
    return CrosscheckReport("convex", tuple(rows), tolerance)


def crosscheck_homogeneity(gen: GeneratorSpec, gamma: UncertaintySet,
                           payoffs: Sequence, lambdas: Sequence[float] = (0.5, 2.0),
                           horizon: float = 1.0, nx: int = 257,
                           tolerance: float = CROSSCHECK_TOL) -> CrosscheckReport:
    """rows: |y0(lam phi) - lam y0(phi)| per payoff and scale."""
    grid = _shared_grid(gen, gamma, horizon, nx)
    rows = []
    for k, payoff in enumerate(payoffs):
        node = _as_node(payoff)
        base = _y0(gen, gamma, node, horizon, grid)
        for lam in lambdas:
            scaled = _y0(gen, gamma, _scaled(lam, node), horizon, grid)
            rows.append(CrosscheckRow(f"payoff{k}/lam={lam:g}", abs(scaled - lam * base)))
    return CrosscheckReport("poshom", tuple(rows), tolerance)


# --- converse witness -----------------------------------------------------------

@dataclass(frozen=True)
class ConverseWitness:
    """Both slopes of the constructed probe payoff, against the exact gap."""

    point: tuple[float, float, float]  # (t, y, z)
    gap: float
    slope1: SlopeEstimate
    slope2: SlopeEstimate

    @property
    def slope_difference(self) -> float:
        return self.slope2.fitted_limit - self.slope1.fitted_limit

    @property
    def rel_err(self) -> float:
        return abs(self.slope_difference - self.gap) / max(abs(self.gap), 1e-12)

    @property
    def exhibits_violation(self) -> bool:
        """True when the probe separates the expectations the wrong way."""
        return self.slope_difference > 0


def converse_witness(gen1: GeneratorSpec, gen2: GeneratorSpec, gamma: UncertaintySet,
                     point: tuple[float, float, float],
                     eps_grid: tuple[float, ...] = (0.2, 0.1, 0.05, 0.025, 0.0125),
                     horizon: float = 1.0,
                     policy: GridPolicy | None = None) -> ConverseWitness:
    """Construct the probe payoff at ``point`` and measure both slopes.

    The quadratic-variation loading is chosen so the first generator's g is
    cancelled, making slope1 = f1 and slope2 = f2 + 2G(g2 - g1); their
    difference estimates the gap. Raises InconclusiveTolerance when the gap
    is smaller than the fit noise, in which case no verdict is possible at
    this resolution.
    """
    t, y, z = point
    if abs(z) < 1e-9:
        raise ValueError("the probe construction needs z != 0 to load the qv term")
    gap = converse_gap(gen1, gen2, gamma, t, y, z)
    g1_val = exprlang.evaluate(gen1.g11, {"t": t, "y": y, "z": z})
    h_const = -g1_val / z
    forward = ForwardSpec(Const(0.0), ((Const(float(h_const)),),), Const(1.0))

    estimates = []
    for gen in (gen1, gen2):
        case = ReprCase(forward, gen, gamma, t=t, x=0.0, y=y, p=z,
                        eps_grid=eps_grid, horizon=horizon)
        estimates.append(slope_estimate(case, policy))
    noise = 2.0 * (estimates[0].fit_residual + estimates[1].fit_residual) + 1e-6
    if abs(gap) <= noise:
        raise InconclusiveTolerance(
            f"|gap| = {abs(gap):.3g} is below the solver noise estimate {noise:.3g}")
    return ConverseWitness((t, y, z), gap, estimates[0], estimates[1])
