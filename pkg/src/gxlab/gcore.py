"""Variance-uncertainty sets, the sublinear function G, and problem specs.

G is the support function of a set of admissible variance rates: for a 1-d
interval [s2_min, s2_max] it has the closed form

    G(a) = (s2_max * a+  -  s2_min * a-) / 2,

and for a finite family of PSD matrices it is half the max of tr[gamma A].
Everything here is immutable and pure.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from . import exprlang
from .errors import ConfigError, DimensionMismatch, ExprError
from .exprlang import LipschitzEstimate, Node, declared_lipschitz, estimate_lipschitz

#: eigenvalue tolerance for PSD / Loewner checks
EIG_TOL = 1e-10


# --- uncertainty sets --------------------------------------------------------

@dataclass(frozen=True)
class UncertaintySet:
    """The set of admissible variance rates defining G.

    kind "interval": scalar variances in [sigma2_min, sigma2_max] (dim 1).
    kind "matrix_family": finitely many symmetric PSD d x d matrices, each
    bounded below by sigma2_min * I.
    """

    kind: str
    sigma2_min: float
    sigma2_max: float
    dim: int = 1
    matrices: tuple = ()

    def __post_init__(self):
        if self.kind == "interval":
            if not (0.0 < self.sigma2_min <= self.sigma2_max):
                raise ConfigError(
                    "gamma.sigma2_min",
                    "need 0 < sigma2_min <= sigma2_max (non-degeneracy)",
                )
            if self.dim != 1:
                raise ConfigError("gamma.dim", "interval sets are one-dimensional")
        elif self.kind == "matrix_family":
            if not self.matrices:
                raise ConfigError("gamma.matrices", "family must be non-empty")
            if self.sigma2_min <= 0.0:
                raise ConfigError(
                    "gamma.sigma2_min", "need sigma2_min > 0 (non-degeneracy)"
                )
            for k, m in enumerate(self.matrices):
                arr = np.asarray(m, dtype=float)
                if arr.shape != (self.dim, self.dim):
                    raise ConfigError(f"gamma.matrices[{k}]", f"expected shape {(self.dim, self.dim)}")
                if not np.allclose(arr, arr.T, atol=EIG_TOL):
                    raise ConfigError(f"gamma.matrices[{k}]", "matrix must be symmetric")
                lo = np.linalg.eigvalsh(arr).min()
                if lo < self.sigma2_min - EIG_TOL:
                    raise ConfigError(
                        f"gamma.matrices[{k}]",
                        f"smallest eigenvalue {lo:.3g} below sigma2_min (non-degeneracy)",
                    )
        else:
            raise ConfigError("gamma.kind", f"unknown kind {self.kind!r}")

    @staticmethod
    def interval(sigma2_min: float, sigma2_max: float) -> "UncertaintySet":
        return UncertaintySet("interval", float(sigma2_min), float(sigma2_max))

    @staticmethod
    def matrix_family(matrices: Iterable, sigma2_min: float) -> "UncertaintySet":
        mats = tuple(tuple(map(tuple, np.asarray(m, dtype=float))) for m in matrices)
        dim = len(mats[0])
        arrs = [np.asarray(m, dtype=float) for m in mats]
        s2max = max(float(np.linalg.eigvalsh(a).max()) for a in arrs)
        return UncertaintySet("matrix_family", float(sigma2_min), s2max, dim, mats)

    @property
    def sigma_max(self) -> float:
        return float(np.sqrt(self.sigma2_max))

    @property
    def is_degenerate_interval(self) -> bool:
        return self.kind == "interval" and self.sigma2_min == self.sigma2_max


def g_value(gamma: UncertaintySet, a) -> float:
    """G(a): half the worst-case variance-weighted trace.

    1-d interval: (s2_max * a+ - s2_min * a-) / 2 exactly. Matrix family:
    0.5 * max over the family of tr[gamma a].
    """
    if gamma.kind == "interval":
        arr = np.asarray(a, dtype=float)
        if arr.size != 1:
            raise DimensionMismatch("interval G takes a scalar argument")
        alpha = float(arr.reshape(()))
        return 0.5 * (gamma.sigma2_max * max(alpha, 0.0) - gamma.sigma2_min * max(-alpha, 0.0))
    arr = np.asarray(a, dtype=float)
    if arr.shape != (gamma.dim, gamma.dim):
        raise DimensionMismatch(f"expected {(gamma.dim, gamma.dim)} matrix, got shape {arr.shape}")
    if not np.allclose(arr, arr.T, atol=EIG_TOL):
        raise DimensionMismatch("argument of G must be symmetric")
    best = max(float(np.trace(np.asarray(m, dtype=float) @ arr)) for m in gamma.matrices)
    return 0.5 * best


def g_value_array(gamma: UncertaintySet, alpha: np.ndarray) -> np.ndarray:
    """Vectorized 1-d ``g_value`` over an array of scalar arguments."""
    if gamma.kind != "interval":
        raise DimensionMismatch("array form of G needs an interval uncertainty set")
    pos = np.maximum(alpha, 0.0)
    neg = np.maximum(-alpha, 0.0)
    return 0.5 * (gamma.sigma2_max * pos - gamma.sigma2_min * neg)


def twoG(gamma: UncertaintySet, a) -> float:
    """2 G(a), the combination the generator identities are written in."""
    return 2.0 * g_value(gamma, a)


def twoG_array(gamma: UncertaintySet, alpha: np.ndarray) -> np.ndarray:
    return 2.0 * g_value_array(gamma, alpha)


# --- coefficient specs --------------------------------------------------------

def _as_expr(e) -> Node:
    return e if not isinstance(e, str) else exprlang.parse(e)


@dataclass(frozen=True)
class GeneratorSpec:
    """The pair (f, g) driving a backward equation, over variables (t, y, z).

    ``g`` is stored as a symmetric d x d grid of expressions; the scalar case
    d = 1 (the only one the PDE solver accepts) exposes it via ``g11``.
    """

    f: Node
    g: tuple[tuple[Node, ...], ...]
    lipschitz: LipschitzEstimate | None = None

    def __post_init__(self):
        d = len(self.g)
        for row in self.g:
            if len(row) != d:
                raise ConfigError("generator.g", "g must be a square grid of expressions")
        for i in range(d):
            for j in range(d):
                if self.g[i][j] != self.g[j][i]:
                    raise ConfigError("generator.g", f"g[{i}][{j}] != g[{j}][{i}] (must be symmetric)")
        for name, node in (("generator.f", self.f), *(
            (f"generator.g[{i}][{j}]", self.g[i][j]) for i in range(d) for j in range(d)
        )):
            bad = exprlang.free_variables(node) - {"t", "y", "z"}
            if bad:
                raise ConfigError(name, f"only t, y, z allowed; found {sorted(bad)}")

    @staticmethod
    def make(f, g, lipschitz: float | None = None) -> "GeneratorSpec":
        if isinstance(g, (list, tuple)):
            grid = tuple(tuple(_as_expr(e) for e in row) for row in g)
        else:
            grid = ((_as_expr(g),),)
        lip = declared_lipschitz(lipschitz) if lipschitz is not None else None
        return GeneratorSpec(_as_expr(f), grid, lip)

    @property
    def dim(self) -> int:
        return len(self.g)

    @property
    def g11(self) -> Node:
        if self.dim != 1:
            raise DimensionMismatch("scalar generator requested but d > 1")
        return self.g[0][0]

    def lipschitz_or_sample(self, rng: np.random.Generator | None = None) -> LipschitzEstimate:
        if self.lipschitz is not None:
            return self.lipschitz
        rng = rng if rng is not None else np.random.default_rng(0)
        lf = estimate_lipschitz(self.f, rng=rng)
        lg = max(
            (estimate_lipschitz(self.g[i][j], rng=rng).constant
             for i in range(self.dim) for j in range(self.dim)),
            default=0.0,
        )
        return LipschitzEstimate(lf.constant + lg, "sampled", lf.sample_count)


@dataclass(frozen=True)
class ForwardSpec:
    """Coefficients (b, h, sigma) of the controlled forward state, over x."""

    b: Node
    h: tuple[tuple[Node, ...], ...]
    sigma: Node
    dim_n: int = 1
    dim_d: int = 1

    def __post_init__(self):
        d = len(self.h)
        for row in self.h:
            if len(row) != d:
                raise ConfigError("forward.h", "h must be a square grid of expressions")
        for i in range(d):
            for j in range(d):
                if self.h[i][j] != self.h[j][i]:
                    raise ConfigError("forward.h", f"h[{i}][{j}] != h[{j}][{i}] (must be symmetric)")
        for name, node in (("forward.b", self.b), ("forward.sigma", self.sigma), *(
            (f"forward.h[{i}][{j}]", self.h[i][j]) for i in range(d) for j in range(d)
        )):
            bad = exprlang.free_variables(node) - {"x"}
            if bad:
                raise ConfigError(name, f"only x allowed; found {sorted(bad)}")

    @staticmethod
    def make(b="0", h="0", sigma="1") -> "ForwardSpec":
        if isinstance(h, (list, tuple)):
            hh = tuple(tuple(_as_expr(e) for e in row) for row in h)
        else:
            hh = ((_as_expr(h),),)
        return ForwardSpec(_as_expr(b), hh, _as_expr(sigma))

    @property
    def h11(self) -> Node:
        if len(self.h) != 1:
            raise DimensionMismatch("scalar forward requested but d > 1")
        return self.h[0][0]


@dataclass(frozen=True)
class GBsdeProblem:
    """A Markovian backward problem: forward state, generators, terminal payoff."""

    forward: ForwardSpec
    generator: GeneratorSpec
    terminal: Node
    horizon: float
    gamma: UncertaintySet

    def __post_init__(self):
        if not self.horizon > 0:
            raise ConfigError("T", "horizon must be positive")
        bad = exprlang.free_variables(self.terminal) - {"x"}
        if bad:
            raise ConfigError("terminal", f"only x allowed; found {sorted(bad)}")

    @staticmethod
    def make(f="0", g="0", terminal="x", T=1.0, gamma=None,
             b="0", h="0", sigma="1", lipschitz: float | None = None) -> "GBsdeProblem":
        return GBsdeProblem(
            forward=ForwardSpec.make(b=b, h=h, sigma=sigma),
            generator=GeneratorSpec.make(f, g, lipschitz=lipschitz),
            terminal=_as_expr(terminal),
            horizon=float(T),
            gamma=gamma if gamma is not None else UncertaintySet.interval(0.25, 1.0),
        )


# --- JSON wire format ---------------------------------------------------------

def gamma_from_json(obj: dict, path: str = "gamma") -> UncertaintySet:
    if not isinstance(obj, dict):
        raise ConfigError(path, "expected an object")
    kind = obj.get("kind", "interval")
    try:
        if kind == "interval":
            return UncertaintySet.interval(obj["sigma2_min"], obj["sigma2_max"])
        if kind == "matrix_family":
            return UncertaintySet.matrix_family(obj["matrices"], obj["sigma2_min"])
    except KeyError as e:
        raise ConfigError(f"{path}.{e.args[0]}", "missing required field") from None
    raise ConfigError(f"{path}.kind", f"unknown kind {kind!r}")


def problem_from_json(obj: dict) -> GBsdeProblem:
    """Build a problem from the documented JSON schema.

    {"gamma": {"kind": "interval", "sigma2_min": ..., "sigma2_max": ...},
     "forward": {"b": "...", "h": "...", "sigma": "..."},
     "generator": {"f": "...", "g": "..."},
     "terminal": "...", "T": ...}
    """
    def expr_at(path: str, text) -> Node:
        if not isinstance(text, str):
            raise ConfigError(path, "expected an expression string")
        try:
            return exprlang.parse(text)
        except ExprError as e:
            raise ConfigError(path, str(e)) from None

    if not isinstance(obj, dict):
        raise ConfigError("$", "config must be a JSON object")
    gamma = gamma_from_json(obj.get("gamma", {"kind": "interval", "sigma2_min": 0.25, "sigma2_max": 1.0}))
    fwd = obj.get("forward", {})
    gen = obj.get("generator", {})
    if "T" not in obj:
        raise ConfigError("T", "missing horizon")
    lip = gen.get("lipschitz")
    try:
        return GBsdeProblem(
            forward=ForwardSpec(
                b=expr_at("forward.b", fwd.get("b", "0")),
                h=((expr_at("forward.h", fwd.get("h", "0")),),),
                sigma=expr_at("forward.sigma", fwd.get("sigma", "1")),
            ),
            generator=GeneratorSpec(
                f=expr_at("generator.f", gen.get("f", "0")),
                g=((expr_at("generator.g", gen.get("g", "0")),),),
                lipschitz=declared_lipschitz(lip) if lip is not None else None,
            ),
            terminal=expr_at("terminal", obj.get("terminal", "x")),
            horizon=float(obj["T"]),
            gamma=gamma,
        )
    except (TypeError, ValueError) as e:
        raise ConfigError("$", f"malformed problem: {e}") from None


def canonical_json(obj) -> str:
    """Canonical serialization: key order and whitespace do not matter."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


# --- assumption validation -----------------------------------------------------

@dataclass(frozen=True)
class AssumptionCheck:
    name: str
    passed: bool
    detail: str
    witness: tuple | None = None


@dataclass(frozen=True)
class AssumptionsReport:
    checks: tuple[AssumptionCheck, ...]

    @property
    def all_passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def __getitem__(self, name: str) -> AssumptionCheck:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)


#: checkable regularity flags; membership of coefficients in the ambient
#: stochastic function spaces is assumed for expression-defined coefficients
#: and is not (cannot be) checked numerically.
ASSUMPTION_FLAGS = ("lipschitz", "time_continuity", "mean_time_continuity", "zero_at_z0")


def validate_assumptions(
    problem: GBsdeProblem,
    flags: Sequence[str] = ASSUMPTION_FLAGS,
    rng: np.random.Generator | None = None,
    n_samples: int = 64,
) -> AssumptionsReport:
    """Sampled validation of the solver's standing assumptions on (f, g).

    Each flagged check reports pass/fail with a witness point on failure.
    Failures never raise; consumers decide what to do with the report.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    gen = problem.generator
    T = problem.horizon
    checks: list[AssumptionCheck] = []
    ys = rng.uniform(-3, 3, n_samples)
    zs = rng.uniform(-3, 3, n_samples)
    ts = rng.uniform(0, T, n_samples)
    exprs = [("f", gen.f)] + [
        (f"g[{i}][{j}]", gen.g[i][j]) for i in range(gen.dim) for j in range(gen.dim)
    ]

    for flag in flags:
        if flag == "lipschitz":
            try:
                est = gen.lipschitz_or_sample(rng=rng)
                checks.append(AssumptionCheck(
                    flag, True, f"sampled constant {est.constant:.4g} (padded {est.padded:.4g})"))
            except Exception as e:  # UnboundedDetected
                checks.append(AssumptionCheck(flag, False, str(e)))
        elif flag == "time_continuity":
            delta = 1e-6
            worst, witness = 0.0, None
            for name, node in exprs:
                if "t" not in exprlang.free_variables(node):
                    continue
                a = np.asarray(exprlang.evaluate(node, {"t": ts, "y": ys, "z": zs}))
                b = np.asarray(exprlang.evaluate(node, {"t": np.minimum(ts + delta, T), "y": ys, "z": zs}))
                jump = np.abs(a - b)
                k = int(np.argmax(jump))
                if jump[k] > worst:
                    worst, witness = float(jump[k]), (name, float(ts[k]), float(ys[k]), float(zs[k]))
            ok = worst <= 1e-3
            checks.append(AssumptionCheck(
                flag, ok, f"max jump over dt={delta:g} is {worst:.3g}", None if ok else witness))
        elif flag == "mean_time_continuity":
            # mean modulus (1/eps) * int |f(u)-f(t)| du must decay with eps
            eps_list = (0.2, 0.1, 0.05)
            t0, y0, z0 = float(T / 3), 0.5, -0.5
            mods = []
            for eps in eps_list:
                us = np.linspace(t0, min(t0 + eps, T), 33)
                m = 0.0
                for _, node in exprs:
                    if "t" not in exprlang.free_variables(node):
                        continue
                    vals = np.asarray(exprlang.evaluate(node, {"t": us, "y": y0, "z": z0}))
                    ref = exprlang.evaluate(node, {"t": t0, "y": y0, "z": z0})
                    m += float(np.mean(np.abs(vals - ref)))
                mods.append(m)
            ok = mods[-1] <= 0.5 * mods[0] + 1e-9
            checks.append(AssumptionCheck(
                flag, ok, "mean modulus over eps=" + ",".join(f"{e:g}" for e in eps_list)
                + " is " + ",".join(f"{m:.3g}" for m in mods)))
        elif flag == "zero_at_z0":
            worst, witness = 0.0, None
            for name, node in exprs:
                vals = np.abs(np.asarray(exprlang.evaluate(node, {"t": ts, "y": ys, "z": 0.0})))
                k = int(np.argmax(vals))
                if vals[k] > worst:
                    worst, witness = float(vals[k]), (name, float(ts[k]), float(ys[k]))
            ok = worst <= 1e-12
            checks.append(AssumptionCheck(
                flag, ok, f"max |coefficient(t, y, z=0)| = {worst:.3g}", None if ok else witness))
        else:
            raise ValueError(f"unknown assumption flag {flag!r}")
    return AssumptionsReport(tuple(checks))
