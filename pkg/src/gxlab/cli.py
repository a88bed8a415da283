"""Command-line front end: config in, CSV + JSON + figures out.

Subcommands: heat, bsde, repr, props, oracle, acceptance. Every run writes
its data files atomically and finishes with a manifest recording the
canonical config digest, the seed, and a sha256 per output, so two runs with
the same (config, seed) are comparable file by file.

Exit codes: 0 ok, 1 acceptance failure, 2 config error, 3 numeric error,
64 usage.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__, acceptance, exprlang, figures, gbsde, gcore, genprops, gheat, lattice
from . import representation as repres
from .errors import ConfigError, ExprError, GxlabError, NumericError
from .util import atomic_write_text, config_hash, parallel_map, sha256_file, write_csv, write_json

EXIT_OK = 0
EXIT_ACCEPTANCE = 1
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_USAGE = 64


@dataclass
class RunManifest:
    """What a run consumed and produced; wall time is informational only."""

    config_hash: str
    tool_version: str
    seed: int
    outputs: list[dict]
    wall_time_s: float

    def write(self, out_dir: Path) -> Path:
        path = Path(out_dir) / "manifest.json"
        write_json(path, {
            "config_hash": self.config_hash,
            "tool_version": self.tool_version,
            "seed": self.seed,
            "outputs": self.outputs,
            "wall_time_s": self.wall_time_s,
        })
        return path


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage problems exit 64, not argparse's 2
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _load_config(path: str) -> dict:
    p = Path(path)
    if not p.is_file():
        raise ConfigError("$", f"config file not found: {path}")
    try:
        obj = json.loads(p.read_text())
    except json.JSONDecodeError as e:
        raise ConfigError("$", f"invalid JSON: {e}") from None
    if not isinstance(obj, dict):
        raise ConfigError("$", "top level must be a JSON object")
    return obj


def _expr(cfg: dict, key: str, default: str | None = None):
    raw = cfg.get(key, default)
    if raw is None:
        raise ConfigError(key, "missing required field")
    if not isinstance(raw, str):
        raise ConfigError(key, "expected an expression string")
    try:
        return exprlang.parse(raw)
    except ExprError as e:
        raise ConfigError(key, str(e)) from None


def _number(cfg: dict, key: str, default=None) -> float:
    raw = cfg.get(key, default)
    if raw is None:
        raise ConfigError(key, "missing required field")
    if not isinstance(raw, (int, float)) or isinstance(raw, bool):
        raise ConfigError(key, "expected a number")
    return float(raw)


def _grid_from_config(cfg: dict, gamma: gcore.UncertaintySet, horizon: float,
                      center: float = 0.0) -> gheat.Grid1D | None:
    gc = cfg.get("grid")
    if gc is None:
        return None
    if not isinstance(gc, dict):
        raise ConfigError("grid", "expected an object")
    explicit = {"x_min", "x_max", "nx", "dt", "nt"}
    if explicit <= set(gc):
        try:
            return gheat.Grid1D(float(gc["x_min"]), float(gc["x_max"]), int(gc["nx"]),
                                float(gc["dt"]), int(gc["nt"]))
        except ValueError as e:
            raise ConfigError("grid", str(e)) from None
    return gheat.Grid1D.build(gamma, horizon, nx=int(gc.get("nx", 513)),
                              half_width=gc.get("half_width"), center=center)


def _emit(out: Path, outputs: list[Path], cfg_obj, seed: int, t0: float) -> None:
    manifest = RunManifest(
        config_hash=config_hash(cfg_obj),
        tool_version=__version__,
        seed=seed,
        outputs=[{"path": p.name, "sha256": sha256_file(p), "bytes": p.stat().st_size}
                 for p in sorted(outputs, key=lambda p: p.name)],
        wall_time_s=round(time.perf_counter() - t0, 3),
    )
    manifest.write(out)


# --- subcommands -----------------------------------------------------------------

def cmd_heat(args) -> int:
    t0 = time.perf_counter()
    cfg = _load_config(args.config)
    gamma = gcore.gamma_from_json(cfg.get("gamma", {"kind": "interval",
                                                   "sigma2_min": 0.25, "sigma2_max": 1.0}))
    phi = _expr(cfg, "phi")
    horizon = _number(cfg, "T")
    grid = _grid_from_config(cfg, gamma, horizon) or gheat.Grid1D.build(gamma, horizon)
    field = gheat.solve_gheat(gamma, phi, horizon, grid)

    out = Path(args.out)
    u_csv = out / "u.csv"
    write_csv(u_csv, ("t", "x", "u"), field.rows())
    fig = figures.heat_profile(field, out / "heat_profile.png")
    _emit(out, [u_csv, fig], cfg, args.seed, t0)
    return EXIT_OK


def cmd_bsde(args) -> int:
    t0 = time.perf_counter()
    cfg = _load_config(args.config)
    problem = gcore.problem_from_json(cfg)
    x0 = _number(cfg, "x0", 0.0)
    grid = _grid_from_config(cfg, problem.gamma, problem.horizon, center=x0)
    scen_cfg = cfg.get("scenarios", [])
    if not isinstance(scen_cfg, list):
        raise ConfigError("scenarios", "expected a list")
    solution = gbsde.solve_gbsde(problem, x0=x0, grid=grid,
                                 full_storage=bool(scen_cfg))

    out = Path(args.out)
    xs = solution.grid.xs()
    bs_rows = []
    step = max(1, len(solution.field.times) // 65)
    for k in range(0, len(solution.field.times), step):
        t = float(solution.field.times[k])
        for i in range(solution.grid.nx):
            bs_rows.append((t, float(xs[i]), float(solution.field.values[k, i]),
                            float(solution.z_values[k, i])))
    bsde_csv = out / "bsde.csv"
    write_csv(bsde_csv, ("t", "x", "Y", "Z"), bs_rows)

    outputs = [bsde_csv, figures.bsde_fields(solution, out / "bsde_fields.png")]
    trajectories = []
    for k, sc in enumerate(scen_cfg):
        if not isinstance(sc, dict) or "rate" not in sc:
            raise ConfigError(f"scenarios[{k}]", "expected an object with a 'rate'")
        rate = sc["rate"]
        sid = str(sc.get("id", f"scenario{k}"))
        trajectories.append(gbsde.extract_k(problem, solution, rate, scenario_id=sid))
    k_rows = [(tr.scenario_id, float(t), float(v))
              for tr in trajectories for t, v in zip(tr.times, tr.values)]
    k_csv = out / "k_report.csv"
    write_csv(k_csv, ("scenario_id", "t", "K"), k_rows)
    outputs.append(k_csv)
    if trajectories:
        outputs.append(figures.k_trajectories(trajectories, out / "k_trajectories.png"))
    _emit(out, outputs, cfg, args.seed, t0)
    return EXIT_OK


def cmd_repr(args) -> int:
    t0 = time.perf_counter()
    cfg = _load_config(args.config)
    gamma = gcore.gamma_from_json(cfg.get("gamma", {"kind": "interval",
                                                   "sigma2_min": 0.25, "sigma2_max": 1.0}))
    fwd = cfg.get("forward", {})
    gen = cfg.get("generator", {})
    point = cfg.get("point", {})
    if not isinstance(point, dict):
        raise ConfigError("point", "expected an object with t, x, y, p")
    try:
        case = repres.ReprCase(
            forward=gcore.ForwardSpec(
                b=_expr(fwd, "b", "0"), h=((_expr(fwd, "h", "0"),),),
                sigma=_expr(fwd, "sigma", "1")),
            generator=gcore.GeneratorSpec(
                f=_expr(gen, "f", "0"), g=((_expr(gen, "g", "0"),),),
                lipschitz=exprlang.declared_lipschitz(gen["lipschitz"])
                if "lipschitz" in gen else None),
            gamma=gamma,
            t=_number(point, "t", 0.0), x=_number(point, "x", 0.0),
            y=_number(point, "y", 0.0), p=_number(point, "p", 1.0),
            eps_grid=tuple(cfg.get("eps_grid", (0.2, 0.1, 0.05, 0.025, 0.0125))),
            horizon=_number(cfg, "T", 1.0),
        )
    except ValueError as e:
        raise ConfigError("eps_grid", str(e)) from None
    estimate = repres.slope_estimate(case)
    diag = repres.convergence_diagnostics(estimate)

    out = Path(args.out)
    slope_csv = out / "slope.csv"
    write_csv(slope_csv, ("eps", "D_eps"), zip(estimate.eps, estimate.d_eps))
    summary = out / "summary.json"
    write_json(summary, {
        "fitted_limit": estimate.fitted_limit,
        "rhs": estimate.rhs,
        "abs_err": estimate.abs_err,
        "decay_exponent": "exact" if diag.exact else diag.exponent,
    })
    fig = figures.slope_fit(estimate, out / "slope_fit.png")
    _emit(out, [slope_csv, summary, fig], cfg, args.seed, t0)
    return EXIT_OK


def cmd_props(args) -> int:
    t0 = time.perf_counter()
    cfg = _load_config(args.config)
    gamma = gcore.gamma_from_json(cfg.get("gamma", {"kind": "interval",
                                                   "sigma2_min": 0.25, "sigma2_max": 1.0}))
    gens_cfg = cfg.get("generators")
    if not isinstance(gens_cfg, list) or not 1 <= len(gens_cfg) <= 2:
        raise ConfigError("generators", "expected a list of one or two generator objects")
    gens = []
    for k, gc_ in enumerate(gens_cfg):
        if not isinstance(gc_, dict):
            raise ConfigError(f"generators[{k}]", "expected an object")
        gens.append(gcore.GeneratorSpec(
            f=_expr(gc_, "f", "0"), g=((_expr(gc_, "g", "0"),),),
            lipschitz=exprlang.declared_lipschitz(gc_["lipschitz"])
            if "lipschitz" in gc_ else None))
    predicates = cfg.get("predicates", list(genprops.PREDICATES))
    if not isinstance(predicates, list):
        raise ConfigError("predicates", "expected a list of predicate names")

    reports = []
    for name in predicates:
        if name not in genprops.PREDICATES:
            raise ConfigError("predicates", f"unknown predicate {name!r}; "
                              f"known: {list(genprops.PREDICATES)}")
        if name == "converse-gap" and len(gens) < 2:
            raise ConfigError("generators", "converse-gap needs two generators")
        reports.append(genprops.check_predicate(
            name, gens[0], gamma, gen2=gens[1] if len(gens) > 1 else None))

    out = Path(args.out)
    pred_csv = out / "predicates.csv"
    write_csv(pred_csv, ("predicate", "point", "value", "verdict"),
              [(r.predicate,
                "" if r.witness is None else ";".join(f"{w:g}" for w in r.witness),
                r.worst_violation, r.verdict) for r in reports])
    outputs = [pred_csv, figures.predicate_summary(reports, out / "predicates.png")]

    summary: dict = {"predicates": {r.predicate: r.verdict for r in reports}}
    wit_cfg = cfg.get("witness")
    if wit_cfg is not None and len(gens) == 2:
        point = (_number(wit_cfg, "t", 0.0), _number(wit_cfg, "y", 0.0),
                 _number(wit_cfg, "z", 1.0))
        witness = genprops.converse_witness(gens[0], gens[1], gamma, point)
        summary["witness"] = {
            "point": list(point),
            "gap": witness.gap,
            "slope1": witness.slope1.fitted_limit,
            "slope2": witness.slope2.fitted_limit,
            "slope_difference": witness.slope_difference,
            "rel_err": witness.rel_err,
            "exhibits_violation": witness.exhibits_violation,
        }
    summary_json = out / "summary.json"
    write_json(summary_json, summary)
    outputs.append(summary_json)
    _emit(out, outputs, cfg, args.seed, t0)
    return EXIT_OK


def cmd_oracle(args) -> int:
    t0 = time.perf_counter()
    cfg = _load_config(args.config)
    gamma = gcore.gamma_from_json(cfg.get("gamma", {"kind": "interval",
                                                   "sigma2_min": 0.25, "sigma2_max": 1.0}))
    pay_cfg = cfg.get("payoffs")
    if not isinstance(pay_cfg, list) or not pay_cfg:
        raise ConfigError("payoffs", "expected a non-empty list")
    payoffs = []
    for k, pc in enumerate(pay_cfg):
        if not isinstance(pc, dict) or "expr" not in pc:
            raise ConfigError(f"payoffs[{k}]", "expected an object with 'expr'")
        try:
            payoffs.append((str(pc.get("id", f"payoff{k}")), exprlang.parse(pc["expr"])))
        except ExprError as e:
            raise ConfigError(f"payoffs[{k}].expr", str(e)) from None
    steps = int(_number(cfg, "steps", 10))
    horizon = _number(cfg, "T", 1.0)
    tol = _number(cfg, "tolerance", 2e-2)
    report = lattice.oracle_vs_pde(gamma, payoffs, horizon=horizon, steps=steps,
                                   tolerance=tol)

    out = Path(args.out)
    csv = out / "oracle_report.csv"
    write_csv(csv, ("payoff_id", "oracle", "pde", "abs_diff"),
              [(r.payoff_id, r.oracle, r.pde, r.abs_diff) for r in report.rows])
    fig = figures.oracle_diffs(report, out / "oracle_vs_pde.png")
    _emit(out, [csv, fig], cfg, args.seed, t0)
    return EXIT_OK


def cmd_acceptance(args) -> int:
    t0 = time.perf_counter()
    criteria = None
    if args.criteria:
        try:
            criteria = [int(c) for c in args.criteria.split(",")]
        except ValueError:
            raise ConfigError("criteria", f"expected comma-separated integers, got "
                              f"{args.criteria!r}") from None
    run_det = criteria is None or 9 in criteria
    base = None if criteria is None else ([c for c in criteria if c != 9] or None)

    def run():
        try:
            return acceptance.run_all(criteria=base, tolerance_scale=args.tolerance_scale,
                                      seed=args.seed, threads=args.threads)
        except ValueError as e:
            raise ConfigError("criteria", str(e)) from None

    results = run()
    rows = list(acceptance.results_rows(results))
    # criterion 9: a repeated run must reproduce every measured value bit for bit
    deterministic = True
    if run_det:
        rows_again = list(acceptance.results_rows(run()))
        deterministic = rows == rows_again
        rows.append((9, "determinism", "repeated run identical", 0.0 if deterministic else 1.0,
                     0.0, "pass" if deterministic else "FAIL"))

    out = Path(args.out)
    table = out / "acceptance.csv"
    write_csv(table, ("criterion", "name", "check", "measured", "tolerance", "status"), rows)
    fig = figures.acceptance_summary(results, out / "acceptance_summary.png")
    _emit(out, [table, fig], {"criteria": criteria, "tolerance_scale": args.tolerance_scale},
          args.seed, t0)

    all_ok = all(r.passed for r in results) and deterministic
    for res in results:
        print(res.describe())
    if run_det:
        print(f"criterion 9 (determinism): {'PASS' if deterministic else 'FAIL'}")
    print(f"acceptance: {'PASS' if all_ok else 'FAIL'} "
          f"({time.perf_counter() - t0:.1f}s, outputs in {out})")
    return EXIT_OK if all_ok else EXIT_ACCEPTANCE


# --- entry point -------------------------------------------------------------------

def _add_common(sub: argparse.ArgumentParser, needs_config: bool = True) -> None:
    if needs_config:
        sub.add_argument("--config", required=True, help="path to the JSON config")
    sub.add_argument("--out", default="out", help="output directory (default: out)")
    sub.add_argument("--seed", type=int, default=0, help="seed for sampled grids")
    sub.add_argument("--threads", type=int, default=None,
                     help="worker threads (default: GXLAB_THREADS or 1)")
    sub.add_argument("--tolerance-scale", type=float, default=1.0,
                     dest="tolerance_scale", help="multiply all tolerances")


def build_parser() -> _Parser:
    parser = _Parser(prog="gxlab",
                     description="numerical laboratory for sublinear expectations "
                                 "and backward equations under volatility uncertainty")
    parser.add_argument("--version", action="version", version=f"gxlab {__version__}")
    subs = parser.add_subparsers(dest="command", metavar="command")
    handlers = {
        "heat": (cmd_heat, "solve the nonlinear heat equation and tabulate u(t,x)", True),
        "bsde": (cmd_bsde, "solve a backward problem; emit Y/Z fields and K residuals", True),
        "repr": (cmd_repr, "estimate the small-horizon slope and compare to the closed form", True),
        "props": (cmd_props, "evaluate generator predicates and optional witnesses", True),
        "oracle": (cmd_oracle, "cross-check the PDE against the exhaustive lattice", True),
        "acceptance": (cmd_acceptance, "run the acceptance suite end to end", False),
    }
    for name, (fn, help_text, needs_config) in handlers.items():
        sub = subs.add_parser(name, help=help_text)
        _add_common(sub, needs_config=needs_config)
        if name == "acceptance":
            sub.add_argument("--criteria", default=None,
                             help="comma-separated subset, e.g. 1,4,5 (default: all)")
        sub.set_defaults(handler=fn)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not getattr(args, "handler", None):
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    if args.threads is None:
        args.threads = int(os.environ.get("GXLAB_THREADS", "1"))
    try:
        return args.handler(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericError as e:
        print(f"numeric error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except ExprError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except GxlabError as e:  # anything else we raised on purpose
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
