"""Command line interface: ``widthflow gen|measure|flow|verify|export-mesh|mollify-demo``.

Every command takes ``--config PATH`` (a JSON :class:`RunConfig`),
``--seed N`` and ``--out DIR``; explicit flags override the config file.
All randomness derives from the seed through ``numpy.random.default_rng``
(PCG64), and output files carry no timestamps, so reruns are
byte-identical.

Exit codes: 0 success, 1 property failure, 2 usage or parse error,
3 infeasible input, 4 solver failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _io, conic
from .convex_program import (
    DualityExtractionError,
    PreconditionError,
    SolverFailure,
    StepFailure,
    energy,
    quotient_norm,
)
from .flow_engine import (
    FlowFailure,
    energy_inequality_slack,
    estar_variation,
    interpolant_diagnostics,
    run_flow,
    save_trace,
    tail_diagnostics,
    write_snapshots,
    write_trace_csv,
)
from .mollifier import (
    PPerpViolation,
    cap_kernel,
    load_measure,
    mollify_report,
    random_measure,
    save_measure,
)
from .sphere_grid import GridSizingError, GridTooCoarseError, MAX_DEGREE, default_table
from .suites import SUITES, run_suite
from .width_body import (
    LPFailure,
    NonconvexBodyError,
    WidthBody,
    boundary_point,
    circumradius,
    evaluate_support,
    export_mesh,
    inradius,
    load_body,
    make_zonal_reuleaux,
    random_body,
    save_body,
    surface_area,
    surface_area_det,
    volume_report,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_PROPERTY = 1
EXIT_USAGE = 2
EXIT_INFEASIBLE = 3
EXIT_SOLVER = 4

BODY_KINDS = ("ball", "zonal-reuleaux", "random")


class ConfigError(ValueError):
    """Invalid configuration or command line options."""


# ---------------------------------------------------------------------------
# configuration


@dataclass
class BodySpec:
    kind: str = "random"
    amplitude: float = 0.05
    seed: int | None = None          # defaults to the run seed
    target_margin: float = 1e-6
    projection: str = "shrink"


@dataclass
class RunConfig:
    grid: tuple = (24, 48)
    degree_max: int = 9
    tau: float = 0.05
    n_steps: int = 200
    seed: int = 0
    input: str | None = None
    output: str = "widthflow_out"
    body: BodySpec = field(default_factory=BodySpec)
    solver: dict = field(default_factory=dict)
    snapshot_every: int | None = 10
    obj_resolution: int | None = None
    diagnostic_pairs: int = 20
    stop_norm: float = 1e-9

    def validate(self) -> "RunConfig":
        try:
            nt, npf = (int(x) for x in self.grid)
        except (TypeError, ValueError):
            raise ConfigError("grid must be a pair [n_theta, n_phi]") from None
        self.grid = (nt, npf)
        _require(nt >= 2 and npf >= 4, "grid needs n_theta >= 2 and n_phi >= 4")
        _require(npf % 2 == 0, "grid n_phi must be even")
        _require(isinstance(self.degree_max, int) and 3 <= self.degree_max <= MAX_DEGREE,
                 f"degree_max must be an integer in [3, {MAX_DEGREE}]")
        _require(_is_pos(self.tau), "tau must be a positive number")
        _require(isinstance(self.n_steps, int) and self.n_steps >= 1, "n_steps must be an integer >= 1")
        _require(isinstance(self.seed, int) and 0 <= self.seed < 2 ** 64, "seed must be a 64-bit unsigned integer")
        _require(self.snapshot_every is None or (isinstance(self.snapshot_every, int) and self.snapshot_every >= 1),
                 "snapshot_every must be null or an integer >= 1")
        _require(self.obj_resolution is None or (isinstance(self.obj_resolution, int) and self.obj_resolution >= 2),
                 "obj_resolution must be null or an integer >= 2")
        _require(isinstance(self.diagnostic_pairs, int) and self.diagnostic_pairs >= 0,
                 "diagnostic_pairs must be an integer >= 0")
        _require(_is_pos(self.stop_norm), "stop_norm must be positive")
        unknown = set(self.solver) - set(conic.SETTINGS)
        _require(not unknown, f"unknown solver settings {sorted(unknown)}")
        for k, v in self.solver.items():
            _require(_is_pos(v), f"solver setting {k} must be positive")
        b = self.body
        _require(b.kind in BODY_KINDS, f"body.kind must be one of {BODY_KINDS}")
        _require(_is_pos(b.amplitude), "body.amplitude must be positive")
        _require(b.seed is None or (isinstance(b.seed, int) and b.seed >= 0), "body.seed must be a nonnegative integer")
        _require(isinstance(b.target_margin, (int, float)) and 0 <= b.target_margin < 0.5,
                 "body.target_margin must lie in [0, 1/2)")
        _require(b.projection in ("shrink", "nearest"), "body.projection must be 'shrink' or 'nearest'")
        return self

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        if not isinstance(data, dict):
            raise ConfigError("configuration must be a JSON object")
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ConfigError(f"unknown configuration keys {sorted(unknown)}")
        data = dict(data)
        body = data.pop("body", None) or {}
        if not isinstance(body, dict):
            raise ConfigError("body must be an object")
        bnames = {f.name for f in dataclasses.fields(BodySpec)}
        unknown = set(body) - bnames
        if unknown:
            raise ConfigError(f"unknown body keys {sorted(unknown)}")
        return cls(body=BodySpec(**body), **data)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["grid"] = list(self.grid)
        return d


def _is_pos(x) -> bool:
    return isinstance(x, (int, float)) and not isinstance(x, bool) and math.isfinite(x) and x > 0


def _require(cond, message):
    if not cond:
        raise ConfigError(message)


def load_config(path) -> RunConfig:
    try:
        data = _io.read_json(path)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return RunConfig.from_dict(data)


def _resolve_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    overrides = {
        "seed": args.seed, "output": args.out,
        "degree_max": getattr(args, "L", None), "tau": getattr(args, "tau", None),
        "n_steps": getattr(args, "n_steps", None), "input": getattr(args, "input", None),
    }
    for k, v in overrides.items():
        if v is not None:
            setattr(cfg, k, v)
    if getattr(args, "grid", None) is not None:
        cfg.grid = tuple(args.grid)
    for k in ("amplitude", "projection", "target_margin"):
        v = getattr(args, k, None)
        if v is not None:
            setattr(cfg.body, k, v)
    if getattr(args, "kind", None) is not None:
        cfg.body.kind = args.kind
    return cfg.validate()


# ---------------------------------------------------------------------------
# helpers


def _table(cfg: RunConfig):
    return default_table(cfg.degree_max, *cfg.grid)


def make_body(cfg: RunConfig) -> WidthBody:
    table = _table(cfg)
    b = cfg.body
    if b.kind == "ball":
        return WidthBody.ball(cfg.degree_max, table).with_coefficients(np.zeros(table.size), kind="ball")
    if b.kind == "zonal-reuleaux":
        if cfg.degree_max % 2 == 0:
            raise ConfigError("zonal-reuleaux needs an odd degree_max")
        return make_zonal_reuleaux(cfg.degree_max, table, b.target_margin, projection=b.projection)
    seed = cfg.seed if b.seed is None else b.seed
    return random_body(cfg.degree_max, b.amplitude, seed, table, b.target_margin)


def _out_dir(cfg: RunConfig) -> Path:
    p = Path(cfg.output)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _read_body(path) -> WidthBody:
    try:
        return load_body(path)
    except (OSError, json.JSONDecodeError, KeyError, TypeError) as exc:
        raise ConfigError(f"cannot read body file {path}: {exc}") from None


def _check(value, tol, kind="abs"):
    value = float(value)
    ok = abs(value) <= tol if kind == "abs" else value <= tol
    return {"value": value, "tol": tol, "pass": bool(ok)}


def measure_report(body: WidthBody) -> dict:
    """Every geometric quantity of ``body`` with its invariant checks."""
    body.require_convex("measure")
    R, cc = circumradius(body)
    r, ic = inradius(body)
    rep = volume_report(body)
    sig = surface_area(body)
    E = energy(body)
    rng = np.random.default_rng(0)
    u = rng.standard_normal((128, 3))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    width = evaluate_support(body, u) + evaluate_support(body, -u) - 1.0
    wmap = boundary_point(body, u) - boundary_point(body, -u) - u
    node_width = body.node_support + body.node_support[body.grid.antipode()] - 1.0
    checks = {
        "r_plus_R": _check(r + R - 1.0, 1e-8),
        "centers": _check(np.linalg.norm(ic - cc), 1e-7),
        "jung": _check(R - math.sqrt(3.0 / 8.0), 1e-6, "le"),
        "circumradius_identity": _check(R - 0.5 - quotient_norm(body).value, 1e-12),
        "volume_blaschke": _check(rep.energy - rep.blaschke, 1e-8),
        "volume_det": _check(rep.energy - rep.det, 1e-5),
        "surface_det": _check(sig - surface_area_det(body), 1e-5),
        "energy_cap": _check(E - math.pi / 3.0, 1e-8, "le"),
        "width": _check(max(np.max(np.abs(width)), np.max(np.abs(node_width))), 1e-12),
        "width_map": _check(np.max(np.abs(wmap)), 1e-10),
    }
    return {
        "degree_max": body.L,
        "grid": [body.grid.n_theta, body.grid.n_phi],
        "R": R, "circumcenter": cc.tolist(),
        "r": r, "incenter": ic.tolist(),
        "V_energy": rep.energy, "V_blaschke": rep.blaschke, "V_det": rep.det,
        "sigma": sig, "E": E, "norm_g": quotient_norm(body).value,
        "convexity_margin": body.convexity_margin,
        "checks": checks,
        "pass": all(c["pass"] for c in checks.values()),
    }


def _print_kv(pairs, stream=None):
    stream = stream or sys.stdout
    for k, v in pairs:
        if isinstance(v, float):
            v = _io.format_float(v)
        print(f"{k:>18s}  {v}", file=stream)


# ---------------------------------------------------------------------------
# commands


def cmd_gen(args) -> int:
    cfg = _resolve_config(args)
    body = make_body(cfg)
    out = _out_dir(cfg)
    path = out / (args.name or f"{cfg.body.kind}.json")
    save_body(body, path)
    R, _ = circumradius(body)
    r, _ = inradius(body)
    _print_kv([("file", str(path)), ("R", R), ("r", r), ("V", volume_report(body).energy),
               ("E", energy(body)), ("margin", body.convexity_margin)])
    return EXIT_OK


def cmd_measure(args) -> int:
    cfg = _resolve_config(args)
    body = _read_body(args.body)
    rep = measure_report(body)
    _print_kv([(k, rep[k]) for k in ("R", "r", "V_energy", "V_blaschke", "V_det", "sigma", "E",
                                     "norm_g", "convexity_margin")])
    for name, c in rep["checks"].items():
        print(f"{'check ' + name:>28s}  {'pass' if c['pass'] else 'FAIL'}  "
              f"value={_io.format_float(c['value'])} tol={c['tol']:g}")
    if args.out or args.config:
        _io.write_json(_out_dir(cfg) / "measure.json", rep)
    return EXIT_OK if rep["pass"] else EXIT_PROPERTY


def _flow_diagnostics(trace, cfg: RunConfig) -> dict:
    N = trace.n_steps
    tail = tail_diagnostics(trace)
    interp = interpolant_diagnostics(trace, n_pairs=cfg.diagnostic_pairs, seed=cfg.seed)
    slack_min = min((energy_inequality_slack(trace, j, k)
                     for j in range(N + 1) for k in range(j + 1, N + 1)), default=0.0)
    variation = estar_variation(trace, 0, N)
    half_sq = 0.5 * trace.steps[0].dual_norm_xi ** 2
    checks = {
        "dual_norm_monotone": tail["dual_norm_violation"] <= 1e-7,
        "energy_monotone": tail["energy_violation"] <= 1e-7,
        "circumradius_monotone": tail["circumradius_violation"] <= 1e-7,
        "volume_monotone": tail["volume_violation"] <= 1e-7,
        "circumradius_identity": tail["circumradius_identity"] <= 1e-8,
        "estar_variation": variation <= half_sq + 1e-6,
        "energy_slack": slack_min >= -1e-6,
        "l1_estimate": interp["l1_slack"] >= -1e-6,
        "equicontinuity": interp["equicontinuity_min_slack"] >= -1e-6,
    }
    return {
        "converged": trace.converged,
        "steps": N,
        "estar_variation": variation,
        "half_initial_dual_norm_sq": half_sq,
        "energy_slack_min": slack_min,
        "tail": {k: v for k, v in tail.items() if k != "t_energy"},
        "t_energy": tail["t_energy"],
        "interpolants": interp,
        "checks": checks,
        "pass": all(checks.values()),
    }


def cmd_flow(args) -> int:
    cfg = _resolve_config(args)
    body = _read_body(cfg.input) if cfg.input else make_body(cfg)
    out = _out_dir(cfg)
    _io.write_json(out / "config.json", cfg.to_dict())
    failure = None
    with conic.solver_settings(**cfg.solver):
        try:
            trace = run_flow(body, cfg.tau, cfg.n_steps, stop_norm=cfg.stop_norm)
        except FlowFailure as exc:
            failure, trace = exc, exc.trace
        write_trace_csv(trace, out / "trace.csv")
        save_trace(trace, out / "trace.json")
        if cfg.snapshot_every and trace.steps:
            write_snapshots(trace, out / "snapshots", cfg.snapshot_every, cfg.obj_resolution)
        if failure is not None:
            _io.write_json(out / "diagnostics.json", {"error": str(failure), "steps": trace.n_steps})
            print(f"flow failed: {failure}", file=sys.stderr)
            cause = failure.cause
            if isinstance(cause, (NonconvexBodyError, PreconditionError)):
                return EXIT_INFEASIBLE
            return EXIT_SOLVER
        diag = _flow_diagnostics(trace, cfg)
    _io.write_json(out / "diagnostics.json", diag)
    last = trace.steps[-1]
    _print_kv([("steps", trace.n_steps), ("converged", str(trace.converged)),
               ("R initial", trace.steps[0].R), ("R final", last.R),
               ("V initial", trace.steps[0].V), ("V final", last.V),
               ("E* variation", diag["estar_variation"]),
               ("bound", diag["half_initial_dual_norm_sq"]),
               ("min slack", diag["energy_slack_min"])])
    for name, ok in diag["checks"].items():
        print(f"{'check ' + name:>28s}  {'pass' if ok else 'FAIL'}")
    return EXIT_OK if diag["pass"] else EXIT_PROPERTY


def cmd_verify(args) -> int:
    cfg = _resolve_config(args)
    options = {"L": cfg.degree_max}
    if args.suite == "flow" or args.suite == "all":
        options_flow = {"tau": cfg.tau, "n_steps": cfg.n_steps}
    else:
        options_flow = {}
    names = list(SUITES) if args.suite == "all" else [args.suite]
    reports = []
    with conic.solver_settings(**cfg.solver):
        for n in names:
            opts = dict(options, **(options_flow if n == "flow" else {}))
            reports.append(run_suite(n, cfg.seed, args.count, **opts))
    cases = [c for r in reports for c in r["cases"]]
    verdict = {"suite": args.suite, "seed": cfg.seed, "count": args.count,
               "pass": all(c["pass"] for c in cases), "cases": cases}
    for c in cases:
        status = "pass" if c["pass"] else "FAIL"
        failed = [k for k, v in c["checks"].items() if not v["pass"]]
        extra = f"  failed={failed} inputs={json.dumps(c['inputs'])}" if failed else ""
        print(f"{c['suite']:>10s} case {c['case']:4d}  {status}{extra}")
    n_fail = sum(not c["pass"] for c in cases)
    print(f"{len(cases) - n_fail}/{len(cases)} cases passed")
    if args.out or args.config:
        _io.write_json(_out_dir(cfg) / f"verify_{args.suite}.json", verdict)
    return EXIT_OK if verdict["pass"] else EXIT_PROPERTY


def cmd_export_mesh(args) -> int:
    cfg = _resolve_config(args)
    body = _read_body(args.body)
    out = _out_dir(cfg)
    path = out / (Path(args.body).stem + ".obj")
    verts, faces = export_mesh(body, args.resolution, path)
    _print_kv([("file", str(path)), ("vertices", len(verts)), ("faces", len(faces))])
    return EXIT_OK


def cmd_mollify_demo(args) -> int:
    cfg = _resolve_config(args)
    mu = load_measure(args.measure) if args.measure else random_measure(args.atoms, cfg.seed)
    body = _read_body(args.body) if args.body else make_body(cfg)
    rows = []
    for eps in args.epsilon:
        rows.append(mollify_report(mu, cap_kernel(eps), body))
    print(f"{'epsilon':>8s} {'error':>12s} {'bound':>12s} {'ratio':>10s} {'tilde err':>12s} {'tilde bnd':>12s}")
    for r in rows:
        print(f"{r['epsilon']:8.3g} {r['error']:12.4e} {r['bound']:12.4e} {r['ratio']:10.3e} "
              f"{r['tilde_error']:12.4e} {r['tilde_bound']:12.4e}")
    ok = all(r["error"] <= r["bound"] + 1e-7 and r["tilde_error"] <= r["tilde_bound"] + 1e-7
             for r in rows)
    if args.out or args.config:
        out = _out_dir(cfg)
        save_measure(mu, out / "measure.json")
        _io.write_json(out / "mollify.json", {"tv": mu.tv, "rows": rows, "pass": ok})
    return EXIT_OK if ok else EXIT_PROPERTY


# ---------------------------------------------------------------------------
# entry point


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _positive_float(text):
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text}") from None
    if not (math.isfinite(v) and v > 0):
        raise argparse.ArgumentTypeError(f"must be positive: {text}")
    return v


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="JSON run configuration")
    common.add_argument("--seed", type=int, help="64-bit seed for all randomness")
    common.add_argument("--out", metavar="DIR", help="output directory")
    common.add_argument("--grid", type=int, nargs=2, metavar=("N_THETA", "N_PHI"))
    common.add_argument("--L", type=int, help="maximal harmonic degree")
    common.add_argument("-v", "--verbose", action="count", default=0)

    p = _Parser(prog="widthflow", description="Doubly monotone flow of constant width bodies.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen", parents=[common], help="generate a body file")
    g.add_argument("kind", choices=BODY_KINDS)
    g.add_argument("--amplitude", type=_positive_float)
    g.add_argument("--projection", choices=("shrink", "nearest"))
    g.add_argument("--target-margin", type=float, dest="target_margin")
    g.add_argument("--name", help="output file name (default KIND.json)")
    g.set_defaults(func=cmd_gen)

    m = sub.add_parser("measure", parents=[common], help="measure a body file")
    m.add_argument("body")
    m.set_defaults(func=cmd_measure)

    f = sub.add_parser("flow", parents=[common], help="run the implicit scheme")
    f.add_argument("--tau", type=_positive_float)
    f.add_argument("--n-steps", type=int, dest="n_steps")
    f.add_argument("--input", help="initial body file (otherwise generated from the config)")
    f.add_argument("--kind", choices=BODY_KINDS)
    f.add_argument("--amplitude", type=_positive_float)
    f.set_defaults(func=cmd_flow)

    v = sub.add_parser("verify", parents=[common], help="run seeded property suites")
    v.add_argument("suite", choices=tuple(SUITES) + ("all",))
    v.add_argument("--count", type=int, default=10)
    v.add_argument("--tau", type=_positive_float)
    v.add_argument("--n-steps", type=int, dest="n_steps")
    v.set_defaults(func=cmd_verify)

    e = sub.add_parser("export-mesh", parents=[common], help="write an OBJ boundary mesh")
    e.add_argument("body")
    e.add_argument("--resolution", type=int, default=32)
    e.set_defaults(func=cmd_export_mesh)

    d = sub.add_parser("mollify-demo", parents=[common], help="smooth a measure and report errors")
    d.add_argument("--epsilon", type=_positive_float, nargs="+", default=[0.2, 0.1, 0.05, 0.01])
    d.add_argument("--atoms", type=int, default=8)
    d.add_argument("--measure", help="measure file (JSON list of [x, y, z, mass])")
    d.add_argument("--body", help="body file (otherwise generated from the config)")
    d.set_defaults(func=cmd_mollify_demo)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, GridSizingError, GridTooCoarseError, PPerpViolation) as exc:
        print(f"widthflow: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NonconvexBodyError, PreconditionError) as exc:
        print(f"widthflow: infeasible input: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (SolverFailure, StepFailure, LPFailure, DualityExtractionError, FlowFailure) as exc:
        print(f"widthflow: solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except ValueError as exc:
        print(f"widthflow: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
