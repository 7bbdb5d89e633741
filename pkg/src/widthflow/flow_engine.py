"""Driver for the implicit time scheme and its diagnostics.

Given ``xi^{k-1}``, one step returns the next body ``g^k`` and functional
``xi^k`` (see :func:`widthflow.convex_program.solve_step`).  The trace
keeps the sequence together with the geometric quantities of every body
and the conjugate-energy increments ``E*((xi^k - xi^{k-1}) / tau)``.

Interpolants, for ``t`` in the ``k``-th interval ``[(k-1) tau, k tau]``:

* ``g_tau(t) = g^k`` (piecewise constant, right continuous);
* ``xi_tau(t) = xi^{k-1} + (t / tau - k + 1) (xi^k - xi^{k-1})`` (piecewise linear);
* ``zeta_tau(t) = xi^k`` (piecewise constant).

Under this convention ``E*``-variation of ``xi_tau`` over a time window is
the overlap-weighted sum of the increments.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import _io
from .convex_program import (
    DualFunctional,
    StepFailure,
    SolverFailure,
    chi_star,
    dual_norm,
    duality_select,
    e_star,
    energy,
    quotient_norm,
    solve_step,
)
from .sphere_grid import HarmonicTable, default_table
from .width_body import (
    JUNG_GAP,
    WidthBody,
    circumradius,
    export_mesh,
    inradius,
    save_body,
    surface_area,
    volume_report,
)

logger = logging.getLogger(__name__)

__all__ = [
    "StepRecord",
    "FlowTrace",
    "FlowFailure",
    "CONVERGED_NORM",
    "CSV_HEADER",
    "init_state",
    "run_flow",
    "estar_variation",
    "energy_inequality_slack",
    "interpolant_diagnostics",
    "tail_diagnostics",
    "write_trace_csv",
    "save_trace",
    "load_trace",
    "write_snapshots",
]

CONVERGED_NORM = 1e-9
MAX_ENERGY = math.pi / 3.0      # E <= pi/3 on C since the volume is nonnegative

CSV_HEADER = ["step", "time", "R", "r", "V", "sigma", "E", "norm_g", "dual_norm_xi",
              "estar_increment", "estar_cumvar", "energy_slack", "convexity_margin",
              "kkt_residual"]


class FlowFailure(RuntimeError):
    """A step failed; ``trace`` holds every record completed before it."""

    def __init__(self, message, trace=None, cause=None):
        super().__init__(message)
        self.trace = trace
        self.cause = cause


@dataclass
class StepRecord:
    """State after step ``k`` (``k = 0`` is the initial datum)."""

    k: int
    t: float
    g: np.ndarray
    xi: np.ndarray
    R: float
    r: float
    V: float
    sigma: float
    E: float
    norm_g: float
    dual_norm_xi: float
    estar_increment: float       # E*((xi^k - xi^{k-1}) / tau); 0 for k = 0
    estar_cumvar: float          # sum_{l <= k} tau E*(...)
    energy_slack: float          # slack over (0, k)
    convexity_margin: float
    kkt_residual: float
    duality_residual: float

    _float_fields = ("t", "R", "r", "V", "sigma", "E", "norm_g", "dual_norm_xi",
                     "estar_increment", "estar_cumvar", "energy_slack",
                     "convexity_margin", "kkt_residual", "duality_residual")

    def to_dict(self) -> dict:
        d = {"k": self.k}
        d.update({name: float(getattr(self, name)) for name in self._float_fields})
        d["g"] = [float(x) for x in self.g]
        d["xi"] = [float(x) for x in self.xi]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "StepRecord":
        kw = {name: float(d[name]) for name in cls._float_fields}
        return cls(k=int(d["k"]), g=np.array(d["g"], dtype=float),
                   xi=np.array(d["xi"], dtype=float), **kw)


@dataclass
class FlowTrace:
    tau: float
    L: int
    n_theta: int
    n_phi: int
    steps: list = field(default_factory=list)
    converged: bool = False
    metadata: dict = field(default_factory=dict)

    @property
    def table(self) -> HarmonicTable:
        return default_table(self.L, self.n_theta, self.n_phi)

    @property
    def n_steps(self) -> int:
        """Index of the last recorded step."""
        return len(self.steps) - 1

    @property
    def final_time(self) -> float:
        return self.n_steps * self.tau

    def body(self, k: int) -> WidthBody:
        return WidthBody(self.steps[k].g, self.table, {"kind": "flow", "step": k})

    def functional(self, k: int) -> DualFunctional:
        return DualFunctional(self.steps[k].xi, self.L)

    def increment(self, k: int) -> DualFunctional:
        """``zeta^k = (xi^k - xi^{k-1}) / tau`` for ``k >= 1``."""
        return DualFunctional((self.steps[k].xi - self.steps[k - 1].xi) / self.tau, self.L)

    def column(self, name: str) -> np.ndarray:
        return np.array([getattr(s, name) for s in self.steps], dtype=float)

    def to_dict(self) -> dict:
        return {"tau": float(self.tau), "degree_max": self.L,
                "grid": [self.n_theta, self.n_phi], "converged": self.converged,
                "metadata": self.metadata, "steps": [s.to_dict() for s in self.steps]}

    @classmethod
    def from_dict(cls, d: dict) -> "FlowTrace":
        return cls(tau=float(d["tau"]), L=int(d["degree_max"]), n_theta=int(d["grid"][0]),
                   n_phi=int(d["grid"][1]), steps=[StepRecord.from_dict(s) for s in d["steps"]],
                   converged=bool(d["converged"]), metadata=dict(d.get("metadata", {})))


# ---------------------------------------------------------------------------
# running the scheme


def init_state(body: WidthBody) -> tuple[np.ndarray, DualFunctional]:
    """Initial pair ``(g^0, xi^0)`` with ``xi^0`` in the duality map at ``g^0``."""
    body.require_convex("init_state")
    return body.coefficients.copy(), duality_select(body)


def _geometry(body: WidthBody) -> dict:
    rep = volume_report(body)
    return {"R": circumradius(body)[0], "r": inradius(body)[0], "V": rep.energy,
            "sigma": surface_area(body), "E": energy(body),
            "convexity_margin": body.convexity_margin}


def run_flow(body: WidthBody, tau: float, n_steps: int, *, bound: float = JUNG_GAP,
             stop_norm: float = CONVERGED_NORM) -> FlowTrace:
    """Run up to ``n_steps`` steps of the scheme from ``body``.

    Stops early, with ``converged = True``, once ``||g^k|| < stop_norm``.
    Each step records geometry, norms, solver residuals and the increment
    ``E*(zeta^k)``, from which the cumulative variation and the slack of
    the discrete energy inequality are accumulated.

    Raises
    ------
    FlowFailure
        When a step or a diagnostic solve fails; the partial trace is
        attached as ``exc.trace``.
    """
    if not tau > 0:
        raise ValueError("tau must be positive")
    if n_steps < 1:
        raise ValueError("n_steps must be at least 1")
    table = body.table
    grid = table.grid
    trace = FlowTrace(float(tau), table.L, grid.n_theta, grid.n_phi,
                      metadata={"initial": dict(body.metadata)})
    try:
        g0, xi0 = init_state(body)
    except Exception as exc:
        raise FlowFailure(f"initial state: {exc}", trace, exc) from exc
    n0 = quotient_norm(g0, table).value
    dn0 = dual_norm(xi0, table)
    trace.steps.append(StepRecord(
        k=0, t=0.0, g=g0, xi=xi0.components.copy(), norm_g=n0, dual_norm_xi=dn0,
        estar_increment=0.0, estar_cumvar=0.0, energy_slack=0.0, kkt_residual=0.0,
        duality_residual=abs(xi0.pair(g0) - n0 * n0) + abs(dn0 - n0), **_geometry(body)))
    xi, prev_body, prev_dn = xi0, body, dn0
    cumvar = slack = 0.0
    for k in range(1, n_steps + 1):
        try:
            res = solve_step(xi, tau, table, g_prev=prev_body, bound=bound, prev_dual_norm=prev_dn)
            zeta = DualFunctional((res.xi_next.components - xi.components) / tau, table.L)
            es = e_star(zeta, table, bound=bound).value
        except (StepFailure, SolverFailure) as exc:
            raise FlowFailure(f"step {k}: {exc}", trace, exc) from exc
        g = res.g_next
        E = energy(g)
        cumvar += tau * es
        slack += 0.5 * prev_dn ** 2 - 0.5 * res.dual_norm_xi ** 2 - tau * es - tau * E
        geo = _geometry(g)
        trace.steps.append(StepRecord(
            k=k, t=k * tau, g=g.coefficients.copy(), xi=res.xi_next.components.copy(),
            norm_g=res.norm_g, dual_norm_xi=res.dual_norm_xi, estar_increment=es,
            estar_cumvar=cumvar, energy_slack=slack, kkt_residual=res.kkt_residual,
            duality_residual=res.duality_residual, **geo))
        logger.info("step %d t=%.4g |g|=%.3e E=%.3e R=%.12f", k, k * tau, res.norm_g, E, geo["R"])
        xi, prev_body, prev_dn = res.xi_next, g, res.dual_norm_xi
        if res.norm_g < stop_norm:
            trace.converged = True
            logger.info("reached the ball at step %d", k)
            break
    return trace


# ---------------------------------------------------------------------------
# diagnostics


def _check_range(trace: FlowTrace, j: int, k: int):
    if not 0 <= j <= k <= trace.n_steps:
        raise ValueError(f"need 0 <= j <= k <= {trace.n_steps}, got ({j}, {k})")


def estar_variation(trace: FlowTrace, j: int, k: int) -> float:
    """``sum_{l=j+1..k} tau E*(zeta^l)``, the variation of ``xi_tau`` on ``[j tau, k tau]``."""
    _check_range(trace, j, k)
    return float(sum(trace.tau * trace.steps[l].estar_increment for l in range(j + 1, k + 1)))


def energy_inequality_slack(trace: FlowTrace, j: int, k: int) -> float:
    """``||xi^j||^2/2 - ||xi^k||^2/2 - E*-variation - sum tau E(g^l)`` over ``(j, k]``.

    Nonnegative for exact solves: each step contributes the Fenchel-Young
    gap ``||xi^{l-1}||^2/2 + ||g^l||^2/2 - <xi^{l-1}, g^l>``.
    """
    _check_range(trace, j, k)
    s = trace.steps
    dissipated = sum(trace.tau * s[l].E for l in range(j + 1, k + 1))
    return float(0.5 * s[j].dual_norm_xi ** 2 - 0.5 * s[k].dual_norm_xi ** 2
                 - estar_variation(trace, j, k) - dissipated)


def _xi_at(trace: FlowTrace, t: float) -> np.ndarray:
    """Piecewise-linear interpolant ``xi_tau(t)``."""
    x = t / trace.tau
    k = min(max(int(math.floor(x)), 0), trace.n_steps - 1)
    theta = x - k
    a, b = trace.steps[k].xi, trace.steps[k + 1].xi
    return a + theta * (b - a)


def _variation_window(trace: FlowTrace, s: float, t: float) -> float:
    """``E*``-variation of ``xi_tau`` on ``[s, t]``."""
    tau, total = trace.tau, 0.0
    for k in range(1, trace.n_steps + 1):
        lo, hi = max(s, (k - 1) * tau), min(t, k * tau)
        if hi > lo:
            total += (hi - lo) * trace.steps[k].estar_increment
    return total


def interpolant_diagnostics(trace: FlowTrace, T: float | None = None, *, n_pairs: int = 20,
                            seed: int = 0, bound: float = JUNG_GAP) -> dict:
    """Check the two interpolant estimates on ``[0, T]``.

    (i) ``int_0^T chi*(xi_tau - zeta_tau) dt <= (tau/2) [||xi^0||^2/2 + (pi/3)(T + tau)]``.
    On the ``k``-th interval the integrand is ``(1 - theta) chi*(xi^{k-1} - xi^k)``,
    so a full interval contributes ``(tau/2) chi*`` and a fraction ``f`` of
    one contributes ``tau (f - f^2/2) chi*``.

    (ii) ``chi*(xi_tau(t) - xi_tau(s)) <= E*-variation on [s, t] + (pi/3)(t - s)``
    on ``n_pairs`` pairs drawn uniformly from ``[0, T]`` with ``seed``.
    """
    tau = trace.tau
    if T is None:
        T = trace.final_time
    if T < 0 or T > trace.final_time + 1e-12 * max(1.0, T):
        raise ValueError(f"T must lie in [0, {trace.final_time}]")
    table = trace.table
    lhs1 = 0.0
    chis = []
    for k in range(1, trace.n_steps + 1):
        f = min(1.0, (T - (k - 1) * tau) / tau)
        if f <= 0:
            break
        diff = DualFunctional(trace.steps[k - 1].xi - trace.steps[k].xi, trace.L)
        c = chi_star(diff, table, bound=bound)
        chis.append(c)
        lhs1 += tau * (f - 0.5 * f * f) * c
    rhs1 = 0.5 * tau * (0.5 * trace.steps[0].dual_norm_xi ** 2 + MAX_ENERGY * (T + tau))

    rng = np.random.default_rng(seed)
    pairs = []
    for _ in range(n_pairs if T > 0 else 0):
        s, t = np.sort(rng.uniform(0.0, T, size=2))
        diff = DualFunctional(_xi_at(trace, t) - _xi_at(trace, s), trace.L)
        lhs = chi_star(diff, table, bound=bound)
        rhs = _variation_window(trace, s, t) + MAX_ENERGY * (t - s)
        pairs.append({"s": float(s), "t": float(t), "lhs": lhs, "rhs": rhs, "slack": rhs - lhs})
    return {
        "T": float(T),
        "l1_lhs": lhs1,
        "l1_bound": rhs1,
        "l1_slack": rhs1 - lhs1,
        "chi_increments": chis,
        "pairs": pairs,
        "equicontinuity_min_slack": min((p["slack"] for p in pairs), default=0.0),
    }


def tail_diagnostics(trace: FlowTrace) -> dict:
    """Monotonicity violations and the large-time product ``t_k E(g^k)``."""
    if not trace.steps:
        raise ValueError("empty trace")

    def violation(x):
        return float(max(np.max(np.diff(x), initial=0.0), 0.0))

    dn, E, R = trace.column("dual_norm_xi"), trace.column("E"), trace.column("R")
    V = trace.column("V")
    tE = trace.column("t") * E
    peak = float(np.max(tE))
    return {
        "dual_norm_violation": violation(dn),
        "energy_violation": violation(E),
        "circumradius_violation": violation(R),
        "volume_violation": violation(-V),
        "circumradius_identity": float(np.max(np.abs(R - 0.5 - trace.column("norm_g")))),
        "t_energy": tE.tolist(),
        "t_energy_max": peak,
        "t_energy_final": float(tE[-1]),
        "t_energy_decayed": bool(tE[-1] <= 0.5 * peak),
    }


# ---------------------------------------------------------------------------
# files


def write_trace_csv(trace: FlowTrace, path) -> None:
    """One row per step, floats at 17 significant digits."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for s in trace.steps:
            row = [str(s.k)] + [_io.format_float(getattr(s, name if name != "time" else "t"))
                                for name in CSV_HEADER[1:]]
            w.writerow(row)


def save_trace(trace: FlowTrace, path) -> None:
    _io.write_json(path, trace.to_dict())


def load_trace(path) -> FlowTrace:
    return FlowTrace.from_dict(_io.read_json(path))


def write_snapshots(trace: FlowTrace, directory, every: int, obj_resolution: int | None = None) -> list:
    """Write body files (and optionally OBJ meshes) for every ``every``-th step and the last."""
    if every < 1:
        raise ValueError("snapshot cadence must be positive")
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    ks = sorted(set(range(0, trace.n_steps + 1, every)) | {trace.n_steps})
    written = []
    for k in ks:
        body = trace.body(k)
        p = out / f"body_{k:05d}.json"
        save_body(body, p)
        written.append(p)
        if obj_resolution:
            q = out / f"body_{k:05d}.obj"
            export_mesh(body, obj_resolution, q)
            written.append(q)
    return written
