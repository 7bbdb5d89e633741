"""Seeded property suites run by ``widthflow verify``.

Every case is a pure function of ``(seed, index)`` and returns a record
with its inputs and one entry per check, so a failing case can be
reproduced from the report alone.
"""

from __future__ import annotations

import logging
import math

import numpy as np

from .convex_program import (
    chi_star,
    dual_norm,
    duality_select,
    e_star,
    energy,
    quotient_norm,
)
from .flow_engine import (
    energy_inequality_slack,
    estar_variation,
    interpolant_diagnostics,
    run_flow,
    tail_diagnostics,
)
from .mollifier import cap_kernel, mollify_report, random_measure
from .width_body import (
    JUNG_GAP,
    boundary_point,
    circumradius,
    evaluate_support,
    inradius,
    random_body,
    volume_report,
)

logger = logging.getLogger(__name__)

__all__ = ["SUITES", "run_suite", "geometry_case", "duality_case", "flow_case", "mollifier_case"]

JUNG_RADIUS = math.sqrt(3.0 / 8.0)
EPSILONS = (0.2, 0.1, 0.05, 0.01)


def _check(value: float, tol: float, kind: str = "abs") -> dict:
    """``kind="abs"``: ``|value| <= tol``; ``"le"``: ``value <= tol``; ``"ge"``: ``value >= tol``."""
    value = float(value)
    if kind == "abs":
        ok = abs(value) <= tol
    elif kind == "le":
        ok = value <= tol
    else:
        ok = value >= tol
    return {"value": value, "tol": float(tol), "kind": kind, "pass": bool(ok)}


def _record(name, index, seed, inputs, checks):
    return {"suite": name, "case": index, "seed": seed, "inputs": inputs, "checks": checks,
            "pass": all(c["pass"] for c in checks.values())}


def _directions(rng, n):
    u = rng.standard_normal((n, 3))
    return u / np.linalg.norm(u, axis=1, keepdims=True)


def geometry_case(index: int, seed: int, L: int = 9, amplitude: float = 0.05) -> dict:
    s = seed + index
    body = random_body(L, amplitude, s)
    rng = np.random.default_rng([s, 1])
    u = _directions(rng, 256)
    R, cc = circumradius(body)
    r, ic = inradius(body)
    rep = volume_report(body)
    width = evaluate_support(body, u) + evaluate_support(body, -u) - 1.0
    wmap = boundary_point(body, u) - boundary_point(body, -u) - u
    checks = {
        "width": _check(np.max(np.abs(width)), 1e-12),
        "r_plus_R": _check(r + R - 1.0, 1e-8),
        "centers": _check(np.linalg.norm(ic - cc), 1e-7),
        "jung": _check(R, JUNG_RADIUS + 1e-6, "le"),
        "energy_cap": _check(energy(body), math.pi / 3.0 + 1e-8, "le"),
        "width_map": _check(np.max(np.abs(wmap)), 1e-10),
        "volume_blaschke": _check(rep.energy - rep.blaschke, 1e-8),
        "volume_det": _check(rep.energy - rep.det, 1e-5),
    }
    return _record("geometry", index, seed, {"L": L, "amplitude": amplitude, "body_seed": s}, checks)


def duality_case(index: int, seed: int, L: int = 9, amplitude: float = 0.05) -> dict:
    s = seed + index
    body = random_body(L, amplitude, s)
    table = body.table
    t = quotient_norm(body).value
    xi = duality_select(body)
    dn = dual_norm(xi, table)
    chi = chi_star(xi, table)
    zeta = xi * (1.0 / max(dn, 1e-300))
    es = e_star(zeta, table)
    recomputed = zeta.pair(es.argmax) - energy(es.argmax)
    checks = {
        "pairing": _check(xi.pair(body) - t * t, 1e-7),
        "dual_norm": _check(dn - t, 1e-6),
        "chi_star_bound": _check(chi - JUNG_GAP * dn, 1e-6, "le"),
        "fenchel_young_gap": _check(es.gap, 1e-6, "le"),
        "estar_value": _check(es.value - recomputed, 1e-9),
    }
    return _record("duality", index, seed, {"L": L, "amplitude": amplitude, "body_seed": s}, checks)


def flow_case(index: int, seed: int, L: int = 9, amplitude: float = 0.05,
              tau: float = 0.05, n_steps: int = 200, n_pairs: int = 20) -> dict:
    s = seed + index
    body = random_body(L, amplitude, s)
    trace = run_flow(body, tau, n_steps)
    N = trace.n_steps
    tail = tail_diagnostics(trace)
    interp = interpolant_diagnostics(trace, n_pairs=n_pairs, seed=s)
    slacks = [energy_inequality_slack(trace, j, k) for j in range(N + 1) for k in range(j + 1, N + 1)] or [0.0]
    checks = {
        "dual_norm_monotone": _check(tail["dual_norm_violation"], 1e-7, "le"),
        "energy_monotone": _check(tail["energy_violation"], 1e-7, "le"),
        "circumradius_monotone": _check(tail["circumradius_violation"], 1e-7, "le"),
        "volume_monotone": _check(tail["volume_violation"], 1e-7, "le"),
        "circumradius_identity": _check(tail["circumradius_identity"], 1e-8),
        "estar_variation": _check(estar_variation(trace, 0, N)
                                  - 0.5 * trace.steps[0].dual_norm_xi ** 2, 1e-6, "le"),
        "energy_slack": _check(min(slacks), -1e-6, "ge"),
        "l1_estimate": _check(interp["l1_slack"], -1e-6, "ge"),
        "equicontinuity": _check(interp["equicontinuity_min_slack"], -1e-6, "ge"),
        "convergence": _check(trace.steps[-1].norm_g - 0.1 * trace.steps[0].norm_g, 0.0, "le"),
        "tail_product": _check(tail["t_energy_final"] - 0.5 * tail["t_energy_max"], 0.0, "le"),
    }
    inputs = {"L": L, "amplitude": amplitude, "body_seed": s, "tau": tau, "n_steps": n_steps}
    return _record("flow", index, seed, inputs, checks)


def mollifier_case(index: int, seed: int, L: int = 9, amplitude: float = 0.05) -> dict:
    s = seed + index
    eps = EPSILONS[index % len(EPSILONS)]
    n_atoms = 4 + index % 7
    mu = random_measure(n_atoms, s)
    kernel = cap_kernel(eps)
    rep = mollify_report(mu, kernel, random_body(L, amplitude, s))
    checks = {
        "normalization": _check(kernel.zonal_mass() - 1.0, 1e-9),
        "tilde_bound": _check(rep["tilde_error"] - rep["tilde_bound"], 1e-7, "le"),
        "full_bound": _check(rep["error"] - rep["bound"], 1e-7, "le"),
    }
    inputs = {"epsilon": eps, "n_atoms": n_atoms, "measure_seed": s, "body_seed": s,
              "L": L, "amplitude": amplitude}
    return _record("mollifier", index, seed, inputs, checks)


SUITES = {
    "geometry": geometry_case,
    "duality": duality_case,
    "flow": flow_case,
    "mollifier": mollifier_case,
}


def run_suite(name: str, seed: int, count: int, **options) -> dict:
    """Run ``count`` cases of one suite (or every suite for ``"all"``)."""
    names = list(SUITES) if name == "all" else [name]
    for n in names:
        if n not in SUITES:
            raise KeyError(f"unknown suite {n!r}; choose from {sorted(SUITES)} or 'all'")
    cases = []
    for n in names:
        for i in range(count):
            rec = SUITES[n](i, seed, **options)
            logger.info("%s case %d: %s", n, i, "pass" if rec["pass"] else "FAIL")
            cases.append(rec)
    return {"suites": names, "seed": seed, "count": count,
            "pass": all(c["pass"] for c in cases), "cases": cases}
