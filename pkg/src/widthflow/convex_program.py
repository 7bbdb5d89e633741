"""Finite-dimensional convex programs behind the flow.

The primal space is the span of real harmonics of degree ``<= L`` modulo
linear functions, normed by ``||g|| = min_a max_i |g(u_i) + a.u_i|`` over
the grid nodes.  A dual functional ``xi`` is stored by its harmonic
components and pairs with ``g`` through the coefficient dot product; its
degree-one block is zero, so it annihilates translations.  The dual norm
is the exact dual of the node-sampled quotient norm, which makes the
duality identity ``||g||^2 = <xi, g> = ||xi||_*^2`` hold to solver
precision.

The discrete constraint set ``C`` consists of odd coefficient vectors of
degree ``>= 3`` whose frame matrix ``hess h + h I`` is positive
semidefinite at every node and whose quotient norm is at most
``sqrt(3/8) - 1/2``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

from .conic import ConeSolverError, solve_cone_qp
from .sphere_grid import HarmonicTable, basis_index, basis_labels, default_table
from .width_body import (
    JUNG_GAP,
    LP_OPTIONS,
    LPFailure,
    WidthBody,
    chebyshev_fit,
    energy_weights,
    frame_operator,
)

logger = logging.getLogger(__name__)

__all__ = [
    "DualFunctional",
    "StepResult",
    "ConjugateValue",
    "QuotientNorm",
    "DualityExtractionError",
    "PreconditionError",
    "SolverFailure",
    "StepFailure",
    "quotient_norm",
    "dual_norm",
    "duality_select",
    "energy",
    "energy_gradient",
    "chi_star",
    "e_star",
    "solve_step",
    "cone_rows",
    "node_functional",
]

DUALITY_PAIRING_TOL = 1e-7
DUALITY_NORM_TOL = 1e-6
STEP_TOL = 1e-6
MONOTONE_TOL = 1e-8


class DualityExtractionError(RuntimeError):
    pass


class PreconditionError(ValueError):
    pass


class SolverFailure(RuntimeError):
    def __init__(self, message, record=None):
        super().__init__(message)
        self.record = record or {}


class StepFailure(RuntimeError):
    """A step whose postconditions failed; ``result`` holds the computed step."""

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


# ---------------------------------------------------------------------------
# dual functionals


@dataclass(frozen=True, eq=False)
class DualFunctional:
    """Linear functional ``<xi, g> = sum_k xi_k c_k`` with zero degree-one block."""

    components: np.ndarray
    L: int

    def __post_init__(self):
        v = np.array(self.components, dtype=float)
        K = (self.L + 1) ** 2
        if v.shape != (K,):
            raise ValueError(f"expected {K} components for L={self.L}, got {v.shape}")
        lin = slice(1, 4)
        if np.any(v[lin] != 0.0):
            raise PreconditionError("degree-one block must vanish (functional must annihilate translations)")
        v.setflags(write=False)
        object.__setattr__(self, "components", v)

    @classmethod
    def zero(cls, L: int) -> "DualFunctional":
        return cls(np.zeros((L + 1) ** 2), L)

    @classmethod
    def from_vector(cls, v, L: int, tol: float = 1e-9) -> "DualFunctional":
        """Build from a full vector, clearing a degree-one block that is zero to ``tol``."""
        v = np.array(v, dtype=float)
        lin = v[1:4]
        scale = max(1.0, float(np.max(np.abs(v), initial=0.0)))
        if np.max(np.abs(lin), initial=0.0) > tol * scale:
            raise PreconditionError(f"degree-one block {lin} is not zero")
        v[1:4] = 0.0
        return cls(v, L)

    def pair(self, g) -> float:
        c = _coeff_array(g)
        return float(self.components @ c)

    def __add__(self, other: "DualFunctional") -> "DualFunctional":
        _same_degree(self, other)
        return DualFunctional(self.components + other.components, self.L)

    def __sub__(self, other: "DualFunctional") -> "DualFunctional":
        _same_degree(self, other)
        return DualFunctional(self.components - other.components, self.L)

    def __mul__(self, s: float) -> "DualFunctional":
        return DualFunctional(float(s) * self.components, self.L)

    __rmul__ = __mul__

    def __truediv__(self, s: float) -> "DualFunctional":
        return DualFunctional(self.components / float(s), self.L)

    def __neg__(self) -> "DualFunctional":
        return DualFunctional(-self.components, self.L)

    def to_dict(self) -> dict:
        trip = [[l, m, float(self.components[basis_index(l, m)])]
                for l, m in basis_labels(self.L) if l != 1]
        return {"degree_max": self.L, "components": trip}

    @classmethod
    def from_dict(cls, data: dict) -> "DualFunctional":
        L = int(data["degree_max"])
        v = np.zeros((L + 1) ** 2)
        for l, m, x in data["components"]:
            l, m = int(l), int(m)
            if l == 1:
                raise PreconditionError("degree-one components are not part of the format")
            if not (0 <= l <= L and -l <= m <= l):
                raise ValueError(f"invalid index ({l}, {m})")
            v[basis_index(l, m)] = float(x)
        return cls(v, L)


def _same_degree(a, b):
    if a.L != b.L:
        raise ValueError(f"degree mismatch {a.L} vs {b.L}")


def _coeff_array(g) -> np.ndarray:
    if isinstance(g, WidthBody):
        return g.coefficients
    return np.asarray(g, dtype=float)


def _table_for(g=None, L=None, table=None) -> HarmonicTable:
    if table is not None:
        return table
    if isinstance(g, WidthBody):
        return g.table
    if L is None:
        c = _coeff_array(g)
        L = int(round(math.sqrt(c.shape[0]))) - 1
    return default_table(L)


def node_functional(table: HarmonicTable, weights) -> np.ndarray:
    """Harmonic components of ``sum_i w_i delta_{u_i}``: ``Y^T w``."""
    return table.values.T @ np.asarray(weights, dtype=float)


# ---------------------------------------------------------------------------
# norms and the duality map


@dataclass
class QuotientNorm:
    value: float
    witness_a: np.ndarray
    node_multipliers: np.ndarray

    def __iter__(self):
        return iter((self.value, self.witness_a, self.node_multipliers))


def quotient_norm(g, table: HarmonicTable | None = None) -> QuotientNorm:
    """``min_a max_i |g(u_i) + a.u_i|`` with signed node multipliers.

    Unpacks as ``(value, witness_a, node_multipliers)``.
    """
    table = _table_for(g, table=table)
    c = _coeff_array(g)
    fit = chebyshev_fit(table.values @ c, table.grid.nodes)
    return QuotientNorm(fit.value, fit.a, fit.multipliers)


def dual_norm(xi: DualFunctional, table: HarmonicTable | None = None,
              method: str = "ipm") -> float:
    """``max <xi, c>`` over coefficient vectors ``c`` with ``max_i |g_c(u_i)| <= 1``.

    Because the degree-one block of ``xi`` vanishes, letting ``c`` range
    over every degree (linear part included) is the same as maximizing
    over ``|g_c(u_i) + a.u_i| <= 1`` with a free translation ``a``.

    Parameters
    ----------
    method : {"ipm", "highs"}
        ``"ipm"`` uses the dense interior-point solver; ``"highs"`` solves
        the same program, with an explicit ``a``, by the HiGHS dual simplex.
    """
    _check_annihilates(xi)
    table = table if table is not None else default_table(xi.L)
    v = xi.components
    scale = float(np.max(np.abs(v), initial=0.0))
    if scale == 0.0:
        return 0.0
    Y = table.values
    N, K = Y.shape
    if method == "highs":
        U = table.grid.nodes
        A1 = np.hstack([Y, U])
        res = linprog(-np.r_[v / scale, np.zeros(3)], A_ub=np.vstack([A1, -A1]),
                      b_ub=np.ones(2 * N), bounds=[(None, None)] * (K + 3),
                      method="highs-ds", options=LP_OPTIONS)
        if res.status == 3:
            raise PreconditionError("dual norm LP unbounded: functional does not annihilate translations")
        if res.status != 0:
            raise LPFailure(f"dual norm LP failed: {res.message}")
        return scale * float(-res.fun)
    if method != "ipm":
        raise ValueError(f"unknown method {method!r}")
    sol = _solve(np.zeros(K), -v / scale, np.vstack([Y, -Y]), np.ones(2 * N), 2 * N, "dual_norm")
    c = sol.x
    # rescale onto the feasible set so the value is an attained lower bound
    c = c / max(1.0, float(np.max(np.abs(Y @ c))))
    return scale * float(v / scale @ c)


def duality_select(g, table: HarmonicTable | None = None,
                   check: bool = True) -> DualFunctional:
    """An element ``xi`` of the duality map at ``g``.

    Built from the minimax multipliers ``lam`` as ``xi = ||g|| sum lam_i
    delta_{u_i}``; since ``sum |lam| = 1`` and ``sum lam_i u_i = 0`` this
    pairs to ``||g||^2`` and has dual norm ``||g||``.
    """
    table = _table_for(g, table=table)
    c = _coeff_array(g)
    vals = table.values @ c
    last = None
    for attempt in range(2):
        v = vals if attempt == 0 else vals + 1e-12 * np.cos(np.arange(vals.size))
        fit = chebyshev_fit(v, table.grid.nodes)
        if fit.value == 0.0:
            return DualFunctional.zero(table.L)
        xi = DualFunctional.from_vector(fit.value * node_functional(table, fit.multipliers),
                                        table.L, tol=1e-7)
        if not check:
            return xi
        t = quotient_norm(c, table).value
        pair_res = abs(xi.pair(c) - t * t)
        norm_res = abs(dual_norm(xi, table) - t)
        if pair_res <= DUALITY_PAIRING_TOL and norm_res <= DUALITY_NORM_TOL:
            return xi
        last = (pair_res, norm_res)
        logger.debug("duality extraction residuals %s; retrying with perturbation", last)
    raise DualityExtractionError(f"duality residuals too large: pairing {last[0]:.2e}, norm {last[1]:.2e}")


# ---------------------------------------------------------------------------
# energy


def energy(g, table: HarmonicTable | None = None) -> float:
    """``E(g) = sum (l(l+1)/2 - 1) c^2``, the quadratic energy."""
    c = _coeff_array(g)
    L = int(round(math.sqrt(c.shape[0]))) - 1
    deg = np.repeat(np.arange(L + 1), 2 * np.arange(L + 1) + 1)
    return float(energy_weights(deg) @ (c * c))


def energy_gradient(g) -> np.ndarray:
    """Gradient ``(l(l+1) - 2) c`` of :func:`energy` in coefficient space."""
    c = _coeff_array(g)
    L = int(round(math.sqrt(c.shape[0]))) - 1
    deg = np.repeat(np.arange(L + 1), 2 * np.arange(L + 1) + 1)
    return 2.0 * energy_weights(deg) * c


# ---------------------------------------------------------------------------
# programs over the discrete constraint set


def cone_rows(table: HarmonicTable) -> np.ndarray:
    """Second-order-cone form of the node convexity constraints.

    For ``M = [[alpha, beta], [beta, gamma]]``, ``M >= 0`` iff
    ``(alpha + gamma, alpha - gamma, 2 beta)`` lies in the 3-dimensional
    Lorentz cone.  Returns ``S`` of shape ``(N, 3, n)`` acting on the shape
    coefficients, so the cone vector is ``(1, 0, 0) + S c``.
    """
    B = frame_operator(table)[:, table.shape_odd]
    return np.stack([B[:, :, 0, 0] + B[:, :, 1, 1], B[:, :, 0, 0] - B[:, :, 1, 1],
                     2.0 * B[:, :, 0, 1]], axis=1)


@dataclass
class _Blocks:
    Y: np.ndarray  # (N, n) shape columns
    U: np.ndarray
    S: np.ndarray  # (N, 3, n)
    w: np.ndarray  # energy weights on shape columns
    idx: np.ndarray


_BLOCK_CACHE: dict = {}


def _blocks(table: HarmonicTable) -> _Blocks:
    key = id(table)
    hit = _BLOCK_CACHE.get(key)
    if hit is not None and hit[0] is table:
        return hit[1]
    idx = table.shape_odd
    blk = _Blocks(table.values[:, idx], table.grid.nodes, cone_rows(table),
                  energy_weights(table.degrees[idx]), idx)
    _BLOCK_CACHE[key] = (table, blk)
    return blk


def _constraint_system(blk: _Blocks, bound: float, scale: float, epigraph: bool):
    """Rows for ``|Yc + Ua| <= b`` (or ``<= t``, ``t <= b``) and the cones.

    Variables are ``(c, a)`` or ``(c, a, t)`` in units where the data were
    divided by ``scale``; the cone offset becomes ``(1, 0, 0) / scale``.
    """
    N, n = blk.Y.shape
    if epigraph:
        one = np.ones((N, 1))
        A = np.hstack([blk.Y, blk.U, -one])
        top = np.vstack([A, np.hstack([-blk.Y, -blk.U, -one]),
                         np.r_[np.zeros(n + 3), 1.0][None]])
        htop = np.r_[np.zeros(2 * N), bound / scale]
        extra = 1
    else:
        A = np.hstack([blk.Y, blk.U])
        top = np.vstack([A, -A])
        htop = np.full(2 * N, bound / scale)
        extra = 0
    soc = np.hstack([-blk.S.reshape(3 * N, n), np.zeros((3 * N, 3 + extra))])
    G = np.vstack([top, soc])
    h = np.r_[htop, np.tile([1.0 / scale, 0.0, 0.0], N)]
    return G, h, top.shape[0]


def _check_annihilates(xi: DualFunctional):
    if np.any(xi.components[1:4] != 0.0):
        raise PreconditionError("functional must vanish on the degree-one block")


def _solve(P, q, G, h, nl, what):
    try:
        sol = solve_cone_qp(P, q, G, h, nl)
    except ConeSolverError as exc:
        raise SolverFailure(f"{what}: {exc}", exc.solution.as_record()) from None
    return sol


def chi_star(xi: DualFunctional, table: HarmonicTable | None = None,
             bound: float = JUNG_GAP) -> float:
    """Support function of the discrete constraint set: ``max_{g in C} <xi, g>``."""
    _check_annihilates(xi)
    table = table if table is not None else default_table(xi.L)
    blk = _blocks(table)
    q0 = xi.components[blk.idx]
    s = float(np.max(np.abs(q0), initial=0.0))
    if s == 0.0:
        return 0.0
    n = blk.idx.size
    G, h, nl = _constraint_system(blk, bound, 1.0, epigraph=False)
    sol = _solve(np.zeros(n + 3), -np.r_[q0 / s, np.zeros(3)], G, h, nl, "chi_star")
    return s * float(q0 / s @ sol.x[:n])


@dataclass
class ConjugateValue:
    """Value and maximizer of ``E*``; unpacks as ``(value, argmax)``."""

    value: float
    argmax: np.ndarray
    gap: float
    solver: dict = field(default_factory=dict)

    def __iter__(self):
        return iter((self.value, self.argmax))


def e_star(zeta: DualFunctional, table: HarmonicTable | None = None,
           bound: float = JUNG_GAP) -> ConjugateValue:
    """``E*(zeta) = max_{g in C} <zeta, g> - E(g)`` with its maximizer.

    ``gap`` is the primal-dual gap of the conic certificate, an upper bound
    on how far ``value`` sits below the true maximum.
    """
    _check_annihilates(zeta)
    table = table if table is not None else default_table(zeta.L)
    blk = _blocks(table)
    q0 = zeta.components[blk.idx]
    n = blk.idx.size
    if not np.any(q0):
        return ConjugateValue(0.0, np.zeros(table.size), 0.0, {"status": "trivial"})
    G, h, nl = _constraint_system(blk, bound, 1.0, epigraph=False)
    P = np.r_[2.0 * blk.w, np.zeros(3)]
    sol = _solve(P, -np.r_[q0, np.zeros(3)], G, h, nl, "e_star")
    c = np.zeros(table.size)
    c[blk.idx] = sol.x[:n]
    value = float(q0 @ sol.x[:n] - blk.w @ (sol.x[:n] ** 2))
    gap = abs(sol.primal_objective - sol.dual_objective)
    return ConjugateValue(value, c, gap, sol.as_record())


# ---------------------------------------------------------------------------
# one step of the implicit scheme


@dataclass
class StepResult:
    g_next: WidthBody
    xi_next: DualFunctional
    kkt_residual: float
    duality_residual: float
    estar_of_increment: float | None = None
    norm_g: float = 0.0
    dual_norm_xi: float = 0.0
    node_weights: np.ndarray | None = field(default=None, repr=False)
    solver: dict = field(default_factory=dict, repr=False)


def solve_step(xi_prev: DualFunctional, tau: float, table: HarmonicTable | None = None,
               g_prev: WidthBody | None = None, bound: float = JUNG_GAP,
               prev_dual_norm: float | None = None, check: bool = True) -> StepResult:
    """Advance the implicit scheme by one step of length ``tau``.

    Solves ``max_{g in C} <xi_prev, g> - tau E(g) - ||g||^2 / 2`` with the
    norm in epigraph form (``|g(u_i) + a.u_i| <= t``, penalty ``t^2 / 2``).
    The next functional is assembled from the norm-row multipliers ``m``
    as ``xi = sum m_i delta_{u_i}``.  Postconditions checked:

    * duality: ``|<xi, g> - ||g||^2| + |||xi||_* - ||g|||``;
    * optimality: ``xi - xi_prev + tau (grad E(g) + nu)`` in dual norm,
      where ``nu`` aggregates the cone multipliers (even-degree components
      are normal to ``C`` because every element of ``C`` is odd);
    * monotonicity of ``||xi||_*`` and, when ``g_prev`` is supplied, of ``E``.
    """
    if not tau > 0:
        raise ValueError("tau must be positive")
    _check_annihilates(xi_prev)
    table = table if table is not None else default_table(xi_prev.L)
    blk = _blocks(table)
    n = blk.idx.size
    s = prev_dual_norm if prev_dual_norm is not None else dual_norm(xi_prev, table)
    if s == 0.0 or not np.any(xi_prev.components[blk.idx]):
        # the ball is stationary; even-degree parts of xi_prev are normal to C
        ball = WidthBody(np.zeros(table.size), table)
        zero = DualFunctional.zero(table.L)
        return StepResult(ball, zero, 0.0, 0.0, norm_g=0.0, dual_norm_xi=0.0,
                          node_weights=np.zeros(table.grid.size), solver={"status": "stationary"})
    N = table.grid.size
    G, h, nl = _constraint_system(blk, bound, s, epigraph=True)
    P = np.r_[2.0 * tau * blk.w, np.zeros(3), 1.0]
    q = -np.r_[xi_prev.components[blk.idx] / s, np.zeros(4)]
    sol = _solve(P, q, G, h, nl, "solve_step")
    x = sol.x
    c = np.zeros(table.size)
    c[blk.idx] = s * x[:n]
    z = sol.z
    m = s * (z[:N] - z[N:2 * N])
    z_soc = z[nl:].reshape(N, 3)
    xi_vec = node_functional(table, m)
    lin_res = float(np.max(np.abs(xi_vec[1:4]), initial=0.0))
    xi_vec[1:4] = 0.0
    xi = DualFunctional(xi_vec, table.L)
    g = WidthBody(c, table, {"kind": "flow"})
    record = {**sol.as_record(), "epigraph_t": s * float(x[-1]), "linear_block": lin_res,
              "scale": s}
    result = StepResult(g, xi, math.nan, math.nan, node_weights=m, solver=record)
    if not check:
        return result

    qn = quotient_norm(c, table).value
    dn = dual_norm(xi, table)
    result.norm_g, result.dual_norm_xi = qn, dn
    result.duality_residual = abs(xi.pair(c) - qn * qn) + abs(dn - qn)
    # first-order optimality on the shape block
    nu_shape = -s * np.einsum("nj,njk->k", z_soc, blk.S) / tau
    r = np.zeros(table.size)
    r[blk.idx] = (xi.components[blk.idx] - xi_prev.components[blk.idx]
                  + tau * (energy_gradient(c)[blk.idx] + nu_shape))
    result.kkt_residual = dual_norm(DualFunctional(r, table.L), table)
    record["nu_norm"] = float(np.linalg.norm(nu_shape))

    problems = []
    if result.duality_residual > STEP_TOL:
        problems.append(f"duality residual {result.duality_residual:.2e}")
    if result.kkt_residual > STEP_TOL:
        problems.append(f"optimality residual {result.kkt_residual:.2e}")
    if dn > s + MONOTONE_TOL:
        problems.append(f"dual norm increased {s:.12e} -> {dn:.12e}")
    if g_prev is not None and energy(c) > energy(g_prev) + MONOTONE_TOL:
        problems.append(f"energy increased {energy(g_prev):.12e} -> {energy(c):.12e}")
    if problems:
        raise StepFailure("step postconditions failed: " + "; ".join(problems), result)
    return result
