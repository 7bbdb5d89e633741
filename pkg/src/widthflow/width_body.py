"""Constant-width bodies described by odd spherical-harmonic support functions.

A body of width one has support function ``h = 1/2 + g`` on the sphere with
``g`` odd.  Here ``g`` is a finite combination of odd-degree real harmonics,
so ``h(u) + h(-u) = 1`` holds identically.  Degree-one terms only translate
the body; canonical bodies keep them at zero and the circumcenter is found
by a minimax linear program instead of being assumed.

All node-sampled quantities are taken on the product grid of the attached
:class:`~widthflow.sphere_grid.HarmonicTable`.  Convexity is certified at
the grid nodes only.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy.optimize import linprog

from . import _io
from .sphere_grid import (
    HarmonicTable,
    basis_index,
    basis_labels,
    default_table,
    evaluate_harmonics,
)

logger = logging.getLogger(__name__)

__all__ = [
    "WidthBody",
    "JUNG_GAP",
    "NonUnitDirectionError",
    "NonconvexBodyError",
    "DegreeMismatchError",
    "IntegrationConsistencyError",
    "LPFailure",
    "VolumeReport",
    "chebyshev_fit",
    "energy_weights",
    "frame_operator",
    "evaluate_support",
    "boundary_point",
    "convexity_margin",
    "circumradius",
    "inradius",
    "surface_area",
    "surface_area_det",
    "volume",
    "volume_report",
    "hausdorff_distance",
    "shrink_to_feasible",
    "make_zonal_reuleaux",
    "reuleaux_support_2d",
    "REULEAUX_VERTICES",
    "random_body",
    "export_mesh",
    "mesh_lattice",
    "body_to_dict",
    "body_from_dict",
    "save_body",
    "load_body",
]

#: Bound on the quotient norm of ``g`` over all width-one bodies:
#: ``R <= sqrt(3/8)`` and ``R = 1/2 + ||g||``.
JUNG_GAP = math.sqrt(3.0 / 8.0) - 0.5

UNIT_TOL = 1e-10
#: HiGHS tolerances; problem data are normalized to unit scale first.
LP_OPTIONS = {"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10}
VOLUME_CONSISTENCY_TOL = 1e-5


class NonUnitDirectionError(ValueError):
    pass


class NonconvexBodyError(ValueError):
    pass


class DegreeMismatchError(ValueError):
    pass


class IntegrationConsistencyError(RuntimeError):
    pass


class LPFailure(RuntimeError):
    pass


def energy_weights(degrees) -> np.ndarray:
    """Per-coefficient factor ``l(l+1)/2 - 1`` of the quadratic energy."""
    d = np.asarray(degrees, dtype=float)
    return d * (d + 1.0) / 2.0 - 1.0


def frame_operator(table: HarmonicTable) -> np.ndarray:
    """``B[i, k] = hess Y_k(u_i) + Y_k(u_i) I`` as a ``(N, K, 2, 2)`` array.

    The frame matrix of ``h = 1/2 + sum c_k Y_k`` is ``1/2 I + B c``.
    """
    return table.hess + table.values[:, :, None, None] * np.eye(2)


def _min_eig_2x2(M: np.ndarray) -> np.ndarray:
    a, b, d = M[..., 0, 0], M[..., 0, 1], M[..., 1, 1]
    return 0.5 * (a + d) - np.hypot(0.5 * (a - d), b)


def _unit_rows(u) -> np.ndarray:
    p = np.atleast_2d(np.asarray(u, dtype=float))
    if p.shape[-1] != 3:
        raise NonUnitDirectionError("directions must be 3-vectors")
    err = np.abs(np.linalg.norm(p, axis=1) - 1.0)
    if err.max(initial=0.0) > UNIT_TOL:
        raise NonUnitDirectionError(f"direction not of unit length (|u|-1 = {err.max():.3e})")
    return p


@dataclass(frozen=True, eq=False)
class WidthBody:
    """Width-one body with support ``h = 1/2 + sum_k c_k Y_k`` (odd ``k`` only).

    ``coefficients`` is a full ``(L+1)^2`` vector in the table's basis order;
    every even-degree entry is zero.
    """

    coefficients: np.ndarray
    table: HarmonicTable = field(repr=False)
    metadata: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        c = np.array(self.coefficients, dtype=float)
        if c.shape != (self.table.size,):
            raise DegreeMismatchError(
                f"expected {self.table.size} coefficients for L={self.table.L}, got {c.shape}"
            )
        even = self.table.degrees % 2 == 0
        if np.any(c[even] != 0.0):
            raise ValueError("width-one support functions carry odd degrees only")
        c.setflags(write=False)
        object.__setattr__(self, "coefficients", c)

    # -- construction ---------------------------------------------------
    @classmethod
    def ball(cls, L: int = 9, table: HarmonicTable | None = None) -> "WidthBody":
        table = table if table is not None else default_table(L)
        return cls(np.zeros(table.size), table, {"kind": "ball"})

    @classmethod
    def from_triples(cls, L: int, triples, table: HarmonicTable | None = None,
                     metadata: dict | None = None) -> "WidthBody":
        table = table if table is not None else default_table(L)
        if table.L != L:
            raise DegreeMismatchError(f"table degree {table.L} != body degree {L}")
        c = np.zeros(table.size)
        for l, m, v in triples:
            l, m = int(l), int(m)
            if not (0 <= l <= L and -l <= m <= l):
                raise ValueError(f"invalid harmonic index ({l}, {m}) for L={L}")
            c[basis_index(l, m)] = float(v)
        return cls(c, table, dict(metadata or {}))

    def with_coefficients(self, coefficients, **metadata) -> "WidthBody":
        return WidthBody(np.asarray(coefficients, float), self.table, {**self.metadata, **metadata})

    @property
    def L(self) -> int:
        return self.table.L

    degree_max = L

    @property
    def grid(self):
        return self.table.grid

    @property
    def shape_coefficients(self) -> np.ndarray:
        """Coefficients of odd degree >= 3 (the translation-free part)."""
        return self.coefficients[self.table.shape_odd]

    # -- node caches ----------------------------------------------------
    @cached_property
    def node_g(self) -> np.ndarray:
        return self.table.values @ self.coefficients

    @cached_property
    def node_support(self) -> np.ndarray:
        return 0.5 + self.node_g

    @cached_property
    def node_gradient(self) -> np.ndarray:
        """Frame components of the tangential gradient of ``h``, ``(N, 2)``."""
        return np.einsum("nka,k->na", self.table.grad, self.coefficients)

    @cached_property
    def node_hessian(self) -> np.ndarray:
        return np.einsum("nkab,k->nab", self.table.hess, self.coefficients)

    @cached_property
    def frame_matrix(self) -> np.ndarray:
        """``M(u_i) = hess h + h I`` at each node, ``(N, 2, 2)``."""
        return self.node_hessian + self.node_support[:, None, None] * np.eye(2)

    @cached_property
    def convexity_margin(self) -> float:
        return float(_min_eig_2x2(self.frame_matrix).min())

    def require_convex(self, what: str = "operation") -> None:
        if self.convexity_margin < 0.0:
            raise NonconvexBodyError(
                f"{what} needs a convex body; node margin is {self.convexity_margin:.3e}"
            )


# -- pointwise evaluation ----------------------------------------------------


def evaluate_support(body: WidthBody, u) -> float | np.ndarray:
    """``h(u) = 1/2 + sum c_k Y_k(u)`` at one or several unit vectors."""
    p = _unit_rows(u)
    Y, _, _ = evaluate_harmonics(p, body.L)
    h = 0.5 + Y @ body.coefficients
    return float(h[0]) if np.ndim(u) == 1 else h


def boundary_point(body: WidthBody, u) -> np.ndarray:
    """Point ``DH(u) = grad h(u) + h(u) u`` of the boundary with outer normal ``u``."""
    body.require_convex("boundary_point")
    p = _unit_rows(u)
    Y, DP, _ = evaluate_harmonics(p, body.L, order=1)
    c = body.coefficients
    deg = body.table.degrees
    # tangential gradient of Y_k is DP_k - l Y_k u
    grad = np.einsum("nkj,k->nj", DP, c) - (Y @ (deg * c))[:, None] * p
    h = 0.5 + Y @ c
    x = grad + h[:, None] * p
    return x[0] if np.ndim(u) == 1 else x


def convexity_margin(body: WidthBody) -> float:
    """Smallest eigenvalue of ``hess h + h I`` over the grid nodes."""
    return body.convexity_margin


# -- minimax linear programs -------------------------------------------------


@dataclass
class ChebyshevFit:
    value: float
    a: np.ndarray
    multipliers: np.ndarray  # signed node weights
    residual: float


def chebyshev_fit(values, nodes) -> ChebyshevFit:
    """Solve ``min_a max_i |v_i + a . u_i|`` as a linear program.

    The signed multipliers ``lam`` returned satisfy ``sum |lam| = 1``,
    ``sum lam_i u_i = 0`` and ``sum lam_i v_i = value`` at optimality.
    """
    v = np.asarray(values, dtype=float)
    U = np.asarray(nodes, dtype=float)
    n = v.shape[0]
    scale = float(np.max(np.abs(v), initial=0.0))
    if scale == 0.0:
        lam = np.zeros(n)
        return ChebyshevFit(0.0, np.zeros(3), lam, 0.0)
    one = np.ones((n, 1))
    A = np.vstack([np.hstack([U, -one]), np.hstack([-U, -one])])
    b = np.concatenate([-v, v]) / scale
    res = linprog(np.r_[0.0, 0.0, 0.0, 1.0], A_ub=A, b_ub=b,
                  bounds=[(None, None)] * 4, method="highs-ds", options=LP_OPTIONS)
    if res.status != 0:
        raise LPFailure(f"minimax LP failed: {res.message}")
    y = res.ineqlin.marginals
    lam = y[n:] - y[:n]
    a, t = scale * res.x[:3], scale * float(res.x[3])
    resid = max(float(np.max(np.abs(v + U @ a)) - t), 0.0)
    return ChebyshevFit(t, a, lam, resid)


def circumradius(body: WidthBody) -> tuple[float, np.ndarray]:
    """Circumradius ``R = 1/2 + min_a max |g + a.u|`` and its center ``-a``."""
    fit = chebyshev_fit(body.node_g, body.grid.nodes)
    return 0.5 + fit.value, -fit.a


def inradius(body: WidthBody) -> tuple[float, np.ndarray]:
    """Inradius ``max_a min_i (h(u_i) - a.u_i)`` and the incenter, by its own LP."""
    h = body.node_support
    U = body.grid.nodes
    n = h.shape[0]
    A = np.hstack([U, np.ones((n, 1))])
    res = linprog(np.r_[0.0, 0.0, 0.0, -1.0], A_ub=A, b_ub=h,
                  bounds=[(None, None)] * 4, method="highs-ds", options=LP_OPTIONS)
    if res.status != 0:
        raise LPFailure(f"inradius LP failed: {res.message}")
    return float(res.x[3]), res.x[:3].copy()


def hausdorff_distance(b1: WidthBody, b2: WidthBody, quotient: bool = False) -> float:
    """Max node difference of support functions, optionally modulo translation."""
    if b1.L != b2.L:
        raise DegreeMismatchError(f"degrees differ: {b1.L} vs {b2.L}")
    d = b1.node_g - b2.node_g
    if not quotient:
        return float(np.max(np.abs(d)))
    return chebyshev_fit(d, b1.grid.nodes).value


# -- integral functionals ----------------------------------------------------


def surface_area(body: WidthBody) -> float:
    """``int (h^2 - |grad h|^2 / 2) dsigma``."""
    body.require_convex("surface_area")
    h = body.node_support
    gh = body.node_gradient
    return float(body.grid.weights @ (h * h - 0.5 * np.einsum("na,na->n", gh, gh)))


def surface_area_det(body: WidthBody) -> float:
    """Surface area as ``int det(hess h + h I) dsigma``."""
    body.require_convex("surface_area_det")
    return float(body.grid.weights @ np.linalg.det(body.frame_matrix))


@dataclass
class VolumeReport:
    energy: float
    blaschke: float
    det: float

    @property
    def discrepancy(self) -> float:
        v = (self.energy, self.blaschke, self.det)
        return max(abs(x - y) for x in v for y in v)


def volume_report(body: WidthBody) -> VolumeReport:
    """Volume by the energy identity, Blaschke's relation, and the determinant integral."""
    body.require_convex("volume")
    c = body.coefficients
    E = float(energy_weights(body.table.degrees) @ (c * c))
    v_energy = math.pi / 6.0 - 0.5 * E
    v_blaschke = 0.5 * surface_area(body) - math.pi / 3.0
    v_det = float(body.grid.weights @ (body.node_support * np.linalg.det(body.frame_matrix))) / 3.0
    return VolumeReport(v_energy, v_blaschke, v_det)


def volume(body: WidthBody) -> float:
    """Volume ``pi/6 - E(g)/2``, cross-checked against two other formulas."""
    rep = volume_report(body)
    if rep.discrepancy > VOLUME_CONSISTENCY_TOL:
        raise IntegrationConsistencyError(
            f"volume formulas disagree by {rep.discrepancy:.3e} "
            f"(energy {rep.energy:.12f}, blaschke {rep.blaschke:.12f}, det {rep.det:.12f})"
        )
    return rep.energy


# -- constructors ------------------------------------------------------------


def _coeff_vector(coeffs, table: HarmonicTable) -> np.ndarray:
    if isinstance(coeffs, dict):
        c = np.zeros(table.size)
        for (l, m), v in coeffs.items():
            c[basis_index(l, m)] = v
        return c
    c = np.asarray(coeffs, dtype=float)
    if c.shape == (table.size,):
        return c.copy()
    if c.shape == (table.shape_odd.size,):
        full = np.zeros(table.size)
        full[table.shape_odd] = c
        return full
    raise DegreeMismatchError(f"cannot interpret {c.shape} coefficients for L={table.L}")


def shrink_to_feasible(coeffs, target_margin: float = 1e-6, L: int = 9,
                       table: HarmonicTable | None = None) -> WidthBody:
    """Scale ``g`` toward the ball until the node margin reaches ``target_margin``.

    The frame matrix of ``lam * g`` is ``1/2 I + lam B c``, so its smallest
    eigenvalue over the nodes is exactly ``1/2 + lam * mu`` with ``mu`` the
    smallest node eigenvalue of ``B c``.  The largest admissible ``lam`` is
    therefore available in closed form.  The factor is also capped so that
    the quotient norm stays within ``JUNG_GAP``.
    """
    if target_margin < 0 or target_margin >= 0.5:
        raise ValueError("target_margin must lie in [0, 1/2)")
    table = table if table is not None else default_table(L)
    c = _coeff_vector(coeffs, table)
    if np.any(c[table.degrees % 2 == 0] != 0.0):
        raise ValueError("width-one support functions carry odd degrees only")
    Bc = np.einsum("nkab,k->nab", frame_operator(table), c)
    mu = float(_min_eig_2x2(Bc).min())
    lam = 1.0
    if 0.5 + mu < target_margin:
        lam = (0.5 - target_margin) / (-mu)
    qn = chebyshev_fit(table.values @ c, table.grid.nodes).value
    if lam * qn > JUNG_GAP:
        lam = JUNG_GAP / qn
    lam = min(max(lam, 0.0), 1.0)
    return WidthBody(lam * c, table, {"shrink_factor": lam})


def random_body(L: int = 9, amplitude: float = 0.05, seed: int = 0,
                table: HarmonicTable | None = None, target_margin: float = 1e-6) -> WidthBody:
    """Uniform random odd coefficients of degree >= 3, shrunk to the target margin.

    Randomness comes from ``numpy.random.default_rng(seed)`` (PCG64).
    """
    if not amplitude > 0:
        raise ValueError("amplitude must be positive")
    table = table if table is not None else default_table(L)
    rng = np.random.default_rng(seed)
    c = np.zeros(table.size)
    idx = table.shape_odd
    c[idx] = rng.uniform(-amplitude, amplitude, idx.size)
    body = shrink_to_feasible(c, target_margin, table=table)
    return body.with_coefficients(body.coefficients, kind="random", seed=int(seed),
                                  amplitude=float(amplitude))


#: Vertices of the width-one Reuleaux triangle, centroid at the origin, one
#: vertex on the positive vertical axis; coordinates are (radial, vertical).
REULEAUX_VERTICES = np.array([
    [0.0, math.sqrt(3.0) / 3.0],
    [0.5, -math.sqrt(3.0) / 6.0],
    [-0.5, -math.sqrt(3.0) / 6.0],
])


def reuleaux_support_2d(d) -> np.ndarray:
    """Support function of the width-one Reuleaux triangle at unit vectors ``d``.

    Directions within 30 degrees of a vertex direction are supported by that
    vertex; all others lie in the normal cone of the opposite arc, which is
    centered at a vertex ``V`` and gives ``V . d + 1``.
    """
    d = np.atleast_2d(np.asarray(d, dtype=float))
    ang = np.arctan2(d[:, 1], d[:, 0])
    V = REULEAUX_VERTICES
    beta = np.arctan2(V[:, 1], V[:, 0])
    # angular offset to each vertex direction, wrapped to (-pi, pi]
    off = np.angle(np.exp(1j * (ang[:, None] - beta[None, :])))
    near = np.argmin(np.abs(off), axis=1)
    far = np.argmin(np.abs(np.angle(np.exp(1j * (off - np.pi)))), axis=1)
    in_vertex = np.abs(off[np.arange(len(d)), near]) <= math.pi / 6.0
    hv = np.einsum("ij,ij->i", d, V[near])
    ha = np.einsum("ij,ij->i", d, V[far]) + 1.0
    return np.where(in_vertex, hv, ha)


def _zonal_projection(L: int, table: HarmonicTable, n_quad: int) -> np.ndarray:
    """Odd zonal coefficients (degree >= 3) of the rotated Reuleaux triangle.

    The zonal support ``h(theta)`` is piecewise analytic in ``cos(theta)``
    with breaks at polar angles 30, 90 and 150 degrees, so a Gauss-Legendre
    rule on each piece integrates the projection to machine precision.
    """
    xg, wg = np.polynomial.legendre.leggauss(n_quad)
    breaks = np.cos(np.radians([180.0, 150.0, 90.0, 30.0, 0.0]))
    c = np.zeros(table.size)
    zonal = [basis_index(l, 0) for l in range(3, L + 1, 2)]
    for lo, hi in zip(breaks[:-1], breaks[1:]):
        x = 0.5 * (lo + hi) + 0.5 * (hi - lo) * xg
        w = 0.5 * (hi - lo) * wg
        st = np.sqrt(1.0 - x * x)
        g = reuleaux_support_2d(np.column_stack([st, x])) - 0.5
        Y, _, _ = evaluate_harmonics(np.column_stack([st, np.zeros_like(x), x]), L)
        for k in zonal:
            c[k] += 2.0 * math.pi * float(np.sum(w * g * Y[:, k]))
    return c


def _nearest_feasible(c0: np.ndarray, table: HarmonicTable, target_margin: float,
                      index: np.ndarray) -> np.ndarray:
    """L2-nearest coefficients (on ``index``) with node margin >= target."""
    from .conic import solve_cone_qp

    B = frame_operator(table)[:, index]
    S = np.stack([B[:, :, 0, 0] + B[:, :, 1, 1], B[:, :, 0, 0] - B[:, :, 1, 1],
                  2.0 * B[:, :, 0, 1]], axis=1)
    N = table.grid.size
    h = np.tile([1.0 - 2.0 * target_margin, 0.0, 0.0], N)
    sol = solve_cone_qp(2.0 * np.ones(index.size), -2.0 * c0[index],
                        -S.reshape(3 * N, index.size), h, 0)
    c = np.zeros(table.size)
    c[index] = sol.x
    return c


def make_zonal_reuleaux(L: int = 9, table: HarmonicTable | None = None,
                        target_margin: float = 1e-6, n_quad: int = 64,
                        projection: str = "shrink") -> WidthBody:
    """Harmonic approximation of the Reuleaux triangle rotated about its axis.

    Parameters
    ----------
    L : int
        Odd truncation degree, at least 3.
    projection : {"shrink", "nearest"}
        How the truncated expansion is made node-convex: ``"shrink"`` scales
        it toward the ball; ``"nearest"`` takes the closest zonal coefficient
        vector (Euclidean) whose node margin reaches ``target_margin``.
    """
    if L < 3 or L % 2 == 0:
        raise ValueError("L must be odd and at least 3")
    table = table if table is not None else default_table(L)
    c = _zonal_projection(L, table, n_quad)
    if projection == "shrink":
        body = shrink_to_feasible(c, target_margin, table=table)
        lam = body.metadata["shrink_factor"]
    elif projection == "nearest":
        zonal = np.array([basis_index(l, 0) for l in range(3, L + 1, 2)])
        body = WidthBody(_nearest_feasible(c, table, target_margin, zonal), table)
        lam = None
    else:
        raise ValueError(f"unknown projection {projection!r}")
    logger.debug("zonal Reuleaux L=%d projection=%s factor=%s", L, projection, lam)
    return body.with_coefficients(body.coefficients, kind="zonal-reuleaux",
                                  projection=projection, shrink_factor=lam)


# -- mesh --------------------------------------------------------------------


def mesh_lattice(resolution: int) -> tuple[np.ndarray, np.ndarray]:
    """Unit directions and outward triangles of a latitude-longitude lattice.

    ``resolution`` interior latitude rings of ``2 * resolution`` points
    each, plus the two poles.
    """
    n = int(resolution)
    if n < 2:
        raise ValueError("resolution must be >= 2")
    m = 2 * n
    theta = math.pi * np.arange(1, n + 1) / (n + 1)
    phi = 2.0 * math.pi * np.arange(m) / m
    st, ct = np.sin(theta), np.cos(theta)
    ring = np.stack([
        np.outer(st, np.cos(phi)), np.outer(st, np.sin(phi)), np.outer(ct, np.ones(m))
    ], axis=-1).reshape(-1, 3)
    dirs = np.vstack([[0.0, 0.0, 1.0], ring, [0.0, 0.0, -1.0]])
    north, south = 0, n * m + 1

    def vid(i, k):
        return 1 + i * m + (k % m)

    faces = []
    for k in range(m):
        faces.append((north, vid(0, k), vid(0, k + 1)))
    for i in range(n - 1):
        for k in range(m):
            a, b = vid(i, k), vid(i, k + 1)
            c, d = vid(i + 1, k), vid(i + 1, k + 1)
            faces.append((a, c, d))
            faces.append((a, d, b))
    for k in range(m):
        faces.append((south, vid(n - 1, k + 1), vid(n - 1, k)))
    return dirs, np.array(faces, dtype=int)


def export_mesh(body: WidthBody, resolution: int, path=None) -> tuple[np.ndarray, np.ndarray]:
    """Boundary mesh with vertices ``DH(u)`` on the direction lattice.

    Returns ``(vertices, faces)`` with zero-based faces; writes a Wavefront
    OBJ file (``v`` and ``f`` records only) when ``path`` is given.
    """
    body.require_convex("export_mesh")
    dirs, faces = mesh_lattice(resolution)
    verts = boundary_point(body, dirs)
    if path is not None:
        lines = [f"v {_io.format_float(x)} {_io.format_float(y)} {_io.format_float(z)}"
                 for x, y, z in verts]
        lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in faces]
        Path(path).write_text("\n".join(lines) + "\n")
    return verts, faces


# -- file format -------------------------------------------------------------


def body_to_dict(body: WidthBody) -> dict:
    trip = [[l, m, float(body.coefficients[basis_index(l, m)])]
            for l, m in basis_labels(body.L) if l % 2 == 1]
    meta = {k: v for k, v in body.metadata.items() if v is not None}
    meta.setdefault("grid", [body.grid.n_theta, body.grid.n_phi])
    return {"degree_max": body.L, "coefficients": trip, "metadata": meta}


def body_from_dict(data: dict, table: HarmonicTable | None = None) -> WidthBody:
    try:
        L = int(data["degree_max"])
        triples = data["coefficients"]
    except (KeyError, TypeError, ValueError) as exc:
        raise ValueError(f"malformed body record: {exc}") from None
    meta = dict(data.get("metadata") or {})
    if table is None:
        grid = meta.get("grid")
        table = default_table(L, *grid) if grid else default_table(L)
    return WidthBody.from_triples(L, triples, table=table, metadata=meta)


def save_body(body: WidthBody, path) -> None:
    _io.write_json(path, body_to_dict(body))


def load_body(path, table: HarmonicTable | None = None) -> WidthBody:
    return body_from_dict(_io.read_json(path), table)
