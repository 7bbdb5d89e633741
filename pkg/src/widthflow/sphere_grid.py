"""Quadrature on the unit sphere and real spherical-harmonic tables.

The grid is a product rule: Gauss-Legendre nodes in ``cos(theta)`` times
equispaced nodes in ``phi``.  Harmonics are evaluated through their solid
(homogeneous harmonic polynomial) extensions, so values, tangential
gradients and tangential Hessians are all exact polynomial evaluations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache

import numpy as np

__all__ = [
    "SphereGrid",
    "HarmonicTable",
    "GridSizingError",
    "GridTooCoarseError",
    "build_grid",
    "harmonic_table",
    "integrate",
    "basis_index",
    "basis_labels",
    "evaluate_harmonics",
    "evaluate_expansion",
    "tangent_frames",
    "default_table",
    "MAX_DEGREE",
]

MAX_DEGREE = 15


class GridSizingError(ValueError):
    """Raised when a grid is requested below its minimum size."""


class GridTooCoarseError(ValueError):
    """Raised when a grid cannot integrate the products a table needs."""


@dataclass(frozen=True, eq=False)
class SphereGrid:
    """Product quadrature rule on S^2 with an orthonormal tangent frame per node."""

    n_theta: int
    n_phi: int
    nodes: np.ndarray  # (N, 3)
    weights: np.ndarray  # (N,)
    frames: np.ndarray  # (N, 2, 3): e_theta, e_phi

    @property
    def size(self) -> int:
        return self.nodes.shape[0]

    @property
    def exactness(self) -> int:
        """Largest polynomial degree integrated exactly by the rule."""
        return min(2 * self.n_theta - 1, self.n_phi - 1)

    def antipode(self) -> np.ndarray:
        """Index map ``i -> j`` with ``nodes[j] == -nodes[i]``."""
        it, ip = np.divmod(np.arange(self.size), self.n_phi)
        return (self.n_theta - 1 - it) * self.n_phi + (ip + self.n_phi // 2) % self.n_phi


def build_grid(n_theta: int = 24, n_phi: int = 48) -> SphereGrid:
    """Gauss-Legendre x uniform product grid.

    ``n_phi`` must be even so the node set is closed under ``u -> -u``;
    the constant-width symmetry ``h(-u) = 1 - h(u)`` is then reproduced
    exactly by every node-sampled quantity.
    """
    if n_theta < 2 or n_phi < 4:
        raise GridSizingError(f"grid ({n_theta}, {n_phi}) below minimum (2, 4)")
    if n_phi % 2:
        raise GridSizingError(f"n_phi={n_phi} must be even (antipodal closure)")
    x, w = np.polynomial.legendre.leggauss(n_theta)
    # descending cos(theta): north to south
    x, w = x[::-1].copy(), w[::-1].copy()
    phi = 2.0 * np.pi * np.arange(n_phi) / n_phi
    ct = np.repeat(x, n_phi)
    st = np.sqrt(np.clip(1.0 - ct * ct, 0.0, None))
    ph = np.tile(phi, n_theta)
    cp, sp = np.cos(ph), np.sin(ph)
    nodes = np.column_stack([st * cp, st * sp, ct])
    weights = np.repeat(w, n_phi) * (2.0 * np.pi / n_phi)
    e1 = np.column_stack([ct * cp, ct * sp, -st])
    e2 = np.column_stack([-sp, cp, np.zeros_like(sp)])
    frames = np.stack([e1, e2], axis=1)
    return SphereGrid(n_theta, n_phi, nodes, weights, frames)


def integrate(grid: SphereGrid, values) -> float:
    """Quadrature sum ``sum_i w_i v_i``."""
    v = np.asarray(values, dtype=float)
    if v.shape[0] != grid.size:
        raise ValueError(f"expected {grid.size} node values, got {v.shape[0]}")
    return float(grid.weights @ v)


def tangent_frames(points: np.ndarray) -> np.ndarray:
    """Orthonormal tangent pairs (e_theta, e_phi) at arbitrary unit vectors.

    At the poles, where spherical coordinates degenerate, the pair is the
    limit taken along ``phi = 0``.
    """
    p = np.atleast_2d(points)
    rho = np.hypot(p[:, 0], p[:, 1])
    safe = rho > 1e-300
    cp = np.where(safe, p[:, 0] / np.where(safe, rho, 1.0), 1.0)
    sp = np.where(safe, p[:, 1] / np.where(safe, rho, 1.0), 0.0)
    ct = p[:, 2]
    e1 = np.column_stack([ct * cp, ct * sp, -rho])
    e1 /= np.linalg.norm(e1, axis=1, keepdims=True)
    e2 = np.column_stack([-sp, cp, np.zeros_like(sp)])
    return np.stack([e1, e2], axis=1)


# ---------------------------------------------------------------------------
# solid harmonics as exact polynomials


def basis_index(l: int, m: int) -> int:
    return l * l + l + m


def basis_labels(L: int) -> list[tuple[int, int]]:
    return [(l, m) for l in range(L + 1) for m in range(-l, l + 1)]


def _poly_mul(p: dict, q: dict) -> dict:
    out: dict = {}
    for ea, ca in p.items():
        for eb, cb in q.items():
            e = (ea[0] + eb[0], ea[1] + eb[1], ea[2] + eb[2])
            out[e] = out.get(e, 0) + ca * cb
    return {e: c for e, c in out.items() if c != 0}


def _poly_pow(p: dict, k: int) -> dict:
    out = {(0, 0, 0): Fraction(1)}
    for _ in range(k):
        out = _poly_mul(out, p)
    return out


def _poly_diff(p: dict, axis: int) -> dict:
    out: dict = {}
    for e, c in p.items():
        if e[axis] == 0:
            continue
        ne = list(e)
        ne[axis] -= 1
        out[tuple(ne)] = out.get(tuple(ne), 0) + c * e[axis]
    return out


@lru_cache(maxsize=None)
def _solid_harmonic(l: int, m: int) -> tuple:
    """Unnormalized real solid harmonic r^l Y_lm as an exact polynomial.

    Returns ``(poly, norm)`` where ``norm * poly`` restricted to S^2 is the
    L2-orthonormal real harmonic.
    """
    am = abs(m)
    r2 = {(2, 0, 0): Fraction(1), (0, 2, 0): Fraction(1), (0, 0, 2): Fraction(1)}
    # zonal factor Pi_l^m(z, r)
    zonal: dict = {}
    for k in range((l - am) // 2 + 1):
        coef = Fraction(
            (-1) ** k * math.comb(l, k) * math.comb(2 * l - 2 * k, l)
            * math.factorial(l - 2 * k),
            2**l * math.factorial(l - 2 * k - am),
        )
        term = _poly_mul(_poly_pow(r2, k), {(0, 0, l - 2 * k - am): coef})
        for e, c in term.items():
            zonal[e] = zonal.get(e, 0) + c
    # azimuthal factor: Re / Im of (x + i y)^|m|
    azim: dict = {}
    for p in range(am + 1):
        q = am - p  # power of (i y)
        re_im = [(1, 0), (0, 1), (-1, 0), (0, -1)][q % 4]
        c = re_im[0] if m >= 0 else re_im[1]
        if c:
            azim[(p, q, 0)] = Fraction(math.comb(am, p) * c)
    poly = {e: c for e, c in _poly_mul(zonal, azim).items() if c != 0}
    norm = math.sqrt((2 * l + 1) / (4 * math.pi))
    if m != 0:
        norm *= math.sqrt(2.0 * math.factorial(l - am) / math.factorial(l + am))
    return poly, norm


def _monomials(points: np.ndarray, deg: int) -> list:
    pw = [np.ones((points.shape[0], 3))]
    for _ in range(deg):
        pw.append(pw[-1] * points)
    return pw


def _eval_poly(poly: dict, pw: list) -> np.ndarray:
    out = np.zeros(pw[0].shape[0])
    for (a, b, c), coef in poly.items():
        out += float(coef) * (pw[a][:, 0] * pw[b][:, 1] * pw[c][:, 2])
    return out


@lru_cache(maxsize=None)
def _derivative_polys(l: int, m: int) -> tuple:
    poly, norm = _solid_harmonic(l, m)
    grad = tuple(_poly_diff(poly, i) for i in range(3))
    hess = tuple(tuple(_poly_diff(grad[i], j) for j in range(3)) for i in range(3))
    return poly, grad, hess, norm


def evaluate_harmonics(points: np.ndarray, L: int, order: int = 0):
    """Values and derivatives of the real orthonormal harmonics at unit vectors.

    Returns ``(Y, DP, D2P)`` truncated to ``order``: ``Y`` is ``(N, K)``,
    ``DP`` the Euclidean gradient ``(N, K, 3)`` of the solid extension and
    ``D2P`` its Euclidean Hessian ``(N, K, 3, 3)``, with ``K = (L+1)^2``.
    """
    if L > MAX_DEGREE:
        raise ValueError(f"degree {L} above supported maximum {MAX_DEGREE}")
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    pw = _monomials(pts, L)
    n, K = pts.shape[0], (L + 1) ** 2
    Y = np.zeros((n, K))
    DP = np.zeros((n, K, 3)) if order >= 1 else None
    D2P = np.zeros((n, K, 3, 3)) if order >= 2 else None
    for l in range(L + 1):
        for m in range(-l, l + 1):
            k = basis_index(l, m)
            poly, grad, hess, norm = _derivative_polys(l, m)
            Y[:, k] = norm * _eval_poly(poly, pw)
            if order >= 1:
                for i in range(3):
                    DP[:, k, i] = norm * _eval_poly(grad[i], pw)
            if order >= 2:
                for i in range(3):
                    for j in range(i, 3):
                        D2P[:, k, i, j] = norm * _eval_poly(hess[i][j], pw)
                        D2P[:, k, j, i] = D2P[:, k, i, j]
    return Y, DP, D2P


def evaluate_expansion(points: np.ndarray, coefficients) -> np.ndarray:
    """Values of ``sum_k c_k Y_k`` at unit vectors.

    The coefficients are folded into a single polynomial before
    evaluation, which is much cheaper than :func:`evaluate_harmonics` when
    only one expansion is needed at many points.
    """
    c = np.asarray(coefficients, dtype=float)
    L = int(round(math.sqrt(c.shape[0]))) - 1
    if (L + 1) ** 2 != c.shape[0]:
        raise ValueError(f"coefficient vector of length {c.shape[0]} is not (L+1)^2")
    if L > MAX_DEGREE:
        raise ValueError(f"degree {L} above supported maximum {MAX_DEGREE}")
    combined: dict = {}
    for l in range(L + 1):
        for m in range(-l, l + 1):
            ck = c[basis_index(l, m)]
            if ck == 0.0:
                continue
            poly, _, _, norm = _derivative_polys(l, m)
            for key, coef in poly.items():
                combined[key] = combined.get(key, 0.0) + float(ck * norm * float(coef))
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if not combined:
        return np.zeros(pts.shape[0])
    return _eval_poly(combined, _monomials(pts, L))


@dataclass(frozen=True, eq=False)
class HarmonicTable:
    """Harmonic values, frame gradients and frame Hessians at grid nodes.

    ``grad[i, k, a]`` is the component of the tangential gradient of basis
    function ``k`` along ``grid.frames[i, a]``; ``hess[i, k]`` is the 2x2
    covariant Hessian in the same frame.
    """

    grid: SphereGrid
    L: int
    values: np.ndarray  # (N, K)
    grad: np.ndarray  # (N, K, 2)
    hess: np.ndarray  # (N, K, 2, 2)
    degrees: np.ndarray = field(repr=False)  # (K,)
    orders: np.ndarray = field(repr=False)  # (K,)

    @property
    def size(self) -> int:
        return self.values.shape[1]

    def index(self, l: int, m: int) -> int:
        return basis_index(l, m)

    @property
    def odd(self) -> np.ndarray:
        """Basis indices of odd degree."""
        return np.flatnonzero(self.degrees % 2 == 1)

    @property
    def shape_odd(self) -> np.ndarray:
        """Odd basis indices with degree >= 3 (translations removed)."""
        return np.flatnonzero((self.degrees % 2 == 1) & (self.degrees >= 3))

    @property
    def linear(self) -> np.ndarray:
        return np.flatnonzero(self.degrees == 1)

    def laplacian(self) -> np.ndarray:
        """Surface Laplacian of every basis function at the nodes, ``trace(hess)``."""
        return self.hess[:, :, 0, 0] + self.hess[:, :, 1, 1]

    def gram(self) -> np.ndarray:
        Yw = self.values * self.grid.weights[:, None]
        return self.values.T @ Yw


def harmonic_table(grid: SphereGrid, L: int) -> HarmonicTable:
    """Tabulate real orthonormal harmonics of degree <= L on ``grid``.

    The tangential Hessian of ``Y = P|_{S^2}`` for a degree-l solid
    harmonic ``P`` is ``e_a . D2P e_b - l Y delta_ab``; the gradient is the
    tangential projection of ``DP``.
    """
    if L < 1:
        raise ValueError("L must be >= 1")
    if grid.exactness < 2 * L + 4:
        raise GridTooCoarseError(
            f"grid exact to degree {grid.exactness}, need {2 * L + 4} for L={L}"
        )
    Y, DP, D2P = evaluate_harmonics(grid.nodes, L, order=2)
    F = grid.frames
    grad = np.einsum("nkj,naj->nka", DP, F)
    hess = np.einsum("naj,nkjl,nbl->nkab", F, D2P, F)
    labels = basis_labels(L)
    degrees = np.array([l for l, _ in labels])
    orders = np.array([m for _, m in labels])
    hess -= (degrees[None, :] * Y)[:, :, None, None] * np.eye(2)[None, None]
    return HarmonicTable(grid, L, Y, grad, hess, degrees, orders)


@lru_cache(maxsize=16)
def default_table(L: int = 9, n_theta: int = 24, n_phi: int = 48) -> HarmonicTable:
    """Shared table for the common ``(L, grid)`` choices."""
    return harmonic_table(build_grid(n_theta, n_phi), L)
