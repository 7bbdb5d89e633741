"""Spherical-cap smoothing of atomic measures that annihilate linear functions.

For a kernel ``psi`` supported on ``[1 - eps, 1]`` with
``int psi(u.v) dsigma(u) = 1``, a measure ``mu = sum m_j delta_{u_j}`` is
smoothed to

    mu~(u) = sum_j m_j psi(u.u_j),      mu^eps(u) = mu~(u) - a.u,
    a = (3 / 4 pi) int u mu~(u) dsigma(u),

so that ``mu^eps`` again annihilates linear functions.

Integrals against ``mu~`` are evaluated with a quadrature aligned to each
cap: Gauss-Legendre in ``s = u.u_j`` over ``[1 - eps, 1]`` times a uniform
rule in the azimuth about ``u_j``.  The azimuthal rule is exact for
polynomials of degree below its size, and the radial rule only has to
resolve the one-dimensional bump.  A product grid on the sphere would need
thousands of latitudes to resolve a small cap to the same accuracy.
"""

from __future__ import annotations

import functools
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import _io
from .sphere_grid import SphereGrid, evaluate_expansion
from .width_body import UNIT_TOL, WidthBody, circumradius

logger = logging.getLogger(__name__)

__all__ = [
    "DiscreteMeasure",
    "CapKernel",
    "Mollified",
    "PPerpViolation",
    "P_PERP_TOL",
    "cap_kernel",
    "cap_quadrature",
    "mollify",
    "mollify_error",
    "mollify_report",
    "random_measure",
    "save_measure",
    "load_measure",
]

P_PERP_TOL = 1e-12
N_RADIAL = 128
N_AZIMUTH = 32


class PPerpViolation(ValueError):
    """The measure does not annihilate linear functions."""


@dataclass(frozen=True, eq=False)
class DiscreteMeasure:
    """Finite signed combination of point masses on the unit sphere."""

    directions: np.ndarray
    masses: np.ndarray

    def __post_init__(self):
        u = np.array(self.directions, dtype=float).reshape(-1, 3)
        m = np.array(self.masses, dtype=float).reshape(-1)
        if u.shape[0] != m.shape[0]:
            raise ValueError("one mass per direction required")
        if u.size and np.max(np.abs(np.linalg.norm(u, axis=1) - 1.0)) > UNIT_TOL:
            raise ValueError("atom directions must be unit vectors")
        res = float(np.linalg.norm(m @ u)) if m.size else 0.0
        if res > P_PERP_TOL:
            raise PPerpViolation(f"|sum m_j u_j| = {res:.3e} exceeds {P_PERP_TOL}")
        u.setflags(write=False)
        m.setflags(write=False)
        object.__setattr__(self, "directions", u)
        object.__setattr__(self, "masses", m)

    @classmethod
    def empty(cls) -> "DiscreteMeasure":
        return cls(np.zeros((0, 3)), np.zeros(0))

    @property
    def size(self) -> int:
        return self.masses.size

    @property
    def tv(self) -> float:
        return float(np.sum(np.abs(self.masses)))

    @property
    def p_perp_residual(self) -> float:
        return float(np.linalg.norm(self.masses @ self.directions)) if self.size else 0.0

    def pair(self, f) -> float:
        """``sum m_j f(u_j)`` for a callable on ``(n, 3)`` point arrays."""
        if not self.size:
            return 0.0
        return float(self.masses @ f(self.directions))

    def to_list(self) -> list:
        return [[float(x), float(y), float(z), float(m)]
                for (x, y, z), m in zip(self.directions, self.masses)]

    @classmethod
    def from_list(cls, rows) -> "DiscreteMeasure":
        a = np.array(rows, dtype=float).reshape(-1, 4)
        return cls(a[:, :3], a[:, 3])


def random_measure(n_atoms: int, seed: int, scale: float = 1.0) -> DiscreteMeasure:
    """Seeded measure with uniform directions and masses projected onto ``P-perp``."""
    if n_atoms < 4:
        raise ValueError("need at least 4 atoms for a generic measure annihilating linear functions")
    rng = np.random.default_rng(seed)
    u = rng.standard_normal((n_atoms, 3))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    m = scale * rng.uniform(-1.0, 1.0, n_atoms)
    # remove the component of m along the columns of u
    q, _ = np.linalg.qr(u)
    m = m - q @ (q.T @ m)
    m = m - q @ (q.T @ m)
    return DiscreteMeasure(u, m)


def save_measure(mu: DiscreteMeasure, path) -> None:
    _io.write_json(path, mu.to_list())


def load_measure(path) -> DiscreteMeasure:
    return DiscreteMeasure.from_list(_io.read_json(path))


# ---------------------------------------------------------------------------
# kernel


@functools.lru_cache(maxsize=8)
def _gauss_legendre(n: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = np.polynomial.legendre.leggauss(n)
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def _bump(x: np.ndarray) -> np.ndarray:
    """``exp(-1 / (x (1 - x)))`` on ``(0, 1)``, zero elsewhere."""
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    inside = (x > 0.0) & (x < 1.0)
    xi = x[inside]
    out[inside] = np.exp(-1.0 / (xi * (1.0 - xi)))
    return out


@dataclass(frozen=True)
class CapKernel:
    """Normalized smooth bump ``psi`` in the variable ``s = u.v``.

    The profile is ``exp(-1 / (x (1 - x)))`` with ``x = (s - 1 + eps) / eps``,
    the standard bump on ``[1 - eps, 1]`` after an affine change of
    variable (the unscaled form underflows for small ``eps``).
    """

    epsilon: float
    normalization: float

    def profile(self, s) -> np.ndarray:
        s = np.asarray(s, dtype=float)
        return self.normalization * _bump((s - (1.0 - self.epsilon)) / self.epsilon)

    __call__ = profile

    def radial_rule(self, n: int = N_RADIAL) -> tuple[np.ndarray, np.ndarray]:
        """Gauss-Legendre nodes in ``s`` on ``[1 - eps, 1]`` and weights ``w_i psi(s_i)``."""
        x, w = _gauss_legendre(n)
        s = 1.0 - self.epsilon + 0.5 * self.epsilon * (x + 1.0)
        return s, 0.5 * self.epsilon * w * self.profile(s)

    def zonal_mass(self, n: int = N_RADIAL) -> float:
        """``2 pi int psi(s) ds``, the sphere integral of ``psi(u.v)``."""
        return float(2.0 * math.pi * np.sum(self.radial_rule(n)[1]))

    def moment(self, k: int, n: int = N_RADIAL) -> float:
        """``2 pi int psi(s) s^k ds``."""
        s, w = self.radial_rule(n)
        return float(2.0 * math.pi * np.sum(w * s ** k))


def cap_kernel(epsilon: float) -> CapKernel:
    """Kernel of cap height ``epsilon`` normalized to unit sphere integral."""
    eps = float(epsilon)
    if not 0.0 < eps < 1.0:
        raise ValueError(f"epsilon must lie in (0, 1), got {epsilon}")
    x, w = _gauss_legendre(N_RADIAL)
    raw = 2.0 * math.pi * 0.5 * eps * float(np.sum(w * _bump(0.5 * (x + 1.0))))
    return CapKernel(eps, 1.0 / raw)


def _orthonormal_frame(v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    a = np.array([1.0, 0.0, 0.0]) if abs(v[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    e1 = a - (a @ v) * v
    e1 /= np.linalg.norm(e1)
    return e1, np.cross(v, e1)


def cap_quadrature(v, kernel: CapKernel, n_radial: int = N_RADIAL,
                   n_azimuth: int = N_AZIMUTH) -> tuple[np.ndarray, np.ndarray]:
    """Points and weights with ``sum W f(P) = int f(u) psi(u.v) dsigma(u)``.

    Exact in the azimuth for polynomials of degree ``< n_azimuth``.
    """
    v = np.asarray(v, dtype=float)
    e1, e2 = _orthonormal_frame(v)
    s, ws = kernel.radial_rule(n_radial)
    phi = 2.0 * math.pi * np.arange(n_azimuth) / n_azimuth
    rho = np.sqrt(np.clip(1.0 - s * s, 0.0, None))
    ring = np.cos(phi)[:, None] * e1 + np.sin(phi)[:, None] * e2          # (n_az, 3)
    pts = s[:, None, None] * v + rho[:, None, None] * ring[None]           # (n_r, n_az, 3)
    W = np.repeat(ws * (2.0 * math.pi / n_azimuth), n_azimuth)
    return pts.reshape(-1, 3), W


# ---------------------------------------------------------------------------
# smoothing


@dataclass
class Mollified:
    """``mu^eps`` sampled at grid nodes, with the linear correction ``a``."""

    measure: DiscreteMeasure
    kernel: CapKernel
    grid: SphereGrid | None
    correction: np.ndarray
    tilde_values: np.ndarray = field(repr=False)
    values: np.ndarray = field(repr=False)

    def integrate_tilde(self, f):
        """``int f mu~ dsigma`` by cap quadrature.

        ``f`` maps ``(n, 3)`` points to ``(n,)`` or ``(n, d)`` values; all
        caps are evaluated in one call.
        """
        if not self.measure.size:
            return 0.0
        rules = [cap_quadrature(u, self.kernel) for u in self.measure.directions]
        P = np.concatenate([r[0] for r in rules])
        W = np.concatenate([m * r[1] for m, r in zip(self.measure.masses, rules)])
        out = W @ f(P)
        return float(out) if np.ndim(out) == 0 else out

    def integrate(self, f, linear_moment=None) -> float:
        """``int f mu^eps dsigma``.

        ``linear_moment`` is ``int f(u) u dsigma``; by default it is computed
        with a product rule exact for polynomials of moderate degree.
        """
        if linear_moment is None:
            linear_moment = _linear_moment(f)
        return self.integrate_tilde(f) - float(self.correction @ linear_moment)


def _linear_moment(f, n: int = 32) -> np.ndarray:
    """``int f(u) u dsigma`` by a product rule exact for polynomial ``f`` of degree ``< n - 1``."""
    x, w = _gauss_legendre(n)
    phi = 2.0 * math.pi * np.arange(2 * n) / (2 * n)
    st = np.sqrt(1.0 - x * x)
    P = np.stack([np.outer(st, np.cos(phi)), np.outer(st, np.sin(phi)),
                  np.repeat(x[:, None], 2 * n, axis=1)], axis=-1).reshape(-1, 3)
    W = np.repeat(w, 2 * n) * (math.pi / n)
    return (W * f(P)) @ P


def mollify(mu: DiscreteMeasure, kernel: CapKernel, grid: SphereGrid | None = None) -> Mollified:
    """Smooth ``mu`` with ``kernel``.

    ``a = (3 / 4 pi) int u mu~ dsigma`` is computed by cap quadrature; since
    ``int u_i u_k dsigma = (4 pi / 3) delta_ik``, the corrected density
    ``mu~ - a.u`` annihilates linear functions.  Node values on ``grid``
    (when given) sample ``mu~`` and ``mu^eps``.
    """
    if mu.p_perp_residual > P_PERP_TOL:
        raise PPerpViolation("measure must annihilate linear functions")
    out = Mollified(mu, kernel, grid, np.zeros(3), np.zeros(0), np.zeros(0))
    if mu.size:
        out.correction = 3.0 / (4.0 * math.pi) * out.integrate_tilde(lambda P: P)
    if grid is not None:
        tilde = np.zeros(grid.size)
        for u, m in zip(mu.directions, mu.masses):
            tilde += m * kernel.profile(grid.nodes @ u)
        out.tilde_values = tilde
        out.values = tilde - grid.nodes @ out.correction
    return out


def _centered_support(body: WidthBody):
    """``g_c(u) = g(u) - a.u`` with ``a`` the circumcenter, as a point-array callable."""
    _, center = circumradius(body)
    c = body.coefficients

    def g(P):
        return evaluate_expansion(P, c) - P @ center

    return g


def mollify_report(mu: DiscreteMeasure, kernel: CapKernel, body: WidthBody) -> dict:
    """Errors of both smoothing stages against their bounds.

    ``tilde_error = |<mu~, g_c> - <mu, g_c>|`` is bounded by ``sqrt(2 eps) tv``
    because the centered support function is ``R``-Lipschitz with ``R < 1``
    and ``|u - v| <= sqrt(2 eps)`` on a cap.  ``error`` is the same for
    ``mu^eps`` and is bounded by ``4 sqrt(2 eps) tv``.
    """
    body.require_convex("mollify_report")
    eps = kernel.epsilon
    tv = mu.tv
    if not mu.size:
        return {"epsilon": eps, "tv": 0.0, "error": 0.0, "bound": 0.0,
                "tilde_error": 0.0, "tilde_bound": 0.0, "ratio": 0.0, "correction_norm": 0.0}
    g = _centered_support(body)
    mol = mollify(mu, kernel)
    exact = mu.pair(g)
    tilde = mol.integrate_tilde(g)
    smooth = tilde - float(mol.correction @ _linear_moment(g))
    bound = 4.0 * math.sqrt(2.0 * eps) * tv
    err = abs(smooth - exact)
    return {
        "epsilon": eps,
        "tv": tv,
        "error": err,
        "bound": bound,
        "tilde_error": abs(tilde - exact),
        "tilde_bound": math.sqrt(2.0 * eps) * tv,
        "ratio": err / bound,
        "correction_norm": float(np.linalg.norm(mol.correction)),
    }


def mollify_error(mu: DiscreteMeasure, kernel: CapKernel, body: WidthBody) -> float:
    """``|<mu^eps, g> - <mu, g>|`` for the body's (centered) support function."""
    return mollify_report(mu, kernel, body)["error"]
