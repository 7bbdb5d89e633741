"""Dense primal-dual interior-point solver for small cone quadratic programs.

Solves::

    minimize    1/2 x'Px + q'x
    subject to  Gx + s = h,   s in K

where ``K`` is a product of a nonnegative orthant and three-dimensional
second-order cones ``{(s0, s1) : s0 >= |s1|}``.  The number of variables
is small (tens) while the number of cones is large (one per quadrature
node), so the reduced Newton system is formed densely and factored by
Cholesky.  Scaling is Nesterov-Todd; steps use Mehrotra's predictor-
corrector.  All cone arithmetic is vectorized over the cone index.
"""

from __future__ import annotations

import contextlib
import logging
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve, LinAlgError

logger = logging.getLogger(__name__)

__all__ = ["ConeSolution", "ConeSolverError", "solve_cone_qp", "SETTINGS", "solver_settings"]

#: Process-wide defaults used when ``solve_cone_qp`` is called without
#: explicit tolerances; change them through :func:`solver_settings`.
SETTINGS = {"feastol": 1e-10, "abstol": 1e-11, "reltol": 1e-10, "max_iter": 80}


@contextlib.contextmanager
def solver_settings(**overrides):
    """Temporarily override entries of :data:`SETTINGS`."""
    unknown = set(overrides) - set(SETTINGS)
    if unknown:
        raise KeyError(f"unknown solver settings: {sorted(unknown)}")
    saved = dict(SETTINGS)
    SETTINGS.update(overrides)
    try:
        yield SETTINGS
    finally:
        SETTINGS.clear()
        SETTINGS.update(saved)


@dataclass
class ConeSolution:
    x: np.ndarray
    s: np.ndarray
    z: np.ndarray
    status: str
    iterations: int
    primal_objective: float
    dual_objective: float
    primal_residual: float
    dual_residual: float
    gap: float

    def as_record(self) -> dict:
        return {
            "status": self.status,
            "iterations": self.iterations,
            "primal_objective": self.primal_objective,
            "dual_objective": self.dual_objective,
            "primal_residual": self.primal_residual,
            "dual_residual": self.dual_residual,
            "gap": self.gap,
        }


class ConeSolverError(RuntimeError):
    """Solver stopped without meeting its tolerances; carries the last iterate."""

    def __init__(self, message: str, solution: ConeSolution):
        super().__init__(message)
        self.solution = solution


# -- second-order cone helpers; arrays are (ncones, 3) -----------------------


def _det(X):
    # factored form avoids cancellation near the cone boundary
    r = np.linalg.norm(X[:, 1:], axis=1)
    return (X[:, 0] - r) * (X[:, 0] + r)


def _jordan(X, Y):
    out = np.empty_like(X)
    out[:, 0] = np.einsum("ij,ij->i", X, Y)
    out[:, 1:] = X[:, :1] * Y[:, 1:] + Y[:, :1] * X[:, 1:]
    return out


def _jordan_solve(L, R, d=None):
    """Solve ``L o U = R`` for ``U``; ``d`` is ``det L`` when known exactly."""
    d = _det(L) if d is None else d
    U = np.empty_like(R)
    U[:, 0] = (L[:, 0] * R[:, 0] - np.einsum("ij,ij->i", L[:, 1:], R[:, 1:])) / d
    U[:, 1:] = (R[:, 1:] - U[:, :1] * L[:, 1:]) / L[:, :1]
    return U


def _min_eig(X):
    return X[:, 0] - np.linalg.norm(X[:, 1:], axis=1)


def _max_step_soc(X, D):
    """Largest alpha >= 0 with X + alpha D in the cone (X interior); inf if none."""
    a = _det(D)
    b = X[:, 0] * D[:, 0] - np.einsum("ij,ij->i", X[:, 1:], D[:, 1:])
    c = _det(X)
    out = np.full(X.shape[0], np.inf)
    disc = b * b - a * c
    sq = np.sqrt(np.clip(disc, 0.0, None))
    small = np.abs(a) <= 1e-300
    with np.errstate(divide="ignore", invalid="ignore"):
        # a < 0: exactly one positive root
        neg = (a < 0) & ~small
        out[neg] = (c[neg] / (-b[neg] + sq[neg]))  # stable form of (-b - sq)/a
        # a > 0: exit only if b < 0 and roots are real
        pos = (a > 0) & ~small & (b < 0) & (disc >= 0)
        out[pos] = c[pos] / (-b[pos] + sq[pos])
        lin = small & (b < 0)
        out[lin] = -c[lin] / (2.0 * b[lin])
    out[~np.isfinite(out) | (out < 0)] = np.inf
    # stay in the positive sheet
    hit0 = D[:, 0] < 0
    out[hit0] = np.minimum(out[hit0], -X[hit0, 0] / D[hit0, 0])
    return out


class _Scaling:
    """Nesterov-Todd scaling ``W`` with ``W z = W^{-1} s = lambda``."""

    def __init__(self, sL, zL, sQ, zQ):
        self.wL = np.sqrt(sL / zL)
        ds = np.sqrt(_det(sQ))
        dz = np.sqrt(_det(zQ))
        sb = sQ / ds[:, None]
        zb = zQ / dz[:, None]
        gamma = np.sqrt((1.0 + np.einsum("ij,ij->i", sb, zb)) / 2.0)
        wb = np.empty_like(sb)
        wb[:, 0] = sb[:, 0] + zb[:, 0]
        wb[:, 1:] = sb[:, 1:] - zb[:, 1:]
        wb /= (2.0 * gamma)[:, None]
        self.wb = wb
        self.beta = np.sqrt(ds / dz)
        # the scaled point lambda = W z in closed form; applying W to z
        # loses the small eigenvalue to cancellation near the boundary
        lb = np.empty_like(sb)
        lb[:, 0] = gamma
        lb[:, 1:] = ((gamma + zb[:, 0])[:, None] * sb[:, 1:] + (gamma + sb[:, 0])[:, None] * zb[:, 1:]) \
            / (sb[:, 0] + zb[:, 0] + 2.0 * gamma)[:, None]
        self.lamL = np.sqrt(sL * zL)
        self.lamQ = np.sqrt(ds * dz)[:, None] * lb
        self.lam_det = ds * dz

    def apply(self, xL, XQ, inverse=False):
        wb, beta = self.wb, self.beta
        sgn = -1.0 if inverse else 1.0
        wL = self.wL.reshape((-1,) + (1,) * (xL.ndim - 1))
        yL = xL / wL if inverse else xL * wL
        # XQ is (nq, 3) or (nq, 3, k) for a block of columns
        extra = (1,) * (XQ.ndim - 2)
        wx = wb.reshape(wb.shape + extra)
        w0 = wx[:, 0]
        w1 = wx[:, 1:]
        x0 = XQ[:, 0]
        x1 = XQ[:, 1:]
        w1x1 = np.sum(w1 * x1, axis=1)
        y0 = w0 * x0 + sgn * w1x1
        coef = w1x1 / (1.0 + w0) + sgn * x0
        y1 = x1 + w1 * coef[:, None]
        scale = (1.0 / beta if inverse else beta).reshape((-1,) + extra)
        YQ = np.empty_like(XQ)
        YQ[:, 0] = scale * y0
        YQ[:, 1:] = scale[:, None] * y1
        return yL, YQ


def _split(v, nl):
    return v[:nl], v[nl:].reshape(-1, 3)


def _join(vL, VQ):
    return np.concatenate([vL, VQ.reshape(-1)])


def solve_cone_qp(
    P,
    q,
    G,
    h,
    n_linear: int,
    *,
    feastol: float | None = None,
    abstol: float | None = None,
    reltol: float | None = None,
    max_iter: int | None = None,
    near_factor: float = 1000.0,
    raise_on_failure: bool = True,
) -> ConeSolution:
    """Minimize ``1/2 x'Px + q'x`` subject to ``Gx + s = h``, ``s`` in the cone.

    Parameters
    ----------
    P : ndarray
        ``(n,)`` diagonal or ``(n, n)`` positive semidefinite matrix.
    q : ndarray
        ``(n,)`` linear cost.
    G, h : ndarray
        ``(m, n)`` and ``(m,)``; the first ``n_linear`` rows are orthant
        rows, the remaining rows form consecutive 3-dimensional cones.
    n_linear : int
        Number of orthant rows.
    feastol, abstol, reltol : float
        Relative primal/dual residual, absolute gap and relative gap
        targets; ``None`` takes the value from :data:`SETTINGS`.
    near_factor : float
        A stalled run whose best iterate is within this factor of the
        targets is returned with status ``"near_optimal"``.  Once the
        scaling is badly conditioned the reduced system limits accuracy to
        roughly ``1e-8`` relative, above the default targets.

    Returns
    -------
    ConeSolution
        Primal ``x, s`` and dual ``z`` with ``P x + q + G'z = 0`` at optimality.
    """
    feastol = SETTINGS["feastol"] if feastol is None else feastol
    abstol = SETTINGS["abstol"] if abstol is None else abstol
    reltol = SETTINGS["reltol"] if reltol is None else reltol
    max_iter = SETTINGS["max_iter"] if max_iter is None else max_iter
    q = np.asarray(q, dtype=float)
    G = np.asarray(G, dtype=float)
    h = np.asarray(h, dtype=float)
    n = q.shape[0]
    m = G.shape[0]
    nl = n_linear
    if (m - nl) % 3:
        raise ValueError("cone rows must come in blocks of 3")
    nq = (m - nl) // 3
    Pm = np.diag(np.asarray(P, dtype=float)) if np.ndim(P) == 1 else np.asarray(P, float)
    degree = nl + nq
    e = _join(np.ones(nl), np.tile([1.0, 0.0, 0.0], (nq, 1)))
    GL = G[:nl]
    GQ = G[nl:].reshape(nq, 3, n)

    def pmul(v):
        return Pm @ v

    def cone_min(v):
        vL, VQ = _split(v, nl)
        parts = [vL] if nl else []
        if nq:
            parts.append(_min_eig(VQ))
        return min(p.min() for p in parts) if parts else 0.0

    # initial point from the W = I system
    H0 = Pm + G.T @ G
    try:
        f0 = cho_factor(H0 + 1e-13 * np.trace(H0) / n * np.eye(n))
        x = cho_solve(f0, -q + G.T @ h)
    except LinAlgError:
        x = np.linalg.lstsq(H0, -q + G.T @ h, rcond=None)[0]
    s = h - G @ x
    z = G @ x - h
    for v in (s, z):
        a = cone_min(v)
        if a <= 1e-8 * max(1.0, np.linalg.norm(v)):
            v += (1.0 - a) * e

    nh = max(1.0, np.linalg.norm(h))
    nqn = max(1.0, np.linalg.norm(q))
    sol = None
    best_merit = np.inf
    status = "max_iter"
    for it in range(max_iter + 1):
        rx = pmul(x) + q + G.T @ z
        rz = G @ x + s - h
        gap = float(s @ z)
        pcost = float(0.5 * x @ pmul(x) + q @ x)
        dcost = pcost + float(z @ rz) - gap
        pres = np.linalg.norm(rz) / nh
        dres = np.linalg.norm(rx) / nqn
        if pcost < 0:
            relgap = gap / -pcost
        elif dcost > 0:
            relgap = gap / dcost
        else:
            relgap = np.inf
        cur = ConeSolution(x.copy(), s.copy(), z.copy(), status, it, pcost, dcost,
                           float(pres), float(dres), gap)
        merit = max(pres / feastol, dres / feastol, min(gap / abstol, relgap / reltol))
        if sol is None or merit < best_merit:
            sol, best_merit = cur, merit
        if merit <= 1.0:
            sol.status = "optimal"
            return sol
        if it == max_iter or it - sol.iterations > 4:
            break
        mu = gap / degree
        sL, sQ = _split(s, nl)
        zL, zQ = _split(z, nl)
        if (nl and (sL.min() <= 0.0 or zL.min() <= 0.0)) or (
            nq and (_det(sQ).min() <= 0.0 or _det(zQ).min() <= 0.0
                    or sQ[:, 0].min() <= 0.0 or zQ[:, 0].min() <= 0.0)
        ) or not (np.isfinite(s).all() and np.isfinite(z).all()):
            # iterates reached the cone boundary in floating point
            logger.debug("iterate on the cone boundary at iteration %d", it)
            status = "numerical"
            break
        W = _Scaling(sL, zL, sQ, zQ)
        lamL, lamQ, lam_det = W.lamL, W.lamQ, W.lam_det
        if nq and not (lam_det.min() > 0.0 and np.isfinite(lamQ).all()):
            logger.debug("scaling lost precision at iteration %d", it)
            status = "numerical"
            break
        Gh_L, Gh_Q = W.apply(GL, GQ, inverse=True)
        Gh = np.concatenate([Gh_L, Gh_Q.reshape(3 * nq, n)])
        H = Pm + Gh.T @ Gh
        fac = None
        if np.isfinite(H).all():
            # escalate the diagonal shift until the factorization succeeds;
            # iterative refinement below compensates for the perturbation
            scale = max(np.trace(H) / n, 1.0)
            for rel in (1e-14, 1e-11, 1e-8):
                try:
                    fac = cho_factor(H + rel * scale * np.eye(n))
                    break
                except LinAlgError:
                    continue
        if fac is None:
            status = "singular"
            break
        rzL, rzQ = _split(rz, nl)
        wrzL, wrzQ = W.apply(rzL, rzQ, inverse=True)
        wrz = _join(wrzL, wrzQ)

        def newton(rcL, rcQ):
            uL = rcL / lamL
            uQ = _jordan_solve(lamQ, rcQ, lam_det)
            u = _join(uL, uQ)
            rhs = -rx - Gh.T @ (wrz + u)
            dx = cho_solve(fac, rhs)
            # one step of iterative refinement on the reduced system
            dx += cho_solve(fac, rhs - H @ dx)
            t = Gh @ dx + wrz + u
            tL, tQ = _split(t, nl)
            dzL, dzQ = W.apply(tL, tQ, inverse=True)
            wdzL, wdzQ = W.apply(dzL, dzQ)
            # the linear block is imposed exactly; the scaled form loses
            # accuracy once W becomes badly conditioned
            ds = -rz - G @ dx
            dsL, dsQ = _split(ds, nl)
            wdsL, wdsQ = W.apply(dsL, dsQ, inverse=True)
            return dx, ds, _join(dzL, dzQ), (wdzL, wdzQ), (wdsL, wdsQ)

        def max_step(ds, dz):
            dsL, dsQ = _split(ds, nl)
            dzL, dzQ = _split(dz, nl)
            steps = [np.inf]
            if nl:
                with np.errstate(divide="ignore"):
                    for v, d in ((sL, dsL), (zL, dzL)):
                        neg = d < 0
                        if neg.any():
                            steps.append(np.min(-v[neg] / d[neg]))
            if nq:
                steps.append(np.min(_max_step_soc(sQ, dsQ)))
                steps.append(np.min(_max_step_soc(zQ, dzQ)))
            return min(steps)

        # predictor
        rcL = -lamL * lamL
        rcQ = -_jordan(lamQ, lamQ)
        dx, ds, dz, wdz_a, wids_a = newton(rcL, rcQ)
        alpha = min(1.0, max_step(ds, dz))
        sigma = min(1.0, max(0.0, float((s + alpha * ds) @ (z + alpha * dz)) / gap)) ** 3
        # corrector
        rcL = -lamL * lamL + sigma * mu - wids_a[0] * wdz_a[0]
        rcQ = -_jordan(lamQ, lamQ) - _jordan(wids_a[1], wdz_a[1])
        rcQ[:, 0] += sigma * mu
        dx, ds, dz, _, _ = newton(rcL, rcQ)
        alpha = min(1.0, 0.99 * max_step(ds, dz))
        x = x + alpha * dx
        s = s + alpha * ds
        z = z + alpha * dz
    # accept a stalled iterate that is close to the tolerances
    sol.status = "near_optimal" if best_merit <= near_factor else status
    if sol.status == "near_optimal":
        logger.debug("cone solver stalled at merit %.2e; accepted as near optimal", best_merit)
        return sol
    if raise_on_failure:
        raise ConeSolverError(
            f"cone solver stopped ({status}) at iteration {sol.iterations}: "
            f"pres={sol.primal_residual:.2e} dres={sol.dual_residual:.2e} gap={sol.gap:.2e}",
            sol,
        )
    return sol
