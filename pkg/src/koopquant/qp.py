"""Dense convex QP solver for condensed MPC problems.

Solves::

    minimize    1/2 x'Hx + f'x (+ rho * sum(sigma))
    subject to  lb <= x <= ub
                lA - sigma <= A x <= uA + sigma,   sigma >= 0

with a Mehrotra predictor-corrector interior-point method.  Without a soft
weight ``rho`` the general rows are hard (``sigma = 0``).  The slack
variables of softened rows are eliminated from the Newton system, which is
then a dense ``n x n`` positive definite solve.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg as la

__all__ = ["QpProblem", "QpSolution", "solve_qp"]


@dataclass
class QpProblem:
    """``min 1/2 x'Hx + f'x + const`` under box and (optionally soft) linear bounds."""

    H: np.ndarray
    f: np.ndarray
    lb: Optional[np.ndarray] = None
    ub: Optional[np.ndarray] = None
    A: Optional[np.ndarray] = None
    lA: Optional[np.ndarray] = None
    uA: Optional[np.ndarray] = None
    soft_weight: Optional[float] = None
    const: float = 0.0

    def __post_init__(self):
        self.H = np.atleast_2d(np.asarray(self.H, dtype=float))
        self.f = np.atleast_1d(np.asarray(self.f, dtype=float))
        n = self.f.size
        if self.H.shape != (n, n):
            raise ValueError("H must be square and match f")
        self.lb = np.full(n, -np.inf) if self.lb is None else np.broadcast_to(np.asarray(self.lb, float), (n,)).copy()
        self.ub = np.full(n, np.inf) if self.ub is None else np.broadcast_to(np.asarray(self.ub, float), (n,)).copy()
        if np.any(self.lb > self.ub):
            raise ValueError("lb > ub for some coordinate")
        if self.A is None:
            self.A = np.zeros((0, n))
        self.A = np.atleast_2d(np.asarray(self.A, dtype=float)).reshape(-1, n)
        p = self.A.shape[0]
        self.lA = np.full(p, -np.inf) if self.lA is None else np.asarray(self.lA, float).reshape(p)
        self.uA = np.full(p, np.inf) if self.uA is None else np.asarray(self.uA, float).reshape(p)

    @property
    def n(self) -> int:
        return self.f.size

    def objective(self, x) -> float:
        """Quadratic objective (without the soft penalty)."""
        return float(0.5 * x @ self.H @ x + self.f @ x + self.const)


@dataclass
class QpSolution:
    x: np.ndarray
    objective: float
    kkt_residual: float
    iterations: int
    violation: float
    converged: bool
    multipliers: dict


class _Constraints:
    """Inequalities ``G v <= h`` stored by group, ``v = [x; sigma]``."""

    def __init__(self, qp: QpProblem):
        self.n = qp.n
        self.p = qp.A.shape[0]
        self.soft = qp.soft_weight is not None and self.p > 0
        self.A = qp.A
        self.iL = np.flatnonzero(np.isfinite(qp.lb))
        self.iU = np.flatnonzero(np.isfinite(qp.ub))
        self.jL = np.flatnonzero(np.isfinite(qp.lA))
        self.jU = np.flatnonzero(np.isfinite(qp.uA))
        self.sizes = [self.iL.size, self.iU.size, self.jL.size, self.jU.size, self.p if self.soft else 0]
        self.offsets = np.concatenate([[0], np.cumsum(self.sizes)])
        self.m = int(self.offsets[-1])
        self.h = np.concatenate([-qp.lb[self.iL], qp.ub[self.iU], -qp.lA[self.jL], qp.uA[self.jU], np.zeros(self.sizes[4])])

    def split(self, y):
        o = self.offsets
        return [y[o[k]:o[k + 1]] for k in range(5)]

    def nv(self):
        return self.n + (self.p if self.soft else 0)

    def G(self, v):
        x = v[: self.n]
        Ax = self.A @ x
        parts = [-x[self.iL], x[self.iU], -Ax[self.jL], Ax[self.jU]]
        if self.soft:
            sig = v[self.n:]
            parts[2] = parts[2] - sig[self.jL]
            parts[3] = parts[3] - sig[self.jU]
            parts.append(-sig)
        else:
            parts.append(np.zeros(0))
        return np.concatenate(parts)

    def Gt(self, y):
        yL, yU, yAL, yAU, y0 = self.split(y)
        gx = np.zeros(self.n)
        gx[self.iL] -= yL
        gx[self.iU] += yU
        rows = np.zeros(self.p)
        rows[self.jL] -= yAL
        rows[self.jU] += yAU
        gx += self.A.T @ rows
        if not self.soft:
            return gx
        gs = -y0.copy()
        gs[self.jL] -= yAL
        gs[self.jU] -= yAU
        return np.concatenate([gx, gs])

    def newton_solve(self, H, w, r):
        """Solve ``(P + G' diag(w) G) dv = r`` with ``P = blkdiag(H, 0)``."""
        return self.newton_factor(H, w)(r)

    def newton_factor(self, H, w):
        """Factor the Newton matrix once; returns ``r -> dv``."""
        wL, wU, wAL, wAU, w0 = self.split(w)
        M = H.copy()
        dbox = np.zeros(self.n)
        dbox[self.iL] += wL
        dbox[self.iU] += wU
        M[np.diag_indices(self.n)] += dbox
        a = np.zeros(self.p)
        b = np.zeros(self.p)
        a[self.jL] = wAL
        b[self.jU] = wAU
        if self.soft:
            dsig = a + b + w0
            # (a + b) - (a - b)^2 / dsig without cancellation
            coef = (4.0 * a * b + (a + b) * w0) / dsig
        else:
            coef = a + b
        if self.p:
            M += self.A.T @ (coef[:, None] * self.A)
        try:
            fac = la.cho_factor(M, check_finite=False)
            inner = lambda rx: la.cho_solve(fac, rx, check_finite=False)
        except la.LinAlgError:
            inner = lambda rx: la.lstsq(M, rx)[0]

        def solve(r):
            rx = r[: self.n]
            if not self.soft:
                return inner(rx)
            rs = r[self.n:]
            dx = inner(rx - self.A.T @ ((a - b) * rs / dsig))
            return np.concatenate([dx, (rs - (a - b) * (self.A @ dx)) / dsig])

        return solve


def _max_step(z, dz):
    neg = dz < 0
    if not np.any(neg):
        return 1.0
    return float(min(1.0, np.min(-z[neg] / dz[neg])))


def solve_qp(qp: QpProblem, tol: float = 1e-9, max_iter: int = 100) -> QpSolution:
    """Solve ``qp`` to primal-dual tolerance ``tol``.

    ``tol`` applies to scaled residuals: stationarity relative to
    ``1 + max|f|`` (``1 + rho`` in the slack block), primal residual relative
    to ``1 + max|bound|`` and complementarity relative to ``1 + max|f|``.
    Once the interior iterate is moderately accurate, an exact solve on its
    active set is attempted; if that point certifies the tolerance it is
    returned.  If the iteration stalls, the best point seen is returned with
    ``converged=False``.

    The reported ``kkt_residual`` is the maximum of the stationarity norm,
    the primal infeasibility and the largest complementarity product.
    """
    con = _Constraints(qp)
    n, nv, mc = con.n, con.nv(), con.m
    H = qp.H
    q = qp.f if not con.soft else np.concatenate([qp.f, np.full(con.p, float(qp.soft_weight))])

    def P(v):
        out = np.zeros(nv)
        out[:n] = H @ v[:n]
        return out

    if mc == 0:
        x = la.lstsq(H, -qp.f)[0]
        res = float(np.max(np.abs(H @ x + qp.f))) if n else 0.0
        return QpSolution(x, qp.objective(x), res, 0, 0.0, True, {})

    # least-squares starting point, shifted into the positive orthant
    v = con.newton_solve(H, np.ones(mc), -q + con.Gt(con.h))
    z = con.G(v) - con.h
    s, lam = -z, z.copy()
    for arr in (s, lam):
        lo = float(np.min(arr))
        if lo < 1e-8:
            arr += 1.0 - lo
    f_scale = 1.0 + float(np.max(np.abs(qp.f))) if n else 1.0
    d_scale = np.full(nv, f_scale)
    if con.soft:
        d_scale[n:] = 1.0 + float(qp.soft_weight)
    p_scale = 1.0 + float(np.max(np.abs(con.h[np.isfinite(con.h)]), initial=0.0))

    converged = False
    it = 0
    best = (np.inf, v, s, lam)
    polish_at, attempts, early = 1e-6, 0, None
    for it in range(1, max_iter + 1):
        rd = P(v) + q + con.Gt(lam)
        rp = con.G(v) + s - con.h
        mu = float(s @ lam) / mc
        merit = max(float(np.max(np.abs(rd) / d_scale)), float(np.max(np.abs(rp))) / p_scale,
                    float(np.max(s * lam)) / f_scale)
        if not np.isfinite(merit):
            break
        if merit < best[0]:
            best = (merit, v, s, lam)
        if merit <= tol:
            converged = True
            break
        if merit <= polish_at and attempts < 3:
            # the active set is usually settled well before full accuracy
            attempts += 1
            polished = _polish(qp, con, s, lam, p_scale)
            if polished is not None and _kkt(qp, con, P, q, *polished) <= tol * f_scale:
                early = polished
                break
        newton = con.newton_factor(H, lam / s)

        def direction(rc):
            rhs = -rd - con.Gt((-rc + lam * rp) / s)
            dv = newton(rhs)
            ds = -rp - con.G(dv)
            dl = (-rc - lam * ds) / s
            return dv, ds, dl

        dv, ds, dl = direction(s * lam)
        a_aff = min(_max_step(s, ds), _max_step(lam, dl))
        mu_aff = float((s + a_aff * ds) @ (lam + a_aff * dl)) / mc
        sigma = (mu_aff / mu) ** 3 if mu > 0 else 0.0
        dv, ds, dl = direction(s * lam + ds * dl - sigma * mu)
        alpha = min(1.0, 0.99 * min(_max_step(s, ds), _max_step(lam, dl)))
        v = v + alpha * dv
        s = s + alpha * ds
        lam = lam + alpha * dl
    if early is not None:
        v_fin, lam_fin = early
        report = _kkt(qp, con, P, q, v_fin, lam_fin)
        converged = True
    else:
        # late iterations can lose accuracy once lam / s is huge; keep the best point
        _, v, s, lam = best
        v_fin, lam_fin = _slack_cleanup(qp, con, v, lam)
        report = _kkt(qp, con, P, q, v_fin, lam_fin)
        polished = _polish(qp, con, s, lam, p_scale)
        if polished is not None:
            report_pol = _kkt(qp, con, P, q, *polished)
            if report_pol <= report:
                v_fin, lam_fin, report = polished[0], polished[1], report_pol
        converged = converged or report <= tol * f_scale

    x = v_fin[:n]
    violation = float(np.sum(v_fin[n:])) if con.soft else 0.0
    parts = con.split(lam_fin)
    obj = qp.objective(x) + (float(qp.soft_weight) * violation if con.soft else 0.0)
    return QpSolution(
        x=x,
        objective=obj,
        kkt_residual=report,
        iterations=it,
        violation=violation,
        converged=converged,
        multipliers={"lb": parts[0], "ub": parts[1], "lA": parts[2], "uA": parts[3]},
    )


def _kkt(qp, con, P, q, v, lam) -> float:
    """Max of stationarity, primal infeasibility and complementarity."""
    slack = con.h - con.G(v)
    stat = float(np.max(np.abs(P(v) + q + con.Gt(lam))))
    infeas = float(np.max(np.maximum(-slack, 0.0)))
    comp = float(np.max(np.abs(np.maximum(slack, 0.0) * lam)))
    return max(stat, infeas, comp)


def _slack_cleanup(qp, con, v, lam):
    """Clip x into the box and give the soft slacks their optimal values."""
    n = con.n
    v = v.copy()
    v[:n] = np.clip(v[:n], qp.lb, qp.ub)
    if not con.soft:
        return v, lam
    # for fixed x the optimal slack is the smallest feasible one; its
    # multiplier then follows from stationarity in the slack block
    Ax = qp.A @ v[:n]
    with np.errstate(invalid="ignore"):
        v[n:] = np.fmax(np.fmax(qp.lA - Ax, Ax - qp.uA), 0.0)
    lL, lU, lAL, lAU, _ = con.split(lam)
    pull = np.zeros(con.p)
    pull[con.jL] += lAL
    pull[con.jU] += lAU
    return v, np.concatenate([lL, lU, lAL, lAU, np.maximum(float(qp.soft_weight) - pull, 0.0)])


def _refined(solve, K, rhs):
    with np.errstate(all="ignore"):
        sol = solve(rhs)
        for _ in range(2):  # iterative refinement; rhs carries rho-sized terms
            sol = sol + solve(rhs - K @ sol)
        ok = np.all(np.isfinite(sol)) and np.max(np.abs(K @ sol - rhs)) <= 1e-9 * (1.0 + np.max(np.abs(rhs)))
    return sol if ok else None


def _kkt_solve(K, rhs):
    """Solve the saddle-point system by LU, falling back to least squares."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", la.LinAlgWarning)
        try:
            lu = la.lu_factor(K, check_finite=False)
            sol = _refined(lambda r: la.lu_solve(lu, r, check_finite=False), K, rhs)
        except (la.LinAlgError, ValueError):
            sol = None
    if sol is None:
        sol = _refined(lambda r: la.lstsq(K, r)[0], K, rhs)
    return sol


def _polish(qp, con, s, lam, p_scale, rounds: int = 8):
    """Exact solve on an active set, starting from the interior iterate's guess.

    A few primal-dual active-set corrections are applied (drop bounds with
    wrong-signed multipliers, add violated ones).  Returns ``(v, lam)`` or
    None if no consistent active set is found.
    """
    n, p = con.n, con.p
    active = lam > s
    aL, aU, aAL, aAU, a0 = con.split(active)
    soft = con.soft
    rho = float(qp.soft_weight) if soft else np.inf
    boxL = np.zeros(n, dtype=bool)
    boxU = np.zeros(n, dtype=bool)
    boxL[con.iL[aL]] = True
    boxU[con.iU[aU]] = True
    lower = np.zeros(p, dtype=bool)
    upper = np.zeros(p, dtype=bool)
    lower[con.jL[aAL]] = True
    upper[con.jU[aAU]] = True
    viol_lo = np.zeros(p, dtype=bool)
    viol_hi = np.zeros(p, dtype=bool)
    if soft:
        viol_lo, viol_hi = lower & ~a0, upper & ~a0
        lower, upper = lower & a0, upper & a0
    delta = 1e-9 * p_scale
    I = np.eye(n)

    for _ in range(rounds):
        E = np.vstack([I[boxL], I[boxU], qp.A[lower], qp.A[upper]])
        e = np.concatenate([qp.lb[boxL], qp.ub[boxU], qp.lA[lower], qp.uA[upper]])
        # violated soft rows contribute a linear penalty
        f = qp.f
        if soft:
            f = f - rho * qp.A[viol_lo].sum(axis=0) + rho * qp.A[viol_hi].sum(axis=0)
        k = E.shape[0]
        K = np.block([[qp.H, E.T], [E, np.zeros((k, k))]])
        rhs = np.concatenate([-f, e])
        sol = _kkt_solve(K, rhs)
        if sol is None:
            return None
        x, nu = sol[:n], sol[n:]
        nL, nU, nAL, nAU = np.split(nu, np.cumsum([boxL.sum(), boxU.sum(), lower.sum()]))
        mL = np.zeros(n)
        mU = np.zeros(n)
        rL = np.zeros(p)
        rU = np.zeros(p)
        mL[boxL] = -nL
        mU[boxU] = nU
        rL[lower] = -nAL
        rU[upper] = nAU
        rL[viol_lo] = rho
        rU[viol_hi] = rho
        Ax = qp.A @ x
        mtol = 1e-9 * (1.0 + float(np.max(np.abs(nu), initial=0.0)))

        changed = False
        for mask, mult in ((boxL, mL), (boxU, mU), (lower, rL), (upper, rU)):
            bad = mask & (mult < -mtol)
            if bad.any():
                mask[bad] = False
                changed = True
        if soft:
            for at, viol, mult in ((lower, viol_lo, rL), (upper, viol_hi, rU)):
                over = at & (mult > rho * (1 + 1e-9))
                if over.any():
                    at[over] = False
                    viol[over] = True
                    changed = True
            back_lo = viol_lo & (Ax > qp.lA + delta)
            back_hi = viol_hi & (Ax < qp.uA - delta)
            if back_lo.any() or back_hi.any():
                viol_lo[back_lo] = False
                lower[back_lo] = True
                viol_hi[back_hi] = False
                upper[back_hi] = True
                changed = True
        for mask, hit in ((boxL, x < qp.lb - delta), (boxU, x > qp.ub + delta)):
            add = hit & ~mask
            if add.any():
                mask[add] = True
                changed = True
        free = ~(lower | upper | viol_lo | viol_hi)
        lo_hit = free & (Ax < qp.lA - delta)
        hi_hit = free & (Ax > qp.uA + delta)
        if lo_hit.any() or hi_hit.any():
            lower[lo_hit] = True
            upper[hi_hit] = True
            changed = True
        if not changed:
            break
    else:
        return None

    x = np.clip(x, qp.lb, qp.ub)
    pieces = [np.maximum(mL[con.iL], 0.0), np.maximum(mU[con.iU], 0.0),
              np.maximum(rL[con.jL], 0.0), np.maximum(rU[con.jU], 0.0)]
    if soft:
        with np.errstate(invalid="ignore"):
            sig = np.fmax(np.fmax(qp.lA - Ax, Ax - qp.uA), 0.0)
        sig[~(viol_lo | viol_hi)] = 0.0
        pieces.append(np.maximum(rho - rL - rU, 0.0))
        v = np.concatenate([x, sig])
    else:
        pieces.append(np.zeros(0))
        v = x
    return v, np.concatenate(pieces)
