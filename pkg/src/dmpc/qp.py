"""Dense strictly convex quadratic programming by a primal active-set method.

Solves    minimize 1/2 u^T H u + c^T u   subject to  A u <= b
for small problems (online feedback laws: m = 3, a dozen rows). H is
factorized once by Cholesky; equality subproblems use the null-space
method. Blocking-constraint ties are broken toward the smallest row index
so the iteration is deterministic.

Tolerances: constraint activity 1e-10, KKT 1e-8, iteration cap 100*k.
"""

from dataclasses import dataclass

import numpy as np
import scipy.linalg

ACTIVITY_TOL = 1e-10
KKT_TOL = 1e-8


class QpError(Exception):
    pass


class Infeasible(QpError):
    pass


class NotPositiveDefinite(QpError):
    pass


class IterationLimit(QpError):
    pass


@dataclass(frozen=True)
class QpProblem:
    H: np.ndarray
    c: np.ndarray
    A: np.ndarray  # k x m, possibly k = 0
    b: np.ndarray

    def __post_init__(self):
        H = np.asarray(self.H, dtype=float)
        c = np.asarray(self.c, dtype=float)
        m = c.shape[0]
        A = np.asarray(self.A, dtype=float).reshape(-1, m)
        b = np.asarray(self.b, dtype=float).reshape(-1)
        if H.shape != (m, m) or A.shape[0] != b.shape[0]:
            raise ValueError("inconsistent QP dimensions")
        if np.max(np.abs(H - H.T), initial=0.0) > 1e-12 * (1 + np.abs(H).max()):
            raise NotPositiveDefinite("H is not symmetric")
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)

    def objective(self, u):
        return 0.5 * float(u @ self.H @ u) + float(self.c @ u)


@dataclass
class QpSolution:
    u_star: np.ndarray
    active_set: list
    multipliers: np.ndarray
    kkt_residual: float
    iterations: int = 0


def _chol(H):
    try:
        return scipy.linalg.cho_factor(H, lower=True)
    except scipy.linalg.LinAlgError as e:
        raise NotPositiveDefinite(str(e)) from e


def _active_set_loop(H, c, A, b, x, work, chol, max_iter):
    """Core primal active-set iteration from a feasible x.

    Steps come from the null-space method: with an orthonormal basis Z for
    the null space of the working rows, p = -Z (Z'HZ)^-1 Z'g involves no
    cancellation against the (possibly badly scaled) constraint matrix, and
    a full working set gives p = 0 exactly.
    """
    k, m = A.shape
    work = sorted(work)
    row_norm = np.linalg.norm(A, axis=1) if k else np.zeros(0)
    for it in range(max_iter):
        g = H @ x + c
        if work:
            Aw = A[work]
            Q, R = np.linalg.qr(Aw.T, mode="complete")
            diag = np.abs(np.diag(R)) if min(R.shape) else np.zeros(0)
            rk = int(np.sum(diag > 1e-12 * max(1.0, diag.max(initial=0.0))))
            Z = Q[:, rk:]
            if Z.shape[1]:
                Hz = Z.T @ H @ Z
                p = -Z @ np.linalg.solve(Hz, Z.T @ g)
            else:
                p = np.zeros(m)
            mu = np.linalg.lstsq(Aw.T, -(g + H @ p), rcond=None)[0]
        else:
            mu = np.empty(0)
            p = -scipy.linalg.cho_solve(chol, g)

        gscale = 1.0 + np.abs(g).max(initial=0.0) + np.abs(x).max(initial=0.0)
        if np.max(np.abs(p), initial=0.0) <= 1e-11 * gscale:
            mu_tol = KKT_TOL * (1.0 + np.abs(mu).max(initial=0.0))
            if mu.size == 0 or mu.min() >= -mu_tol:
                lam = np.zeros(k)
                for idx, row in enumerate(work):
                    lam[row] = max(mu[idx], 0.0) if mu.size else 0.0
                res = np.max(np.abs(H @ x + c + A.T @ lam), initial=0.0)
                return x, work, lam, res, it + 1
            # drop the most negative multiplier, smallest index on ties
            j = int(np.argmin(mu))
            work.pop(j)
            continue

        # step length to the nearest blocking constraint
        alpha = 1.0
        blocker = -1
        pnorm = np.linalg.norm(p)
        for i in range(k):
            if i in work:
                continue
            d = float(A[i] @ p)
            if d > 1e-11 * (1.0 + row_norm[i] * pnorm):
                ai = (b[i] - float(A[i] @ x)) / d
                if ai < alpha - 1e-12:
                    alpha, blocker = ai, i
        alpha = max(alpha, 0.0)
        x = x + alpha * p
        if blocker >= 0:
            work = sorted(work + [blocker])
    raise IterationLimit(f"no convergence in {max_iter} iterations")


def _phase1(A, b, scale):
    """Feasible point via the max-violation epigraph
        min 1/2 delta |u|^2 + 1/2 s^2 + rho s   s.t.  A u - 1 s <= b,
    solved in the variables (w, s) = (sqrt(delta) u, s) so the Hessian is
    the identity and the active-set loop stays well conditioned."""
    k, m = A.shape
    delta = 1e-7
    rho = 1.0 + scale
    Hp = np.eye(m + 1)
    cp = np.concatenate([np.zeros(m), [rho]])
    chol = scipy.linalg.cho_factor(Hp, lower=True)
    s = np.inf
    for _ in range(3):
        Ap = np.hstack([A / np.sqrt(delta), -np.ones((k, 1))])
        s0 = float(np.max(-b, initial=0.0)) + 1.0
        x0 = np.concatenate([np.zeros(m), [s0]])
        x, _, _, _, _ = _active_set_loop(Hp, cp, Ap, b, x0, [], chol,
                                         max(100 * k, 100))
        s = x[-1]
        if s <= 1e-11 * scale:
            return x[:m] / np.sqrt(delta)
        if s > 1e-7 * scale:
            break
        delta *= 1e-4
    raise Infeasible(f"phase-1 minimum violation {s:.3e} > 0")


def _eqp_anchor(H, c, Aw, bw):
    """Minimize the QP objective subject to Aw x = bw (null-space method),
    with one iterative-refinement pass using extended-precision residuals
    so complementarity survives large multipliers."""
    Q, R = np.linalg.qr(Aw.T, mode="complete")
    diag = np.abs(np.diag(R)) if min(R.shape) else np.zeros(0)
    rk = int(np.sum(diag > 1e-12 * max(1.0, diag.max(initial=0.0))))
    Z = Q[:, rk:]

    def solve_pair(rhs_eq, rhs_stat):
        dx = np.linalg.lstsq(Aw, rhs_eq, rcond=None)[0]
        if Z.shape[1]:
            dy = np.linalg.solve(Z.T @ H @ Z, -(Z.T @ (rhs_stat + H @ dx)))
            dx = dx + Z @ dy
        dnu = np.linalg.lstsq(Aw.T, -(rhs_stat + H @ dx), rcond=None)[0]
        return dx, dnu

    x, nu = solve_pair(bw, c)
    Hl, Al = H.astype(np.longdouble), Aw.astype(np.longdouble)
    for _ in range(2):
        r_stat = np.asarray(Hl @ x + c + Al.T @ nu, dtype=float)
        r_eq = np.asarray(Al @ x - bw, dtype=float)
        if max(np.abs(r_stat).max(initial=0.0),
               np.abs(r_eq).max(initial=0.0)) < 1e-14:
            break
        dx, dnu = solve_pair(-r_eq, r_stat)
        x = x + dx
        nu = nu + dnu
    return x, nu


def solve_qp(problem, x0=None):
    """Global minimizer of the strictly convex QP, or raises Infeasible /
    NotPositiveDefinite / IterationLimit."""
    H, c, A, b = problem.H, problem.c, problem.A, problem.b
    k, m = A.shape
    chol = _chol(H)

    x = -scipy.linalg.cho_solve(chol, c)  # unconstrained minimizer
    if k == 0:
        res = np.max(np.abs(H @ x + c), initial=0.0)
        return QpSolution(x, [], np.zeros(0), res, 0)

    viol_scale = 1.0 + np.abs(b).max(initial=0.0)
    if np.max(A @ x - b) > ACTIVITY_TOL * viol_scale:
        if x0 is not None and np.max(A @ np.asarray(x0, float) - b) <= ACTIVITY_TOL * viol_scale:
            x = np.asarray(x0, dtype=float)
        else:
            x = _phase1(A, b, viol_scale)
    # start from the working set of constraints active at x
    resid = A @ x - b
    work = [i for i in range(k) if abs(resid[i]) <= ACTIVITY_TOL * viol_scale]
    if len(work) > m:
        work = work[:m]

    x, work, lam, res, iters = _active_set_loop(
        H, c, A, b, x, work, chol, 100 * k)

    if work:
        # re-anchor on the final working set so active rows hold exactly
        xr, nu = _eqp_anchor(H, c, A[work], b[work])
        ok = (np.max(A @ xr - b) <= ACTIVITY_TOL * viol_scale
              and (nu.size == 0
                   or nu.min() >= -KKT_TOL * (1.0 + np.abs(nu).max())))
        if ok:
            x = xr
            lam = np.zeros(k)
            lam[work] = np.maximum(nu, 0.0)
    stat = np.max(np.abs(H @ x + c + A.T @ lam), initial=0.0)
    feas = max(float(np.max(A @ x - b, initial=0.0)), 0.0)
    return QpSolution(x, sorted(work), lam, max(stat, feas), iters)
