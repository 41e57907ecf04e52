"""Online feedback laws evaluated pointwise along trajectories: the
infinitesimal-horizon MPC quadratic program, a CBF-CLF quadratic program
baseline, and direct evaluation of the synthesized polynomial feedback.

The certificate pair (V_hat, h_hat) fixes the geometry: h_hat <= 0 is the
safe set, V_hat the terminal cost whose decrease the QP enforces through
its objective. Both QPs are strictly convex with a handful of rows, so the
dense active-set solver is the right tool.
"""

import json
import logging
from dataclasses import dataclass

import numpy as np

from .poly import DimensionMismatch, PolyBlock, Polynomial
from . import qp

logger = logging.getLogger(__name__)


class ControlError(Exception):
    pass


class OutsideSafeSet(ControlError):
    """Feedback queried at a state with h_hat(x) > 0."""


class QpInfeasible(ControlError):
    """The pointwise QP has no feasible input. For a certified pair this
    cannot happen on the safe set, so it signals a defective certificate
    or broken numerics and must surface, never be patched over."""


# States with h_hat up to this far above zero are still served; simulated
# trajectories can graze the boundary within integration tolerance.
BOUNDARY_TOL = 1e-8


@dataclass
class CertificatePair:
    """Compatible CLF/CBF pair with optional polynomial state feedback.

    The barrier is stored already shifted so the safe set is exactly
    {h_hat <= 0}; `a` is the slope of the linear class-K function used in
    the barrier decrease condition."""

    V_hat: Polynomial
    h_hat: Polynomial
    kappa_hat: list = None
    a: float = 1e-4

    def __post_init__(self):
        if self.V_hat.nvars != self.h_hat.nvars:
            raise DimensionMismatch("V_hat and h_hat disagree on nvars")
        origin = np.zeros(self.V_hat.nvars)
        v0 = self.V_hat.evaluate(origin)
        if abs(v0) > 1e-9:
            raise ValueError(f"V_hat(0) = {v0:.3e}, expected 0")
        if self.h_hat.evaluate(origin) >= 0.0:
            raise ValueError("h_hat(0) must be negative")
        if not self.a > 0.0:
            raise ValueError("class-K slope a must be positive")
        if self.kappa_hat is not None:
            self.kappa_hat = list(self.kappa_hat)
            for k in self.kappa_hat:
                if k.nvars != self.V_hat.nvars:
                    raise DimensionMismatch("kappa_hat component nvars")

    @property
    def nx(self):
        return self.V_hat.nvars

    def to_dict(self):
        return {
            "V_hat": self.V_hat.to_dict(),
            "h_hat": self.h_hat.to_dict(),
            "kappa_hat": None if self.kappa_hat is None
            else [k.to_dict() for k in self.kappa_hat],
            "a": self.a,
        }

    @staticmethod
    def from_dict(d):
        kap = d.get("kappa_hat")
        return CertificatePair(
            V_hat=Polynomial.from_dict(d["V_hat"]),
            h_hat=Polynomial.from_dict(d["h_hat"]),
            kappa_hat=None if kap is None
            else [Polynomial.from_dict(k) for k in kap],
            a=float(d["a"]),
        )

    def to_json(self):
        return json.dumps(self.to_dict(), indent=1)

    @staticmethod
    def from_json(s):
        return CertificatePair.from_dict(json.loads(s))


@dataclass(frozen=True)
class StageCost:
    """Quadratic stage cost L(x, u) = x'Qx + u'Ru, Q PSD and R PD."""

    Q: np.ndarray
    R: np.ndarray

    def __post_init__(self):
        Q = np.asarray(self.Q, dtype=float)
        R = np.asarray(self.R, dtype=float)
        for name, M in (("Q", Q), ("R", R)):
            if M.ndim != 2 or M.shape[0] != M.shape[1]:
                raise ValueError(f"{name} must be square")
            if np.max(np.abs(M - M.T), initial=0.0) > 1e-12 * (1 + np.abs(M).max()):
                raise ValueError(f"{name} must be symmetric")
        if np.linalg.eigvalsh(Q).min() < -1e-12 * (1 + np.abs(Q).max()):
            raise ValueError("Q must be positive semidefinite")
        if np.linalg.eigvalsh(R).min() <= 0.0:
            raise ValueError("R must be positive definite")
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "R", R)

    def value(self, x, u):
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        return float(x @ self.Q @ x + u @ self.R @ u)


class DmpcController:
    """Evaluates the infinitesimal-horizon MPC feedback.

    At each state the input solves

        min_u  u'Ru + <grad V_hat(x), G(x) u>
        s.t.   <grad h_hat(x), f0(x) + G(x) u> <= a * (-h_hat(x))
               H_U u <= 1

    The state-only terms x'Qx and <grad V_hat, f0> are dropped from the
    objective; they do not depend on u, so the argmin is unchanged.

    All polynomial evaluations for one step go through a single compiled
    block; the previous solution warm-starts the active-set solver.
    """

    def __init__(self, cert, model, stage, HU):
        if cert.nx != model.nx:
            raise DimensionMismatch("certificate nvars != model.nx")
        nx, nu = model.nx, model.nu
        HU = np.asarray(HU, dtype=float).reshape(-1, nu)
        polys = [cert.h_hat]
        polys += cert.h_hat.gradient()
        polys += cert.V_hat.gradient()
        polys += list(model.drift)
        for row in model.input_matrix:
            polys += list(row)
        self._block = PolyBlock(polys)
        self._nx, self._nu = nx, nu
        self._a = cert.a
        self._H = 2.0 * stage.R
        self._HU = HU
        self._ones = np.ones(HU.shape[0])
        self._last_u = None

    def feedback_matrices(self, x):
        """(h, grad_h, grad_V, f0, G) at x, one compiled evaluation."""
        nx, nu = self._nx, self._nu
        vals = self._block.eval(np.asarray(x, dtype=float))
        h = vals[0]
        gh = vals[1:1 + nx]
        gV = vals[1 + nx:1 + 2 * nx]
        f0 = vals[1 + 2 * nx:1 + 3 * nx]
        G = vals[1 + 3 * nx:].reshape(nx, nu)
        return h, gh, gV, f0, G

    def feedback(self, x):
        h, gh, gV, f0, G = self.feedback_matrices(x)
        if h > BOUNDARY_TOL:
            raise OutsideSafeSet(f"h_hat(x) = {h:.3e} > 0")
        row = gh @ G
        rhs = -self._a * h - gh @ f0
        A = np.vstack([row[None, :], self._HU])
        b = np.concatenate([[rhs], self._ones])
        c = G.T @ gV
        try:
            sol = qp.solve_qp(qp.QpProblem(self._H, c, A, b), x0=self._last_u)
        except qp.Infeasible as e:
            raise QpInfeasible(f"dMPC QP infeasible at x = {x}") from e
        self._last_u = sol.u_star
        return sol.u_star


def dmpc_feedback(cert, model, stage, HU, x):
    """One-shot form of DmpcController; builds the controller and solves
    the single-state QP. Prefer the controller class inside loops."""
    return DmpcController(cert, model, stage, HU).feedback(x)


class CbfClfController:
    """Pointwise minimum-norm feedback under separate CBF and CLF rows:

        min_u  u'Ru
        s.t.   <grad B(x), f0 + G u> <= a_B * (-B(x))
               <grad V(x), f0 + G u> <= -a_V * V(x)
               H_U u <= 1

    No slack variable: the pair is synthesized to be compatible, so an
    infeasible QP is a hard failure.
    """

    def __init__(self, V, B, model, R, HU, a_V=0.0025, a_B=1e-4):
        if V.nvars != model.nx or B.nvars != model.nx:
            raise DimensionMismatch("V/B nvars != model.nx")
        if not (a_V > 0.0 and a_B > 0.0):
            raise ValueError("class-K slopes must be positive")
        nx, nu = model.nx, model.nu
        HU = np.asarray(HU, dtype=float).reshape(-1, nu)
        polys = [B, V]
        polys += B.gradient()
        polys += V.gradient()
        polys += list(model.drift)
        for row in model.input_matrix:
            polys += list(row)
        self._block = PolyBlock(polys)
        self._nx, self._nu = nx, nu
        self._aV, self._aB = float(a_V), float(a_B)
        self._H = 2.0 * np.asarray(R, dtype=float)
        self._HU = HU
        self._ones = np.ones(HU.shape[0])
        self._last_u = None

    def feedback(self, x):
        nx, nu = self._nx, self._nu
        vals = self._block.eval(np.asarray(x, dtype=float))
        Bv, Vv = vals[0], vals[1]
        gB = vals[2:2 + nx]
        gV = vals[2 + nx:2 + 2 * nx]
        f0 = vals[2 + 2 * nx:2 + 3 * nx]
        G = vals[2 + 3 * nx:].reshape(nx, nu)
        if Bv > BOUNDARY_TOL:
            raise OutsideSafeSet(f"B(x) = {Bv:.3e} > 0")
        A = np.vstack([(gB @ G)[None, :], (gV @ G)[None, :], self._HU])
        b = np.concatenate([[-self._aB * Bv - gB @ f0],
                            [-self._aV * Vv - gV @ f0],
                            self._ones])
        try:
            sol = qp.solve_qp(qp.QpProblem(self._H, np.zeros(nu), A, b),
                              x0=self._last_u)
        except qp.Infeasible as e:
            raise QpInfeasible(f"CBF-CLF QP infeasible at x = {x}") from e
        self._last_u = sol.u_star
        return sol.u_star


def cbf_clf_feedback(V, B, model, R, HU, a_V, a_B, x):
    """One-shot form of CbfClfController."""
    return CbfClfController(V, B, model, R, HU, a_V, a_B).feedback(x)


class PolyController:
    """Direct evaluation of the synthesized feedback u = kappa_hat(x).

    No clipping: admissibility on the safe set is the certificate's
    burden. If an input polytope is supplied, violations are logged and
    the raw value still returned."""

    def __init__(self, kappa_hat, HU=None):
        self._block = PolyBlock(list(kappa_hat))
        self._HU = None if HU is None else np.asarray(HU, dtype=float)

    def feedback(self, x):
        u = self._block.eval(np.asarray(x, dtype=float))
        if self._HU is not None:
            worst = np.max(self._HU @ u - 1.0, initial=-np.inf)
            if worst > 1e-6:
                logger.warning("kappa_hat violates input polytope by %.3e "
                               "at x = %s", worst, x)
        return u


def poly_feedback(kappa_hat, x, HU=None):
    """u = kappa_hat(x) componentwise; see PolyController."""
    return PolyController(kappa_hat, HU).feedback(x)
