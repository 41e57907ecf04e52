"""Control-affine system models and the spacecraft attitude scenario.

State convention for the spacecraft: x = (omega, sigma) in R^6 with omega the
body angular rates in rad/s and sigma the Modified Rodrigues Parameters of
the body attitude relative to the inertial frame. All quantities are kept in
SI radians/seconds internally; degree-valued figures are converted at the
configuration boundary.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .poly import DimensionMismatch, PolyBlock, Polynomial


class GimbalLockError(ValueError):
    pass


@dataclass(frozen=True)
class SpacecraftParams:
    inertia_diag: tuple = (31046.0, 77217.0, 78754.0)  # kg m^2

    def __post_init__(self):
        if any(j <= 0 for j in self.inertia_diag):
            raise ValueError("inertia entries must be strictly positive")


@dataclass
class ControlAffineModel:
    """xdot = drift(x) + input_matrix(x) @ u with polynomial entries."""

    nx: int
    nu: int
    drift: list          # nx polynomials in x
    input_matrix: list   # nx rows, each a list of nu polynomials in x
    _blocks: tuple = field(default=None, repr=False, compare=False)

    def _compiled(self):
        if self._blocks is None:
            flat = list(self.drift)
            for row in self.input_matrix:
                flat.extend(row)
            self._blocks = (PolyBlock(flat),)
        return self._blocks[0]

    def closed_loop_field(self, feedback_polys):
        """Polynomial vector field f0(x) + G(x)*kappa(x) for polynomial
        state feedback."""
        if len(feedback_polys) != self.nu:
            raise DimensionMismatch("feedback length != nu")
        out = []
        for i in range(self.nx):
            fi = self.drift[i]
            for j in range(self.nu):
                fi = fi + self.input_matrix[i][j] * feedback_polys[j]
            out.append(fi)
        return out


def evaluate_dynamics(model, x, u):
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    if x.shape != (model.nx,) or u.shape != (model.nu,):
        raise DimensionMismatch(
            f"got x{x.shape}, u{u.shape}; expected ({model.nx},), ({model.nu},)")
    vals = model._compiled().eval(x)
    f0 = vals[:model.nx]
    G = vals[model.nx:].reshape(model.nx, model.nu)
    return f0 + G @ u


@dataclass(frozen=True)
class ConstraintSet:
    """State constraints g_k(x) <= 0 and input polytope H_U u <= 1."""

    state_polys: tuple
    input_matrix_HU: np.ndarray

    def __post_init__(self):
        HU = np.asarray(self.input_matrix_HU, dtype=float)
        object.__setattr__(self, "input_matrix_HU", HU)
        object.__setattr__(self, "state_polys", tuple(self.state_polys))
        n = self.state_polys[0].nvars if self.state_polys else None
        origin = np.zeros(n) if n else None
        for g in self.state_polys:
            if g.evaluate(origin) >= 0:
                raise ValueError("origin must strictly satisfy every state constraint")
        # H_U 0 = 0 < 1 always holds; require finite rows.
        if not np.all(np.isfinite(HU)):
            raise ValueError("non-finite input polytope")


def box_input_polytope(bounds):
    """H_U for the box |u_i| <= bounds_i, as rows of H_U u <= 1."""
    b = np.asarray(bounds, dtype=float)
    m = b.shape[0]
    return np.vstack([np.diag(1.0 / b), -np.diag(1.0 / b)])


def _skew_polys(vars3):
    """Cross-product matrix of a polynomial 3-vector."""
    a1, a2, a3 = vars3
    zero = Polynomial.zero(a1.nvars)
    return [[zero, -a3, a2], [a3, zero, -a1], [-a2, a1, zero]]


def spacecraft_model(params=None):
    """Rigid-body attitude dynamics in MRP coordinates, Hubble-class inertia.

    Drift: omega_dot = -J^{-1} (omega x J omega),
           sigma_dot = 1/4 B(sigma) omega,
           B(sigma) = (1 - sigma^T sigma) I + 2 skew(sigma) + 2 sigma sigma^T.
    Input matrix: (J^{-1}; 0).
    """
    params = params or SpacecraftParams()
    J = np.asarray(params.inertia_diag, dtype=float)
    n = 6
    w = [Polynomial.variable(n, i) for i in range(3)]
    s = [Polynomial.variable(n, 3 + i) for i in range(3)]

    # omega x J omega for diagonal J
    cross = [
        w[1] * w[2] * (J[2] - J[1]),
        w[2] * w[0] * (J[0] - J[2]),
        w[0] * w[1] * (J[1] - J[0]),
    ]
    wdot = [cross[i] * (-1.0 / J[i]) for i in range(3)]

    ss = s[0] * s[0] + s[1] * s[1] + s[2] * s[2]
    one = Polynomial.constant(n, 1.0)
    skew = _skew_polys(s)
    sdot = []
    for i in range(3):
        # row i of B(sigma) applied to omega
        acc = Polynomial.zero(n)
        for j in range(3):
            Bij = skew[i][j] * 2.0 + s[i] * s[j] * 2.0
            if i == j:
                Bij = Bij + (one - ss)
            acc = acc + Bij * w[j]
        sdot.append(acc * 0.25)

    G = [[Polynomial.constant(n, 1.0 / J[i]) if i == j else Polynomial.zero(n)
          for j in range(3)] for i in range(3)]
    G += [[Polynomial.zero(n)] * 3 for _ in range(3)]

    return ControlAffineModel(nx=6, nu=3, drift=wdot + sdot, input_matrix=G)


def mrp_body_to_inertial_numerator(nvars=3, offset=0):
    """(1 + sigma^T sigma)^2 * T_IB(sigma) as a 3x3 polynomial matrix.

    T_IB maps body to inertial coordinates; the rational MRP direction-cosine
    matrix is T_IB = I + (8 skew(s)^2 + 4 (1 - s^T s) skew(s)) / (1+s^T s)^2.
    """
    s = [Polynomial.variable(nvars, offset + i) for i in range(3)]
    ss = s[0] * s[0] + s[1] * s[1] + s[2] * s[2]
    one = Polynomial.constant(nvars, 1.0)
    denom = (one + ss) * (one + ss)
    sk = _skew_polys(s)
    sk2 = [[sum((sk[i][k] * sk[k][j] for k in range(3)),
                Polynomial.zero(nvars)) for j in range(3)] for i in range(3)]
    T = [[denom * (1.0 if i == j else 0.0) + sk2[i][j] * 8.0
          + sk[i][j] * (one - ss) * 4.0 for j in range(3)] for i in range(3)]
    return T


def keep_out_cone_poly(n_inertial, b_body, delta_min, nvars=3, offset=0):
    """Polynomial c(sigma), degree 4, with c < 0 iff the boresight stays
    outside the cone: <n, T_IB(sigma) b> - cos(delta_min) < 0.

    The rational MRP direction-cosine matrix is cleared of its strictly
    positive denominator (1 + sigma^T sigma)^2, which preserves the sign.
    By default the polynomial lives in 3 variables (sigma only); pass
    nvars=6, offset=3 to embed it in the spacecraft state space.
    """
    n_i = np.asarray(n_inertial, dtype=float)
    b_b = np.asarray(b_body, dtype=float)
    for v, name in ((n_i, "n_inertial"), (b_b, "b_body")):
        if abs(np.linalg.norm(v) - 1.0) > 1e-9:
            raise ValueError(f"{name} must be unit-norm")
    if not 0.0 < delta_min < math.pi:
        raise ValueError("delta_min must lie in (0, pi)")

    T = mrp_body_to_inertial_numerator(nvars, offset)
    s = [Polynomial.variable(nvars, offset + i) for i in range(3)]
    ss = s[0] * s[0] + s[1] * s[1] + s[2] * s[2]
    one = Polynomial.constant(nvars, 1.0)
    denom = (one + ss) * (one + ss)

    c = Polynomial.zero(nvars)
    for i in range(3):
        for j in range(3):
            if n_i[i] != 0.0 and b_b[j] != 0.0:
                c = c + T[i][j] * (n_i[i] * b_b[j])
    return c - denom * math.cos(delta_min)


def mrp_to_dcm(sigma):
    """Numeric T_IB (body to inertial) for an MRP vector."""
    s = np.asarray(sigma, dtype=float)
    ss = float(s @ s)
    sk = np.array([[0, -s[2], s[1]], [s[2], 0, -s[0]], [-s[1], s[0], 0.0]])
    return np.eye(3) + (8.0 * sk @ sk + 4.0 * (1.0 - ss) * sk) / (1.0 + ss) ** 2


def mrp_to_quaternion(sigma):
    """Unit quaternion (scalar first) for an MRP vector."""
    s = np.asarray(sigma, dtype=float)
    ss = float(s @ s)
    return np.concatenate([[1.0 - ss], 2.0 * s]) / (1.0 + ss)


def mrp_to_euler(sigma):
    """3-2-1 Euler angles (roll phi, pitch theta, yaw psi) in radians.

    Raises GimbalLockError when pitch approaches +-90 deg, where the
    decomposition is not unique.
    """
    q0, q1, q2, q3 = mrp_to_quaternion(sigma)
    sin_theta = 2.0 * (q0 * q2 - q3 * q1)
    if abs(sin_theta) > 1.0 - 1e-9:
        raise GimbalLockError("pitch within 1e-9 of +-90 deg")
    phi = math.atan2(2.0 * (q0 * q1 + q2 * q3), 1.0 - 2.0 * (q1 ** 2 + q2 ** 2))
    theta = math.asin(sin_theta)
    psi = math.atan2(2.0 * (q0 * q3 + q1 * q2), 1.0 - 2.0 * (q2 ** 2 + q3 ** 2))
    return phi, theta, psi


def dcm_to_mrp(T):
    """MRP vector from a body-to-inertial DCM, via Shepperd's quaternion
    extraction (numerically stable branch selection)."""
    # T maps body to inertial; the quaternion of the same rotation satisfies
    # T = T(q). Use the largest of the four squared components.
    tr = np.trace(T)
    cand = np.array([1.0 + tr, 1.0 + 2.0 * T[0, 0] - tr,
                     1.0 + 2.0 * T[1, 1] - tr, 1.0 + 2.0 * T[2, 2] - tr])
    k = int(np.argmax(cand))
    q = np.empty(4)
    if k == 0:
        q[0] = 0.5 * math.sqrt(cand[0])
        q[1] = (T[2, 1] - T[1, 2]) / (4.0 * q[0])
        q[2] = (T[0, 2] - T[2, 0]) / (4.0 * q[0])
        q[3] = (T[1, 0] - T[0, 1]) / (4.0 * q[0])
    else:
        i = k - 1
        j, l = (i + 1) % 3, (i + 2) % 3
        qi = 0.5 * math.sqrt(cand[k])
        q[1 + i] = qi
        q[0] = (T[l, j] - T[j, l]) / (4.0 * qi)
        q[1 + j] = (T[j, i] + T[i, j]) / (4.0 * qi)
        q[1 + l] = (T[l, i] + T[i, l]) / (4.0 * qi)
    if q[0] < 0:
        q = -q
    return q[1:] / (1.0 + q[0])


def euler_to_dcm(phi, theta, psi):
    """Body-to-inertial DCM of the 3-2-1 Euler sequence."""
    c1, s1 = math.cos(psi), math.sin(psi)
    c2, s2 = math.cos(theta), math.sin(theta)
    c3, s3 = math.cos(phi), math.sin(phi)
    Rz = np.array([[c1, -s1, 0], [s1, c1, 0], [0, 0, 1.0]])
    Ry = np.array([[c2, 0, s2], [0, 1.0, 0], [-s2, 0, c2]])
    Rx = np.array([[1.0, 0, 0], [0, c3, -s3], [0, s3, c3]])
    return Rz @ Ry @ Rx


def principal_mrp(axis, angle):
    """sigma = e_hat tan(angle/4) for a principal-axis rotation."""
    e = np.asarray(axis, dtype=float)
    e = e / np.linalg.norm(e)
    return e * math.tan(angle / 4.0)
