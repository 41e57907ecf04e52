"""Offline certificate synthesis: inner approximation of the state
constraint set and alternating convex solution of the coupled
CLF/CBF/feedback sum-of-squares program.

The full program couples the decision polynomials (V, h, kappa) with
S-procedure multipliers through products, so it is bilinear. Holding one
group fixed leaves a convex SOS program in the other, and the alternation
here runs

    M-step:  multipliers free, decisions fixed; decomposes into one small
             feasibility program per SOS block, so an infeasible block is
             identified by name,
    D-step:  decisions free, multipliers fixed, minimizing the coefficient
             distance objective; solved as two convex passes, kappa alone
             (the input-energy square enters through a Schur-complement
             matrix-SOS block) and then V and h jointly.

Every subproblem keeps the incumbent feasible, so the objective is
non-increasing across accepted iterations up to solver slack; an increase
beyond that slack aborts with Stalled. When the objective carries no
weight on the value-function residual the kappa pass is skipped: the
objective is then independent of kappa, its block-coordinate optimum is
the incumbent, and the initial feedback is kept throughout.

Synthesis operates on the unshifted barrier whose safe set is
{h <= beta}; the returned artifact stores h - beta so the online safe set
is {h_hat <= 0}.
"""

import math
from dataclasses import dataclass, replace

import numpy as np
import scipy.linalg

from .control import CertificatePair, StageCost
from .dynamics import ConstraintSet, ControlAffineModel
from .poly import DimensionMismatch, Polynomial, coeff_distance_sq
from .sos import (GramCertificate, StructuralInfeasibility, monomial_basis,
                  prove_sos)
from .sosprog import SosProgram, SymPoly


class SynthesisError(Exception):
    pass


class InfeasibleSubproblem(SynthesisError):
    """A convex subproblem has no solution (or could not be decided);
    carries the name of the failing SOS block and the last iterate."""

    def __init__(self, block, iterate, detail=""):
        msg = f"SOS block '{block}' infeasible"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)
        self.block = block
        self.iterate = iterate


class Stalled(SynthesisError):
    """The objective increased across an outer iteration, which the
    monotone alternation forbids; carries the last good iterate."""

    def __init__(self, iterate, j_old, j_new):
        super().__init__(f"objective increased {j_old:.9e} -> {j_new:.9e}")
        self.iterate = iterate


def _even_ceil(d):
    d = int(d)
    return d if d % 2 == 0 else d + 1


def inner_hyperellipsoid(bounds, order):
    """g(x) = sum_i (x_i / b_i)^order - 1 with {g <= 0} inside the box
    |x_i| <= b_i; order must be even so the sublevel set is bounded."""
    b = np.asarray(bounds, dtype=float)
    if b.ndim != 1 or b.size == 0 or np.any(b <= 0):
        raise ValueError("bounds must be a vector of positive reals")
    order = int(order)
    if order < 2 or order % 2:
        raise ValueError("order must be an even integer >= 2")
    n = b.size
    terms = {(0,) * n: -1.0}
    for i in range(n):
        e = [0] * n
        e[i] = order
        terms[tuple(e)] = (1.0 / b[i]) ** order
    return Polynomial(n, terms)


def riccati_init(A, B, Q, R):
    """Continuous-time LQR pair: P solves the algebraic Riccati equation,
    K = -R^-1 B' P stabilizes the linearization."""
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    Q = np.asarray(Q, dtype=float)
    R = np.asarray(R, dtype=float)
    try:
        P = scipy.linalg.solve_continuous_are(A, B, Q, R)
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError, ValueError) as e:
        raise SynthesisError(f"Riccati solve failed: {e}") from e
    K = -np.linalg.solve(R, B.T @ P)
    return P, K


def _scaling_certificates(g, constraints, sdegs):
    """S-procedure certificates s_k*g - p_k in Sigma for every k, or None
    if any block is infeasible at this dilation."""
    out = []
    for p, ds in zip(constraints, sdegs):
        prog = SosProgram()
        s = prog.new_poly(p.nvars, monomial_basis(p.nvars, ds), "s")
        prog.add_sos(s, name="multiplier")
        try:
            tgt = prog.add_sos(s.mul_poly(g) - p, name="containment")
        except StructuralInfeasibility:
            return None
        sol = prog.solve(trace_weight=1.0, max_iters=60)
        if not sol.feasible:
            return None
        out.append((sol.value(s), sol.gram(tgt)))
    return out


def inner_approx_sos(constraints, shape, deg_multipliers=None,
                     rel_tol=1e-3, log=None):
    """Largest certified dilation of a fixed-shape template inside the
    intersection of the constraint sublevel sets.

    The template sublevel set {shape <= 0} is dilated through
    g_c = (shape - shape(0)) + c*shape(0); c = 1 recovers the template
    and larger c grows the set. The largest c for which every containment
    {g_c <= 0} in {p_k <= 0} admits an S-procedure certificate
    s_k*g_c - p_k in Sigma is located by doubling plus bisection, and the
    g at the final feasible c is returned. deg_multipliers overrides the
    per-constraint multiplier degree (one int, or one per constraint)."""
    cons = list(constraints)
    if not cons:
        raise ValueError("need at least one constraint polynomial")
    nv = shape.nvars
    origin = np.zeros(nv)
    for p in cons:
        if p.nvars != nv:
            raise DimensionMismatch("constraint/shape variable mismatch")
        if p.evaluate(origin) >= 0:
            raise ValueError(
                "every constraint must be strictly negative at the origin")
    s0 = shape.evaluate(origin)
    if s0 >= 0:
        raise ValueError("shape template must be negative at the origin")
    base = shape - s0
    dg = shape.degree()
    if deg_multipliers is None:
        sdegs = [_even_ceil(max(0, p.degree() - dg)) for p in cons]
    elif np.isscalar(deg_multipliers):
        sdegs = [int(deg_multipliers)] * len(cons)
    else:
        sdegs = [int(d) for d in deg_multipliers]
        if len(sdegs) != len(cons):
            raise ValueError("one multiplier degree per constraint")

    def attempt(c):
        return _scaling_certificates(base + c * s0, cons, sdegs)

    lo = hi = None
    best = attempt(1.0)
    if best is not None:
        lo, c = 1.0, 2.0
        while c <= 2.0 ** 16:
            r = attempt(c)
            if r is None:
                hi = c
                break
            lo, best, c = c, r, 2.0 * c
    else:
        hi, c = 1.0, 0.5
        while c >= 2.0 ** -30:
            r = attempt(c)
            if r is not None:
                lo, best = c, r
                break
            hi, c = c, 0.5 * c
        if lo is None:
            raise SynthesisError("no feasible scaling found")
    # hi stays None only when growth never hit a refusal; keep the cap
    while hi is not None and hi - lo > rel_tol * lo:
        mid = 0.5 * (lo + hi)
        r = attempt(mid)
        if r is None:
            hi = mid
        else:
            lo, best = mid, r
    if log is not None:
        log["scaling"] = lo
        log["multipliers"] = [s for s, _ in best]
        log["certificates"] = [c for _, c in best]
    return base + lo * s0


@dataclass(frozen=True)
class SynthesisConfig:
    """Degrees, objective weights, and loop controls for the alternating
    synthesis. deg_multipliers: None uses each block's constraint degree
    rounded up to even; an int fixes every block; a mapping with keys
    'containment', 'decrease', 'input', 'cost' fixes block families.
    distance_zero_vars lists state indices substituted with zero inside
    the set-distance term of the objective. state_scale, when set, lists
    one positive weight per state; synthesis then runs in the coordinates
    x = diag(state_scale) * y and maps the result back, which keeps the
    solver away from the coefficient spread of badly mixed units (small
    angular rates against order-one attitude coordinates)."""

    deg_V: int = 2
    deg_h: int = 2
    deg_kappa: int = 1
    deg_multipliers: object = None
    lambda1: float = 1.0
    lambda2: float = 0.0
    epsilon: float = 2e-6
    a: float = 1e-4
    beta: float = 0.9
    max_outer_iters: int = 10
    objective_stall_tol: float = 1e-3
    distance_zero_vars: tuple = ()
    state_scale: object = None

    def __post_init__(self):
        if self.deg_V < 2 or self.deg_V % 2:
            raise ValueError("deg_V must be even and >= 2")
        if self.deg_h < 2 or self.deg_h % 2:
            raise ValueError("deg_h must be even and >= 2")
        if self.deg_kappa < 1:
            raise ValueError("deg_kappa must be >= 1")
        dm = self.deg_multipliers
        if isinstance(dm, dict):
            bad = set(dm) - {"containment", "decrease", "input", "cost"}
            if bad:
                raise ValueError(f"unknown multiplier keys: {sorted(bad)}")
            vals = list(dm.values())
        else:
            vals = [] if dm is None else [dm]
        for v in vals:
            if int(v) < 0 or int(v) % 2:
                raise ValueError("multiplier degrees must be even and >= 0")
        if self.lambda1 < 0 or self.lambda2 < 0 or \
                abs(self.lambda1 + self.lambda2 - 1.0) > 1e-9:
            raise ValueError("lambda1 + lambda2 must equal 1, both >= 0")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if not self.a > 0:
            raise ValueError("class-K slope a must be positive")
        if not self.beta > 0:
            raise ValueError("beta must be positive")
        if self.max_outer_iters < 1:
            raise ValueError("max_outer_iters must be >= 1")
        if self.objective_stall_tol < 0:
            raise ValueError("objective_stall_tol must be >= 0")
        object.__setattr__(self, "distance_zero_vars",
                           tuple(int(i) for i in self.distance_zero_vars))
        if self.state_scale is not None:
            ss = tuple(float(s) for s in self.state_scale)
            if not all(math.isfinite(s) and s > 0 for s in ss):
                raise ValueError("state_scale entries must be positive "
                                 "and finite")
            object.__setattr__(self, "state_scale", ss)

    def mult_degree(self, family, constraint_degree):
        dm = self.deg_multipliers
        if isinstance(dm, dict):
            return int(dm[family]) if family in dm \
                else _even_ceil(constraint_degree)
        if dm is not None:
            return int(dm)
        return _even_ceil(constraint_degree)


def linearize(model):
    """Jacobian pair (A, B) of the control-affine model at the origin."""
    origin = np.zeros(model.nx)
    A = np.empty((model.nx, model.nx))
    for i, f in enumerate(model.drift):
        for j, d in enumerate(f.gradient()):
            A[i, j] = d.evaluate(origin)
    B = np.array([[gij.evaluate(origin) for gij in row]
                  for row in model.input_matrix])
    return A, B


def _quadratic_form_of(p):
    """(D, c) with p = x'Dx + c, or None when p has terms of other
    degree."""
    D = np.zeros((p.nvars, p.nvars))
    c = 0.0
    for e, coef in p.terms.items():
        d = sum(e)
        if d == 0:
            c = coef
        elif d == 2:
            idx = [i for i, k in enumerate(e) if k]
            if len(idx) == 1:
                D[idx[0], idx[0]] = coef
            else:
                i, j = idx
                D[i, j] = D[j, i] = 0.5 * coef
        else:
            return None
    return D, c


def _first_positive_root(p, u, steps=64):
    """Smallest t > 0 with p(t u) >= 0 along the ray, None if p stays
    negative out to the bracket cap."""
    t_hi = 1.0
    while p.evaluate(t_hi * u) < 0.0:
        t_hi *= 2.0
        if t_hi > 2.0 ** 20:
            return None
    prev = 0.0
    for k in range(1, steps + 1):
        t = t_hi * k / steps
        if p.evaluate(t * u) >= 0.0:
            lo, hi = prev, t
            for _ in range(60):
                mid = 0.5 * (lo + hi)
                if p.evaluate(mid * u) >= 0.0:
                    hi = mid
                else:
                    lo = mid
            return hi
        prev = t
    return t_hi


def default_init(model, constraints, stage, config, inflate=2.0,
                 shrink=1.0, samples=4096):
    """Initial certificate triple from the origin linearization.

    V is the inflated Riccati quadratic (1 + eta) x'Px, kappa the
    matching LQR feedback, and the barrier the largest sublevel set of V
    that sits inside every state constraint and keeps the feedback
    within the input polytope. Riccati sublevels make a sound start
    because the cross terms of P damp the weakly actuated states through
    the feedback; templates weighted on individual states fail the
    decrease condition at every scale once drift in the lightly weighted
    directions dominates the boundary derivative.

    At the exact Riccati pair the decrease-with-cost margin is zero to
    second order, leaving no strictly feasible multiplier; inflate > 1
    scales V so the margin is strictly negative, and larger values also
    push out the region where it beats the cubic drift corrections. The
    inscribed level is exact for quadratic constraints (generalized
    eigenvalue) and ray-sampled otherwise, so it can come out optimistic
    on non-quadratic sets; the M-step re-proves containment exactly, and
    callers ladder shrink > 1 upward when a level fails there."""
    A, B = linearize(model)
    P, K = riccati_init(A, B, stage.Q, stage.R)
    Pt = P * float(inflate)
    Pinv = np.linalg.inv(Pt)
    level = math.inf
    for w in np.asarray(constraints.input_matrix_HU, float) @ K:
        q = float(w @ Pinv @ w)
        if q > 0.0:
            level = min(level, 1.0 / q)
    rng = np.random.default_rng(12345)
    axes = np.vstack([np.eye(model.nx), -np.eye(model.nx)])
    for p in constraints.state_polys:
        quad = _quadratic_form_of(p)
        if quad is not None:
            D, c0 = quad
            lam = scipy.linalg.eigh(D, Pt, eigvals_only=True)[-1]
            if lam > 0.0:
                level = min(level, -c0 / lam)
            continue
        dirs = rng.standard_normal((samples, model.nx))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        for u in np.vstack([axes, dirs]):
            t = _first_positive_root(p, u)
            if t is not None:
                level = min(level, t * t * float(u @ Pt @ u))
    if not math.isfinite(level) or level <= 0.0:
        raise SynthesisError("no positive inscribed level for the initial "
                             "safe set")
    level *= 0.98 / float(shrink)
    V = Polynomial.from_quadratic_form(Pt)
    kap = []
    for i in range(model.nu):
        terms = {}
        for j in range(model.nx):
            if K[i, j] != 0.0:
                e = [0] * model.nx
                e[j] = 1
                terms[tuple(e)] = K[i, j]
        kap.append(Polynomial(model.nx, terms))
    beta = config.beta
    h_online = V * (beta / level) - beta
    return CertificatePair(V_hat=V, h_hat=h_online, kappa_hat=kap,
                           a=config.a)


def _min_term_degree(p):
    return min((sum(e) for e, c in p.terms.items() if c != 0.0), default=0)


def _check_init(model, config, init):
    if init.kappa_hat is None:
        raise ValueError("init must carry kappa_hat")
    if len(init.kappa_hat) != model.nu:
        raise DimensionMismatch("kappa_hat length != nu")
    if init.V_hat.nvars != model.nx:
        raise DimensionMismatch("init nvars != model.nx")
    if init.V_hat.degree() > config.deg_V:
        raise ValueError("init V_hat degree exceeds config.deg_V")
    if _min_term_degree(init.V_hat) < 2:
        raise ValueError("init V_hat must have no constant or linear terms")
    if init.h_hat.degree() > config.deg_h:
        raise ValueError("init h_hat degree exceeds config.deg_h")
    for k in init.kappa_hat:
        if k.degree() > config.deg_kappa:
            raise ValueError("init kappa_hat degree exceeds config.deg_kappa")
        if not k.is_zero() and _min_term_degree(k) < 1:
            raise ValueError("init kappa_hat must vanish at the origin")


def _scale_poly(p, t):
    """p(diag(t) y) as a polynomial in y: one coefficient multiply per
    monomial, so the map is exactly invertible with 1/t up to a float
    rounding per term."""
    terms = {}
    for e, c in p.terms.items():
        f = 1.0
        for ti, ei in zip(t, e):
            if ei:
                f *= ti ** ei
        terms[e] = c * f
    return Polynomial(p.nvars, terms)


def _synthesize_in_scaled_coords(model, constraints, stage, config, init,
                                 log):
    """Run synthesis in the coordinates x = diag(t) y and map the result
    back. The artifact returned is in the original coordinates; the log
    keeps the scaled artifact alongside the multipliers and grams, which
    certify the scaled identities (the well-conditioned form of the same
    statements, since SOS survives the linear substitution both ways)."""
    t = config.state_scale
    if len(t) != model.nx:
        raise DimensionMismatch("state_scale length != model.nx")
    tinv = tuple(1.0 / s for s in t)
    T = np.diag(t)
    model_s = ControlAffineModel(
        nx=model.nx, nu=model.nu,
        drift=[_scale_poly(f, t) * tinv[i]
               for i, f in enumerate(model.drift)],
        input_matrix=[[_scale_poly(gij, t) * tinv[i] for gij in row]
                      for i, row in enumerate(model.input_matrix)])
    cons_s = ConstraintSet(
        state_polys=[_scale_poly(g_, t)
                     for g_ in constraints.state_polys],
        input_matrix_HU=constraints.input_matrix_HU)
    stage_s = StageCost(Q=T @ stage.Q @ T, R=stage.R)
    init_s = CertificatePair(
        V_hat=_scale_poly(init.V_hat, t),
        h_hat=_scale_poly(init.h_hat, t),
        kappa_hat=[_scale_poly(k, t) for k in init.kappa_hat],
        a=init.a)
    config_s = replace(config, state_scale=None)
    art_s = synthesize_certificate(model_s, cons_s, stage_s, config_s,
                                   init_s, log=log)
    if log is not None:
        log["state_scale"] = t
        log["scaled_artifact"] = art_s
    return CertificatePair(
        V_hat=_scale_poly(art_s.V_hat, tinv),
        h_hat=_scale_poly(art_s.h_hat, tinv),
        kappa_hat=[_scale_poly(k, tinv) for k in art_s.kappa_hat],
        a=art_s.a)


def synthesize_certificate(model, constraints, stage, config, init,
                           log=None):
    """Alternating convex solution of the joint CLF/CBF/feedback program.

    constraints.state_polys lists the containment targets; the first one
    doubles as the set-distance target of the objective, so callers pass
    the inner approximation first. Returns the shifted CertificatePair;
    the optional log dict receives the objective history, the final
    multipliers, and per-block Gram certificates consistent with the
    returned polynomials.

    Raises InfeasibleSubproblem only when the initial iterate cannot be
    certified (failed block by name, with the iterate): once any iterate
    holds a full set of block grams, later solver failures stop the loop
    with status multiplier-step-limit or decision-step-limit and the
    last certified iterate is returned. Raises Stalled on an objective
    increase, which the monotone scheme forbids."""
    if config.state_scale is not None:
        return _synthesize_in_scaled_coords(model, constraints, stage,
                                            config, init, log)
    nx, nu = model.nx, model.nu
    gs = list(constraints.state_polys)
    HU = np.asarray(constraints.input_matrix_HU, dtype=float)
    n_in = HU.shape[0]
    _check_init(model, config, init)
    beta, a, eps = config.beta, config.a, config.epsilon
    lam1, lam2 = config.lambda1, config.lambda2

    xQx = Polynomial.from_quadratic_form(stage.Q)
    xx = Polynomial.from_quadratic_form(np.eye(nx))
    Rchol = np.linalg.cholesky(stage.R)  # R = L L'

    # current iterate; h lives in synthesis space, safe set {h <= beta}
    V = init.V_hat
    h = init.h_hat + beta
    kap = list(init.kappa_hat)

    deg_f = max(max(f.degree() for f in model.drift),
                max(g_.degree() for row in model.input_matrix
                    for g_ in row) + config.deg_kappa)
    ds_cont = [config.mult_degree("containment", g_.degree()) for g_ in gs]
    ds_dec = config.mult_degree(
        "decrease", max(config.deg_h - 1 + deg_f, config.deg_h))
    ds_in = config.mult_degree("input", config.deg_kappa)
    ds_cost = config.mult_degree(
        "cost", max(config.deg_V - 1 + deg_f, 2, 2 * config.deg_kappa))

    mons_V = [e for e in monomial_basis(nx, config.deg_V) if sum(e) >= 2]
    mons_h = monomial_basis(nx, config.deg_h)
    mons_k = [e for e in monomial_basis(nx, config.deg_kappa) if sum(e) >= 1]

    def artifact(Vc, hc, kc):
        return CertificatePair(V_hat=Vc, h_hat=hc - beta, kappa_hat=list(kc),
                               a=a)

    def grad_dot(p, field):
        out = Polynomial.zero(nx)
        for gi, fi in zip(p.gradient(), field):
            out = out + gi * fi
        return out

    def kappa_energy(kc):
        # k' R k through the Cholesky factor
        out = Polynomial.zero(nx)
        for i in range(nu):
            w = Polynomial.zero(nx)
            for j in range(nu):
                if Rchol[j, i] != 0.0:
                    w = w + kc[j] * Rchol[j, i]
            out = out + w * w
        return out

    def exact_objective(Vc, hc, kc):
        total = 0.0
        if lam1 > 0:
            d = gs[0] - hc
            if config.distance_zero_vars:
                d = d.substitute({i: 0.0 for i in config.distance_zero_vars})
            total += lam1 * coeff_distance_sq(d, Polynomial.zero(nx))
        if lam2 > 0:
            stage_cl = xQx + kappa_energy(kc)
            d = grad_dot(Vc, model.closed_loop_field(kc)) - stage_cl
            total += lam2 * coeff_distance_sq(d, Polynomial.zero(nx))
        return total

    def m_step(Vc, hc, kc):
        """Fresh multipliers for fixed decisions, block by block.

        Each block maximizes its margin t in  s*hb + fixed - t*w  with
        w the sum of squared basis monomials, rather than solving bare
        feasibility: a minimal multiplier leaves the block Gram exactly
        on the cone boundary, which pins the following decision step to
        a razor-thin feasible set and defeats the interior-point solver.
        The block certificate is recovered as Q + t*I on the same basis.
        Feasibility is unchanged since t = 0 is allowed.

        The decrease and cost blocks vanish at the origin up to O(a), so
        their multipliers would be forced to s(0) ~ 0 anyway; building
        them without constant and linear terms (and their blocks without
        the constant Gram direction) removes that degenerate corner
        instead of leaving it to the solver. Returns (multipliers, block
        grams) for the incumbent."""
        hb = hc - beta
        f_cl = model.closed_loop_field(kc)
        tau = grad_dot(Vc, f_cl) + xQx + kappa_energy(kc)
        hdot = grad_dot(hc, f_cl)
        jobs = [(f"containment[{j}]", ds_cont[j], -g_, False)
                for j, g_ in enumerate(gs)]
        jobs.append(("barrier-decrease", ds_dec, hb * (-a) - hdot, True))
        for i in range(n_in):
            ui = Polynomial.zero(nx)
            for j in range(nu):
                ui = ui + kc[j] * HU[i, j]
            jobs.append((f"input-admissibility[{i}]", ds_in, 1.0 - ui,
                         False))
        jobs.append(("cost-decrease", ds_cost, -tau, True))
        mults, grams = {}, {}
        for name, ds, fixed, vanishing in jobs:
            prog = SosProgram()
            min_deg = 2 if vanishing else 0
            mons_s = [e for e in monomial_basis(nx, ds)
                      if min_deg <= sum(e)]
            if mons_s:
                s = prog.new_poly(nx, mons_s, "s")
                prog.add_sos(s, basis=[e for e in
                                       monomial_basis(nx, ds // 2)
                                       if sum(e) >= min_deg // 2],
                             name="multiplier")
                shb = s.mul_poly(hb)
            else:
                s = None
                shb = SymPoly.from_poly(Polynomial.zero(nx))
            db = max(ds + hb.degree(), fixed.degree())
            basis = [e for e in monomial_basis(nx, (db + 1) // 2)
                     if sum(e) >= min_deg // 2]
            w = Polynomial(nx, {tuple(2 * ei for ei in e): 1.0
                                for e in basis})
            t = prog.new_poly(nx, [(0,) * nx], "t")
            prog.add_sos(t, name="margin-sign")
            try:
                blk = prog.add_sos(shb + fixed - t.mul_poly(w),
                                   basis=basis, name=name)
            except StructuralInfeasibility as e:
                raise InfeasibleSubproblem(
                    name, artifact(Vc, hc, kc), str(e)) from e
            prog.add_coeff_l2(t - 1.0, 1.0)
            sol = prog.solve(trace_weight=1e-3, max_iters=80)
            if not sol.feasible:
                raise InfeasibleSubproblem(
                    name, artifact(Vc, hc, kc), f"status {sol.status}")
            mults[name] = sol.value(s) if s is not None \
                else Polynomial.zero(nx)
            t_val = max(sol.value(t).evaluate(np.zeros(nx)), 0.0)
            cert = sol.gram(blk)
            grams[name] = GramCertificate(
                cert.basis, cert.Q + t_val * np.eye(len(cert.basis)))
        return mults, grams

    def kappa_step(Vc, hc, kc, mults):
        """kappa free, everything else fixed; minimizes the value-function
        residual with the input-energy square frozen at the incumbent (the
        true square is not affine in the coefficients). Acceptance happens
        outside, on the exact objective."""
        hb = hc - beta
        prog = SosProgram()
        ks = [prog.new_poly(nx, mons_k, f"k{i}") for i in range(nu)]
        G = model.input_matrix

        def field_dot(p):
            # <grad p, f0 + G kappa> with kappa symbolic
            gp = p.gradient()
            out = SymPoly.from_poly(grad_dot(p, model.drift))
            for j in range(nu):
                wj = Polynomial.zero(nx)
                for i in range(nx):
                    wj = wj + gp[i] * G[i][j]
                out = out + ks[j].mul_poly(wj)
            return out

        s2 = mults["barrier-decrease"]
        prog.add_sos(SymPoly.from_poly(s2 * hb - hb * a) - field_dot(hc),
                     name="barrier-decrease")
        for i in range(n_in):
            si = mults[f"input-admissibility[{i}]"]
            expr = SymPoly.from_poly(si * hb + 1.0)
            for j in range(nu):
                if HU[i, j] != 0.0:
                    expr = expr - ks[j].scaled(HU[i, j])
            prog.add_sos(expr, name=f"input-admissibility[{i}]")
        # decrease-with-cost as a Schur complement in (x, y):
        # [[s4*hb - <grad V, f> - x'Qx, (L'k)'], [L'k, I]] >= 0
        s4 = mults["cost-decrease"]
        M = [[SymPoly.from_poly(s4 * hb - xQx) - field_dot(Vc)]
             + [0.0] * nu]
        for i in range(nu):
            wi = SymPoly(nx, {})
            for j in range(nu):
                if Rchol[j, i] != 0.0:
                    wi = wi + ks[j].scaled(Rchol[j, i])
            M.append([wi] + [1.0 if j == i else 0.0 for j in range(nu)])
        dA = max(ds_cost + config.deg_h, config.deg_V - 1 + deg_f,
                 2, 2 * config.deg_kappa)
        bases = [monomial_basis(nx, (dA + 1) // 2)] + [[(0,) * nx]] * nu
        prog.add_matrix_sos(M, bases, name="cost-decrease")
        resid = field_dot(Vc) \
            - SymPoly.from_poly(xQx + kappa_energy(kc))
        prog.add_coeff_l2(resid, lam2)
        sol = prog.solve(trace_weight=1e-9, max_iters=80)
        if not sol.feasible:
            return None
        return [sol.value(k) for k in ks]

    def decision_step(kc, mults):
        """V and h free, kappa and multipliers fixed.

        The positive-definiteness and cost blocks vanish identically at
        the origin (V has no affine part and the cost multiplier has no
        constant or linear part), so their Gram rows for the constant
        monomial are structurally zero. Dropping that monomial from the
        bases removes a flat direction the interior-point solver would
        otherwise grind against."""
        f_cl = model.closed_loop_field(kc)
        stage_cl = xQx + kappa_energy(kc)
        deg_fcl = max(p.degree() for p in f_cl)
        deg_V_t = max(sum(e) for e in mons_V)
        deg_h_t = max(sum(e) for e in mons_h)
        basis_pd = [e for e in monomial_basis(nx, (deg_V_t + 1) // 2)
                    if sum(e) >= 1]
        db_cost = max(ds_cost + deg_h_t, deg_V_t - 1 + deg_fcl,
                      stage_cl.degree())
        basis_cost = [e for e in monomial_basis(nx, (db_cost + 1) // 2)
                      if sum(e) >= 1]
        prog = SosProgram()
        Vs = prog.new_poly(nx, mons_V, "V")
        hs = prog.new_poly(nx, mons_h, "h")
        hbs = hs - beta
        blocks = {"positive-definiteness": prog.add_sos(
            Vs - xx * eps, basis=basis_pd, name="positive-definiteness")}
        for j, g_ in enumerate(gs):
            blocks[f"containment[{j}]"] = prog.add_sos(
                hbs.mul_poly(mults[f"containment[{j}]"]) - g_,
                name=f"containment[{j}]")
        hdot_s = SymPoly(nx, {})
        for i in range(nx):
            hdot_s = hdot_s + hs.diff(i).mul_poly(f_cl[i])
        blocks["barrier-decrease"] = prog.add_sos(
            hbs.mul_poly(mults["barrier-decrease"]) - hdot_s
            - hbs.scaled(a), name="barrier-decrease")
        for i in range(n_in):
            ui = Polynomial.zero(nx)
            for j in range(nu):
                ui = ui + kc[j] * HU[i, j]
            blocks[f"input-admissibility[{i}]"] = prog.add_sos(
                hbs.mul_poly(mults[f"input-admissibility[{i}]"])
                - (ui - 1.0), name=f"input-admissibility[{i}]")
        vdot_s = SymPoly(nx, {})
        for i in range(nx):
            vdot_s = vdot_s + Vs.diff(i).mul_poly(f_cl[i])
        blocks["cost-decrease"] = prog.add_sos(
            hbs.mul_poly(mults["cost-decrease"]) - vdot_s - stage_cl,
            basis=basis_cost, name="cost-decrease")
        if lam1 > 0:
            d = hs - gs[0]
            if config.distance_zero_vars:
                d = d.zero_vars(config.distance_zero_vars)
            prog.add_coeff_l2(d, lam1)
        if lam2 > 0:
            prog.add_coeff_l2(vdot_s - stage_cl, lam2)
        sol = prog.solve(trace_weight=1e-9, max_iters=80)
        if not sol.feasible:
            return None, None, None, sol.status
        grams = {name: sol.gram(blk) for name, blk in blocks.items()}
        return sol.value(Vs), sol.value(hs), grams, sol.status

    def try_m_step(Vc, hc, kc):
        try:
            return m_step(Vc, hc, kc)
        except InfeasibleSubproblem:
            return None

    def level_growth(Vc, hc, kc, j_ref):
        """Largest admissible rescale of the barrier: the beta-level set
        of (beta/c)*h is the c-level set of h, so raising c grows the
        safe set without changing its shape. The multiplier step is the
        feasibility oracle; among feasible levels the one with the best
        exact objective not above j_ref wins. Without this step the
        alternation can stop at its initialization: minimal multipliers
        pin the barrier's coefficients exactly where they are."""
        def rescaled(c):
            return hc * (beta / c)

        cands = []
        lo, hi = beta, None
        c = 2.0 * beta
        while c <= beta * 2.0 ** 10:
            m = try_m_step(Vc, rescaled(c), kc)
            if m is None:
                hi = c
                break
            cands.append((c, m))
            lo, c = c, 2.0 * c
        while hi is not None and hi - lo > 0.05 * lo:
            mid = 0.5 * (lo + hi)
            m = try_m_step(Vc, rescaled(mid), kc)
            if m is None:
                hi = mid
            else:
                cands.append((mid, m))
                lo = mid
        best = None
        for c, m in cands:
            hx = rescaled(c)
            j = exact_objective(Vc, hx, kc)
            if j > j_ref:
                continue
            if best is None or j < best[0] - 1e-12 or \
                    (j <= best[0] + 1e-12 and c > best[1]):
                best = (j, c, hx, m)
        return best

    # the first decision step inherits a feasible point from the incumbent
    # only if the incumbent itself clears the definiteness block
    cert0, rep0 = prove_sos(V - xx * eps, tol=1e-6)
    if cert0 is None or not rep0.valid:
        raise InfeasibleSubproblem("positive-definiteness",
                                   artifact(V, h, kap))

    j_cur = exact_objective(V, h, kap)
    history = [j_cur]
    levels = []
    mults = grams = None
    pd_gram = cert0
    status = "iteration-cap"
    grow = True
    for _ in range(config.max_outer_iters):
        # multipliers and block grams for the current incumbent; every
        # solver failure past this point keeps a certified iterate, so
        # only the first multiplier step may raise
        grown = level_growth(V, h, kap, j_cur) if grow else None
        if grown is not None:
            j_g, c_g, h, (mults, mgrams) = grown
            j_cur = min(j_cur, j_g)
            levels.append(c_g)
            grow = c_g > 1.05 * beta
        else:
            try:
                mults, mgrams = m_step(V, h, kap)
            except InfeasibleSubproblem:
                if grams is None:
                    raise
                status = "multiplier-step-limit"
                break
            grow = False
        grams = dict(mgrams)
        grams["positive-definiteness"] = pd_gram
        if lam2 > 0:
            kap_try = kappa_step(V, h, kap, mults)
            if kap_try is not None:
                j_try = exact_objective(V, h, kap_try)
                if j_try <= j_cur + 1e-6 * (1.0 + abs(j_cur)):
                    # accept only with a fresh certificate for the new
                    # closed loop
                    refreshed = try_m_step(V, h, kap_try)
                    if refreshed is not None:
                        kap = kap_try
                        j_cur = j_try
                        mults, mgrams = refreshed
                        grams = dict(mgrams)
                        grams["positive-definiteness"] = pd_gram
        V_new, h_new, grams_new, dstat = decision_step(kap, mults)
        if V_new is None:
            # the incumbent with the fresh multipliers is feasible for
            # this program, so a failure here is numerical, not a
            # certificate problem; stop on what is already certified
            status = "decision-step-limit"
            break
        j_new = exact_objective(V_new, h_new, kap)
        if j_new > j_cur + 1e-6 * (1.0 + abs(j_cur)):
            raise Stalled(artifact(V, h, kap), j_cur, j_new)
        V, h, grams = V_new, h_new, grams_new
        pd_gram = grams_new["positive-definiteness"]
        history.append(j_new)
        decrease = j_cur - j_new
        j_cur = j_new
        if decrease <= config.objective_stall_tol * (1.0 + abs(j_new)):
            status = "converged"
            break
    if log is not None:
        log["objective"] = history
        log["status"] = status
        log["iterations"] = len(history) - 1
        log["levels"] = levels
        log["multipliers"] = mults
        log["certificates"] = grams
        log["block_margins"] = {
            name: float(np.linalg.eigvalsh(c.Q).min())
            for name, c in grams.items()}
    return artifact(V, h, kap)
