"""Dense primal-dual interior-point solver for small semidefinite programs.

Standard form with an optional free-variable tail:

    minimize    <C, X> + c_free' v
    subject to  <A_i, X> + (F v)_i = b_i,   i = 1..k
                X >= 0 (block diagonal),    v free

Dual:  maximize b'y  s.t.  S = C - sum_i y_i A_i >= 0,  F'y = c_free.

The search direction is the HKM direction with a Mehrotra predictor-
corrector. All linear algebra is dense; Gram blocks in this package stay
below ~40x40, so the k x k Schur complement dominates and one BLAS GEMM
assembles it per iteration.

Infeasibility is reported through approximate Farkas certificates at
tolerance 1e-6: a dual improving ray for primal infeasibility, a primal
ray of negative cost for dual infeasibility. Numerically dependent
constraint rows are removed by a rank-revealing QR presolve (threshold
1e-10) before the first iteration; redundant rows would otherwise make
the KKT system exactly singular.
"""

import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

PRESOLVE_TOL = 1e-10
CERT_TOL = 1e-6


class SdpError(Exception):
    pass


class IllPosed(SdpError):
    pass


class IterationLimit(SdpError):
    """Raised when raise_on_limit is set; carries the best iterate."""

    def __init__(self, message, solution=None):
        super().__init__(message)
        self.solution = solution


def _normalize_triplets(blocks, spec, what):
    """Accept a matrix spec as triplets [(blk,i,j,v),...], a list of
    per-block dense arrays, or one dense block-diagonal array. Returns
    canonical triplet arrays with one entry per unordered index pair."""
    nblk = len(blocks)
    acc = {}

    def put(bi, i, j, v):
        if i < j:
            i, j = j, i
        key = (bi, i, j)
        acc[key] = acc.get(key, 0.0) + v

    if spec is None:
        pass
    elif isinstance(spec, (list, tuple)) and spec and not hasattr(spec[0], "shape") \
            and len(spec[0]) == 4:
        for bi, i, j, v in spec:
            if not (0 <= bi < nblk and 0 <= i < blocks[bi] and 0 <= j < blocks[bi]):
                raise ValueError(f"{what}: triplet index out of range")
            put(int(bi), int(i), int(j), float(v))
    elif isinstance(spec, (list, tuple)):
        if len(spec) != nblk:
            raise ValueError(f"{what}: expected {nblk} blocks")
        for bi, Mb in enumerate(spec):
            Mb = np.asarray(Mb, dtype=float)
            n = blocks[bi]
            if Mb.shape != (n, n):
                raise ValueError(f"{what}: block {bi} has shape {Mb.shape}")
            if np.max(np.abs(Mb - Mb.T), initial=0.0) > 1e-12 * (1 + np.abs(Mb).max()):
                raise ValueError(f"{what}: block {bi} not symmetric")
            for i in range(n):
                for j in range(i + 1):
                    if Mb[i, j] != 0.0:
                        put(bi, i, j, Mb[i, j])
    else:
        M = np.asarray(spec, dtype=float)
        n_tot = sum(blocks)
        if M.shape != (n_tot, n_tot):
            raise ValueError(f"{what}: expected {n_tot}x{n_tot} dense matrix")
        off = 0
        parts = []
        for n in blocks:
            parts.append(M[off:off + n, off:off + n])
            off += n
        return _normalize_triplets(blocks, parts, what)

    keys = sorted(acc)
    blk = np.array([k[0] for k in keys], dtype=np.int64)
    row = np.array([k[1] for k in keys], dtype=np.int64)
    col = np.array([k[2] for k in keys], dtype=np.int64)
    val = np.array([acc[k] for k in keys], dtype=float)
    keep = np.abs(val) > 0.0
    return blk[keep], row[keep], col[keep], val[keep]


class SdpProblem:
    """Immutable problem data in block sparse-triplet form.

    blocks: tuple of PSD block dimensions.
    C, A_list: cost and constraint matrices, each given as triplets
        [(blk, i, j, value), ...] (one entry per unordered pair; (i, j)
        and (j, i) refer to the same entry), per-block dense lists, or
        dense block-diagonal arrays.
    b: right-hand side, length k.
    F: optional k x nfree coupling of free variables into the constraints.
    c_free: optional cost on the free variables.
    """

    def __init__(self, blocks, C, A_list, b, F=None, c_free=None):
        self.blocks = tuple(int(n) for n in blocks)
        if any(n <= 0 for n in self.blocks) or not self.blocks:
            raise ValueError("block dimensions must be positive")
        self.b = np.asarray(b, dtype=float).reshape(-1)
        k = self.b.shape[0]
        self.cost = _normalize_triplets(self.blocks, C, "C")

        con_blk, con_row, con_col, con_val, con_idx = [], [], [], [], []
        if len(A_list) != k:
            raise ValueError("A_list length must match b")
        for i, Ai in enumerate(A_list):
            tb, tr, tc, tv = _normalize_triplets(self.blocks, Ai, f"A[{i}]")
            con_idx.append(np.full(tb.shape[0], i, dtype=np.int64))
            con_blk.append(tb)
            con_row.append(tr)
            con_col.append(tc)
            con_val.append(tv)
        self.con = (
            np.concatenate(con_idx) if con_idx else np.zeros(0, np.int64),
            np.concatenate(con_blk) if con_blk else np.zeros(0, np.int64),
            np.concatenate(con_row) if con_row else np.zeros(0, np.int64),
            np.concatenate(con_col) if con_col else np.zeros(0, np.int64),
            np.concatenate(con_val) if con_val else np.zeros(0, float),
        )
        if F is None:
            self.F = np.zeros((k, 0))
        else:
            self.F = np.asarray(F, dtype=float).reshape(k, -1)
        nf = self.F.shape[1]
        if c_free is None:
            self.c_free = np.zeros(nf)
        else:
            self.c_free = np.asarray(c_free, dtype=float).reshape(-1)
            if self.c_free.shape[0] != nf:
                raise ValueError("c_free length must match F columns")

    @classmethod
    def from_triplets(cls, blocks, cost_triplets, constraint_triplets, b,
                      F=None, c_free=None):
        """constraint_triplets: array-like of rows (con, blk, i, j, value)."""
        prob = cls.__new__(cls)
        prob.blocks = tuple(int(n) for n in blocks)
        prob.b = np.asarray(b, dtype=float).reshape(-1)
        k = prob.b.shape[0]
        prob.cost = _normalize_triplets(prob.blocks, list(cost_triplets), "C")
        rows = np.asarray(list(constraint_triplets), dtype=float)
        if rows.size == 0:
            rows = np.zeros((0, 5))
        acc = {}
        for ci, bi, i, j, v in rows:
            i, j = (int(i), int(j)) if i >= j else (int(j), int(i))
            key = (int(ci), int(bi), i, j)
            acc[key] = acc.get(key, 0.0) + float(v)
        keys = sorted(acc)
        arr = np.array(keys, dtype=np.int64).reshape(-1, 4)
        val = np.array([acc[kk] for kk in keys], dtype=float)
        keep = np.abs(val) > 0.0
        if arr.size and (arr[:, 0].max(initial=0) >= k):
            raise ValueError("constraint index out of range")
        prob.con = (arr[keep, 0] if arr.size else np.zeros(0, np.int64),
                    arr[keep, 1] if arr.size else np.zeros(0, np.int64),
                    arr[keep, 2] if arr.size else np.zeros(0, np.int64),
                    arr[keep, 3] if arr.size else np.zeros(0, np.int64),
                    val[keep])
        prob.F = (np.zeros((k, 0)) if F is None
                  else np.asarray(F, dtype=float).reshape(k, -1))
        nf = prob.F.shape[1]
        prob.c_free = (np.zeros(nf) if c_free is None
                       else np.asarray(c_free, dtype=float).reshape(-1))
        if prob.c_free.shape[0] != nf:
            raise ValueError("c_free length must match F columns")
        return prob

    @property
    def num_constraints(self):
        return self.b.shape[0]

    @property
    def num_free(self):
        return self.F.shape[1]

    def dense_C(self):
        out = [np.zeros((n, n)) for n in self.blocks]
        tb, tr, tc, tv = self.cost
        for bi, i, j, v in zip(tb, tr, tc, tv):
            out[bi][i, j] = v
            out[bi][j, i] = v
        return out

    def to_json(self):
        tb, tr, tc, tv = self.cost
        ci, cb, cr, cc, cv = self.con
        payload = {
            "blocks": list(self.blocks),
            "cost": [[int(b_), int(i), int(j), float(v)]
                     for b_, i, j, v in zip(tb, tr, tc, tv)],
            "constraints": [[int(a), int(b_), int(i), int(j), float(v)]
                            for a, b_, i, j, v in zip(ci, cb, cr, cc, cv)],
            "b": [float(x) for x in self.b],
        }
        if self.F.shape[1]:
            nz = np.nonzero(self.F)
            payload["free"] = [[int(i), int(j), float(self.F[i, j])]
                               for i, j in zip(*nz)]
            payload["num_free"] = int(self.F.shape[1])
            payload["free_cost"] = [float(x) for x in self.c_free]
        return json.dumps(payload, sort_keys=True)

    @classmethod
    def from_json(cls, text):
        d = json.loads(text)
        k = len(d["b"])
        F = None
        c_free = None
        if "num_free" in d:
            F = np.zeros((k, d["num_free"]))
            for i, j, v in d.get("free", []):
                F[i, j] = v
            c_free = np.array(d.get("free_cost", [0.0] * d["num_free"]))
        return cls.from_triplets(d["blocks"], [tuple(t) for t in d["cost"]],
                                 [tuple(t) for t in d["constraints"]],
                                 d["b"], F=F, c_free=c_free)


@dataclass
class SdpSolution:
    X: list
    y: np.ndarray
    S: list
    duality_gap: float
    status: str
    x_free: np.ndarray = field(default_factory=lambda: np.zeros(0))
    primal_objective: float = math.nan
    dual_objective: float = math.nan
    iterations: int = 0


class _Workspace:
    """Per-solve dense views: AA[b] stacks row i = vec(A_i block b)."""

    def __init__(self, prob, rows):
        self.blocks = prob.blocks
        self.rows = rows
        k = len(rows)
        remap = -np.ones(prob.num_constraints, dtype=np.int64)
        remap[rows] = np.arange(k)
        ci, cb, cr, cc, cv = prob.con
        keep = remap[ci] >= 0
        ci = remap[ci[keep]]
        cb, cr, cc, cv = cb[keep], cr[keep], cc[keep], cv[keep]
        self.AA = []
        self.rows_b = []
        for bi, n in enumerate(prob.blocks):
            sel = cb == bi
            M = np.zeros((k, n * n))
            M[ci[sel], cr[sel] * n + cc[sel]] = cv[sel]
            M[ci[sel], cc[sel] * n + cr[sel]] = cv[sel]
            self.AA.append(M)
            # rows touching this block; None marks all of them (the Schur
            # assembly then skips the submatrix scatter)
            touched = np.unique(ci[sel])
            self.rows_b.append(None if touched.shape[0] == k else touched)
        self.Cb = prob.dense_C()
        self.b = prob.b[rows]
        self.F = prob.F[rows]
        self.c_free = prob.c_free
        self.k = k
        self.n_total = sum(prob.blocks)

    def apply(self, Xb):
        """A(X): length-k vector."""
        out = np.zeros(self.k)
        for AA, X in zip(self.AA, Xb):
            out += AA @ X.reshape(-1)
        return out

    def adjoint(self, y):
        """A*(y): list of symmetric blocks."""
        out = []
        for AA, n in zip(self.AA, self.blocks):
            out.append((y @ AA).reshape(n, n))
        return out


def _min_eig_step(Xb, dXb):
    """Largest alpha with X + alpha dX >= 0, via lambda_min(L^-1 dX L^-T)."""
    alpha = np.inf
    for X, dX in zip(Xb, dXb):
        base = max(np.trace(X) / X.shape[0], 1e-300)
        L = None
        for fac in (0.0, 1e-14, 1e-11, 1e-8, 1e-5):
            try:
                L = np.linalg.cholesky(X + fac * base * np.eye(X.shape[0]))
                break
            except np.linalg.LinAlgError:
                continue
        if L is None:
            return 0.0
        Y = scipy.linalg.solve_triangular(L, dX, lower=True)
        W = scipy.linalg.solve_triangular(L, Y.T, lower=True)
        lam = scipy.linalg.eigvalsh(0.5 * (W + W.T))[0]
        if lam < -1e-14:
            alpha = min(alpha, -1.0 / lam)
    return alpha


def _inner(Ab, Bb):
    return float(sum(np.vdot(A, B) for A, B in zip(Ab, Bb)))


def _presolve(ws, b_full, tol=PRESOLVE_TOL):
    """Rank-revealing row selection on [svec(A_i) | F_i]. Returns kept row
    indices (into ws.rows), or ('infeasible', y_cert) when a dependent row
    has an inconsistent right-hand side."""
    k = ws.k
    cols = [AA for AA in ws.AA] + ([ws.F] if ws.F.shape[1] else [])
    R = np.hstack(cols) if cols else np.zeros((k, 0))
    # scale-free rank detection on rows
    Q, Rq, piv = scipy.linalg.qr(R.T, mode="economic", pivoting=True)
    diag = np.abs(np.diag(Rq))
    if diag.size == 0 or diag[0] == 0.0:
        rank = 0
    else:
        rank = int(np.sum(diag > tol * diag[0]))
    kept = np.sort(piv[:rank])
    dropped = np.sort(piv[rank:])
    if dropped.size:
        K = R[kept]
        D = R[dropped]
        coeff, *_ = np.linalg.lstsq(K.T, D.T, rcond=None)
        b_pred = coeff.T @ ws.b[kept]
        bad = np.abs(b_pred - ws.b[dropped]) > 1e-8 * (1 + np.abs(ws.b).max())
        if np.any(bad):
            j = int(np.nonzero(bad)[0][0])
            y = np.zeros(b_full.shape[0])
            y[np.asarray(ws.rows)[kept]] = -coeff[:, j]
            y[np.asarray(ws.rows)[dropped[j]]] = 1.0
            if float(b_full @ y) < 0:
                y = -y
            return "infeasible", y
    return kept, None


def _farkas_search(ws, max_steps=3000):
    """Certificate search for strongly infeasible problems.

    Projects b onto {A(X) + F xf : X >= 0} by accelerated projected
    gradient on X (xf is eliminated through the orthoprojector onto
    range(F)-perp).  At the projection optimum the residual
    r = P(b - A(Xbar)) satisfies -adj(r) >= 0, F'r = 0 and
    b'r = ||r||^2, so a positive distance hands over a Farkas ray.
    Returns y with b'y = 1 scaled from that residual, or None when the
    projection reaches b (feasible) or the ray fails the certificate
    tolerance.
    """
    if ws.k == 0 or not ws.blocks:
        return None
    nf = ws.F.shape[1]
    if nf:
        Q = np.linalg.qr(ws.F)[0]

        def proj(v):
            return v - Q @ (Q.T @ v)
    else:
        def proj(v):
            return v
    pb = proj(ws.b)
    bnorm = float(np.linalg.norm(pb))
    if bnorm <= 1e-14 * (1.0 + np.abs(ws.b).max(initial=0.0)):
        return None

    # step size from a power-iteration bound on X -> A*(P(A(X)))
    rng = np.random.default_rng(0)
    V = [0.5 * (M + M.T) for M in
         (np.eye(n) + 0.01 * rng.standard_normal((n, n)) for n in ws.blocks)]
    lam = 1.0
    for _ in range(80):
        nv = math.sqrt(max(_inner(V, V), 1e-300))
        V = [Vb / nv for Vb in V]
        V = ws.adjoint(proj(ws.apply(V)))
        lam = math.sqrt(max(_inner(V, V), 1e-300))
    step = 1.0 / (1.2 * lam)

    def residual(Xb):
        return proj(ws.b - ws.apply(Xb))

    def verdict(Xb):
        r = residual(Xb)
        if float(np.linalg.norm(r)) <= 1e-10 * (1.0 + bnorm):
            return "feasible", None, 0.0
        br = float(ws.b @ r)
        if br <= 0.0:
            return None, None, -math.inf
        yhat = r / br
        Zb = [-Z for Z in ws.adjoint(yhat)]
        zmax = max((np.abs(Z).max(initial=0.0) for Z in Zb), default=0.0)
        if zmax <= 0.0:
            return None, None, -math.inf
        lam_min = min((scipy.linalg.eigvalsh(Z)[0] for Z in Zb
                       if Z.shape[0]), default=0.0)
        fres = np.abs(ws.F.T @ yhat).max(initial=0.0) if nf else 0.0
        score = lam_min / max(1.0, zmax)
        if lam_min >= -CERT_TOL * max(1.0, zmax) and fres <= CERT_TOL:
            return "certified", yhat, score
        return None, None, score

    Xb = [np.zeros((n, n)) for n in ws.blocks]
    Yb = [X.copy() for X in Xb]
    t = 1.0
    f_prev = 0.5 * bnorm * bnorm
    best_score = -math.inf
    flat = 0
    for k in range(max_steps):
        G = ws.adjoint(residual(Yb))
        Xn = []
        for Y, Gb in zip(Yb, G):
            w, U = np.linalg.eigh(Y + step * Gb)
            Xn.append((U * np.maximum(w, 0.0)) @ U.T)
        r = residual(Xn)
        f = 0.5 * float(r @ r)
        if f > f_prev:
            # momentum restart; FISTA is not monotone
            t = 1.0
            Yb = [X.copy() for X in Xb]
            rr = residual(Xb)
            f_prev = 0.5 * float(rr @ rr)
            continue
        tn = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
        beta = (t - 1.0) / tn
        Yb = [Xn_b + beta * (Xn_b - X_b) for Xn_b, X_b in zip(Xn, Xb)]
        Xb, t, f_prev = Xn, tn, f
        if (k + 1) % 50 == 0:
            status, yhat, score = verdict(Xb)
            if status == "certified":
                return yhat
            if status == "feasible":
                return None
            if score <= best_score + 1e-9:
                flat += 1
                if flat >= 8:
                    return None
            else:
                best_score = max(best_score, score)
                flat = 0
    return None


def solve_sdp(problem, max_iters=50, tol_gap=1e-8, tol_feas=1e-9,
              raise_on_limit=False, verbose=False, callback=None):
    """Solve the SDP and return an SdpSolution.

    status is one of "optimal", "primal-infeasible", "dual-infeasible",
    "iteration-limit". With raise_on_limit, the last case raises
    IterationLimit carrying the best iterate instead of returning it.
    callback, if given, is invoked once per iteration with a dict of
    residuals, objective values, and copies of the iterate (keys "X", "S",
    "y", "x_free").
    """
    k_full = problem.num_constraints
    rows = np.arange(k_full)
    ws = _Workspace(problem, rows)

    # structurally empty rows never enter the Schur complement
    ci = problem.con[0]
    has_entry = np.zeros(k_full, dtype=bool)
    has_entry[ci] = True
    if problem.num_free:
        has_entry |= np.abs(problem.F).max(axis=1) > 0.0
    if not np.all(has_entry):
        empty = np.nonzero(~has_entry)[0]
        bad = np.abs(problem.b[empty]) > 1e-12 * (1 + np.abs(problem.b).max())
        if np.any(bad):
            j = empty[np.nonzero(bad)[0][0]]
            y = np.zeros(k_full)
            y[j] = 1.0 if problem.b[j] > 0 else -1.0
            blocks0 = [np.zeros((n, n)) for n in problem.blocks]
            return SdpSolution(blocks0, y, blocks0, math.inf,
                               "primal-infeasible")
        rows = np.nonzero(has_entry)[0]
        ws = _Workspace(problem, rows)

    nf = problem.num_free
    n_tot = ws.n_total
    if nf and np.linalg.matrix_rank(problem.F) < nf:
        raise IllPosed("free-variable columns are linearly dependent; "
                       "eliminate redundant free variables first")

    # Redundant constraint rows make the KKT system exactly singular (any
    # w with adj(w) = 0, F'w = 0 is a null vector), so detect and drop them
    # up front rather than waiting for a factorization to fail.
    kept, cert = _presolve(ws, problem.b)
    if cert is not None:
        blocks0 = [np.zeros((n, n)) for n in problem.blocks]
        return SdpSolution(blocks0, cert, blocks0, math.inf,
                           "primal-infeasible", np.zeros(nf),
                           math.nan, math.nan, 0)
    rows_full, ws_full = rows, ws
    if len(kept) < ws.k:
        rows = np.asarray(ws.rows)[kept]
        ws = _Workspace(problem, rows)
    dropped = ws.k < ws_full.k

    def fresh_start(ws):
        normA = max((np.abs(AA).max(initial=0.0) for AA in ws.AA), default=0.0)
        normC = max((np.abs(C).max(initial=0.0) for C in ws.Cb), default=0.0)
        sx = max(1.0, np.abs(ws.b).max(initial=0.0) / max(normA, 1.0))
        ss = max(1.0, normC, normA)
        Xb = [sx * np.eye(n) for n in ws.blocks]
        Sb = [ss * np.eye(n) for n in ws.blocks]
        return Xb, Sb, np.zeros(ws.k), np.zeros(nf)

    Xb, Sb, y, xf = fresh_start(ws)
    best = None
    it = 0
    restarted = False
    stalls = 0
    no_gain = 0

    def measure(Xb, Sb, y, xf, W=None):
        W = ws if W is None else W
        r_p = W.b - W.apply(Xb) - W.F @ xf
        Ady = W.adjoint(y)
        R_d = [C - S - Ay for C, S, Ay in zip(W.Cb, Sb, Ady)]
        r_f = W.c_free - W.F.T @ y
        gap = _inner(Xb, Sb)
        pobj = _inner(W.Cb, Xb) + float(W.c_free @ xf)
        dobj = float(W.b @ y)
        sb = 1.0 + np.abs(W.b).max(initial=0.0)
        sc = 1.0 + max((np.abs(C).max(initial=0.0) for C in W.Cb), default=0.0)
        abs_p = np.abs(r_p).max(initial=0.0)
        p_res = abs_p / sb
        d_res = max((np.abs(R).max(initial=0.0) for R in R_d), default=0.0) / sc
        f_res = np.abs(r_f).max(initial=0.0) / sc if nf else 0.0
        return dict(r_p=r_p, R_d=R_d, r_f=r_f, gap=gap, pobj=pobj, dobj=dobj,
                    abs_p=abs_p, p_res=p_res, d_res=d_res, f_res=f_res)

    def res_score(mzr):
        return max(mzr["p_res"], mzr["d_res"], mzr["f_res"]) \
            + mzr["gap"] / (1.0 + abs(mzr["pobj"]))

    def snapshot(mzr, status):
        y_full = np.zeros(k_full)
        y_full[rows] = y
        return SdpSolution([X.copy() for X in Xb], y_full,
                           [S.copy() for S in Sb], mzr["gap"], status,
                           xf.copy(), mzr["pobj"], mzr["dobj"], it)

    def acceptable(mzr):
        p_ok = mzr["abs_p"] <= 1e-7 or mzr["p_res"] <= tol_feas
        d_ok = mzr["d_res"] <= max(1e-7, tol_feas)
        f_ok = mzr["f_res"] <= max(1e-7, tol_feas)
        g_ok = mzr["gap"] <= max(1e-7, tol_gap) * (1.0 + abs(mzr["pobj"]))
        return p_ok and d_ok and f_ok and g_ok

    while it < max_iters:
        it += 1
        if nf:
            # x_free has no barrier term; its exact role is to absorb the
            # range(F) component of the primal residual
            xf = np.linalg.lstsq(ws.F, ws.b - ws.apply(Xb), rcond=None)[0]
        mzr = measure(Xb, Sb, y, xf)
        r_p, R_d, r_f = mzr["r_p"], mzr["R_d"], mzr["r_f"]
        gap, pobj, dobj = mzr["gap"], mzr["pobj"], mzr["dobj"]
        p_res, d_res, f_res = mzr["p_res"], mzr["d_res"], mzr["f_res"]
        mu = gap / n_tot
        sb = 1.0 + np.abs(ws.b).max(initial=0.0)

        if verbose:
            print(f"  it {it:2d} mu {mu:9.2e} gap {gap:9.2e} "
                  f"pres {p_res:8.1e} dres {d_res:8.1e} pobj {pobj:+.6e}")
        if callback is not None:
            info = {k: mzr[k] for k in
                    ("gap", "pobj", "dobj", "abs_p", "p_res", "d_res",
                     "f_res")}
            info["X"] = [X.copy() for X in Xb]
            info["S"] = [S.copy() for S in Sb]
            y_cb = np.zeros(k_full)
            y_cb[rows] = y
            info["y"] = y_cb
            info["x_free"] = xf.copy()
            callback(info)

        if (p_res <= tol_feas and d_res <= tol_feas and f_res <= tol_feas
                and gap <= tol_gap * (1.0 + abs(pobj))):
            if best is None or res_score(mzr) < best[0]:
                best = (res_score(mzr), snapshot(mzr, "optimal"), mzr)
            break

        # Farkas certificate probes
        by = float(ws.b @ y)
        if by > 1e-10 * sb:
            yhat = y / by
            Zb = [-Z for Z in ws.adjoint(yhat)]
            zmax = max((np.abs(Z).max(initial=0.0) for Z in Zb), default=0.0)
            lam_min = min((scipy.linalg.eigvalsh(Z)[0] for Z in Zb
                           if Z.shape[0]), default=0.0)
            fres = np.abs(ws.F.T @ yhat).max(initial=0.0) if nf else 0.0
            if lam_min >= -CERT_TOL * max(1.0, zmax) and fres <= CERT_TOL \
                    and zmax > 0.0 and (mu < 1e-8 or np.abs(y).max() > 1e7):
                y_full = np.zeros(k_full)
                y_full[rows] = yhat
                blocks0 = [np.zeros((n, n)) for n in ws.blocks]
                return SdpSolution(blocks0, y_full, Zb, math.inf,
                                   "primal-infeasible", np.zeros(nf),
                                   math.nan, math.nan, it)
        obj_ray = _inner(ws.Cb, Xb) + float(ws.c_free @ xf)
        if obj_ray < 0:
            nrm = math.sqrt(_inner(Xb, Xb)) + np.linalg.norm(xf)
            if nrm > 1e5:
                Xh = [X / nrm for X in Xb]
                xfh = xf / nrm
                ray_res = np.abs(ws.apply(Xh) + ws.F @ xfh).max(initial=0.0)
                if ray_res <= CERT_TOL and obj_ray / nrm < -CERT_TOL * 1e-3:
                    y_full = np.zeros(k_full)
                    y_full[rows] = y
                    return SdpSolution(Xh, y_full, Sb, math.inf,
                                       "dual-infeasible", xfh,
                                       math.nan, math.nan, it)

        # track the best iterate for limit reporting
        score = res_score(mzr)
        if best is None or score < best[0]:
            best = (score, snapshot(mzr, "iteration-limit"), mzr)
            no_gain = 0
        else:
            no_gain += 1
            if no_gain >= 3:
                # numerics have bottomed out; keep the best iterate
                break

        Sinv = []
        ok = True
        for S in Sb:
            try:
                L = np.linalg.cholesky(S)
            except np.linalg.LinAlgError:
                ok = False
                break
            Si = scipy.linalg.cho_solve((L, True), np.eye(S.shape[0]))
            Sinv.append(0.5 * (Si + Si.T))
        if not ok:
            break
        # Schur complement M_ij = <A_i, X A_j S^-1>; each block contributes
        # only on the rows that reference it, so restrict the GEMM to those
        M = np.zeros((ws.k, ws.k))
        for AA, X, Si, n, rb in zip(ws.AA, Xb, Sinv, ws.blocks, ws.rows_b):
            sub = AA if rb is None else AA[rb]
            kb = sub.shape[0]
            if kb == 0:
                continue
            Akl = sub.reshape(kb, n, n)
            T = np.matmul(np.matmul(X[None, :, :], Akl), Si[None, :, :])
            Mb = sub @ T.reshape(kb, n * n).T
            if rb is None:
                M += Mb
            else:
                M[np.ix_(rb, rb)] += Mb
        M = 0.5 * (M + M.T)

        lu = None
        if nf:
            # bordered symmetric-indefinite KKT, factored once per iteration
            K = np.zeros((ws.k + nf, ws.k + nf))
            K[:ws.k, :ws.k] = M
            K[:ws.k, ws.k:] = ws.F
            K[ws.k:, :ws.k] = ws.F.T
            # Prefer factoring K itself; the refinement passes in
            # schur_solve recover what partial pivoting loses.  The
            # regularized fallbacks (needed when M alone is rank-deficient)
            # must shift each diagonal block by a multiple of its OWN
            # scale: the free block's natural magnitude is that of the
            # Schur complement F'M^-1F, which shrinks as |M| grows near
            # convergence, so a shift proportional to |M| would swamp the
            # free-variable equations exactly when accuracy matters most.
            scale_m = max(1.0, np.abs(M).max())
            scale_f = max(np.abs(ws.F).max() ** 2 / scale_m, 1e-30)
            v_probe = np.ones(ws.k + nf)
            probe = K @ v_probe
            for rel in (0.0, 1e-12, 1e-9, 1e-6):
                K_try = K
                if rel:
                    K_try = K.copy()
                    K_try[:ws.k, :ws.k] += rel * scale_m * np.eye(ws.k)
                    K_try[ws.k:, ws.k:] -= rel * scale_f * np.eye(nf)
                try:
                    with warnings.catch_warnings():
                        # a singular rung is an expected probe outcome
                        warnings.simplefilter(
                            "ignore", scipy.linalg.LinAlgWarning)
                        fac = scipy.linalg.lu_factor(K_try)
                except scipy.linalg.LinAlgError:
                    continue
                if not np.all(np.isfinite(fac[0])):
                    continue
                sol_p = scipy.linalg.lu_solve(fac, probe)
                for _ in range(2):
                    if not np.all(np.isfinite(sol_p)):
                        break
                    sol_p = sol_p + scipy.linalg.lu_solve(
                        fac, probe - K @ sol_p)
                if not np.all(np.isfinite(sol_p)):
                    continue
                if np.abs(sol_p).max() > 1e6:
                    continue
                res = np.abs(probe - K @ sol_p).max()
                if res <= 1e-9 * (1.0 + np.abs(probe).max() + scale_m):
                    lu = fac
                    break

        def schur_solve(h, rf):
            # [[M, F], [F', 0]] [dy, dv] = [h, rf]; one refinement pass
            # claws back digits lost to the Schur complement's conditioning
            if nf:
                if lu is None:
                    return None
                rhs = np.concatenate([h, rf])
                sol = scipy.linalg.lu_solve(lu, rhs)
                for _ in range(2):
                    if not np.all(np.isfinite(sol)):
                        return None
                    sol = sol + scipy.linalg.lu_solve(lu, rhs - K @ sol)
                if not np.all(np.isfinite(sol)):
                    return None
                return sol[:ws.k], sol[ws.k:]
            try:
                cho = scipy.linalg.cho_factor(
                    M + 1e-14 * max(1.0, np.trace(M) / ws.k) * np.eye(ws.k),
                    lower=True)
                solve = lambda v: scipy.linalg.cho_solve(cho, v)
            except scipy.linalg.LinAlgError:
                try:
                    lu_m = scipy.linalg.lu_factor(M)
                except scipy.linalg.LinAlgError:
                    return None
                solve = lambda v: scipy.linalg.lu_solve(lu_m, v)
            dy = solve(h)
            for _ in range(2):
                if not np.all(np.isfinite(dy)):
                    return None
                dy = dy + solve(h - M @ dy)
            if not np.all(np.isfinite(dy)):
                return None
            return dy, np.zeros(0)

        def direction(Rc):
            GS = [(Rc_b - X @ Rd_b) @ Si
                  for Rc_b, X, Rd_b, Si in zip(Rc, Xb, R_d, Sinv)]
            h = r_p - ws.apply([0.5 * (G + G.T) for G in GS])
            out = schur_solve(h, r_f)
            if out is None:
                return None
            dy, dv = out
            dS = [Rd_b - Ady_b for Rd_b, Ady_b in zip(R_d, ws.adjoint(dy))]
            dX = []
            for Rc_b, X, dS_b, Si in zip(Rc, Xb, dS, Sinv):
                V = (Rc_b - X @ dS_b) @ Si
                dX.append(0.5 * (V + V.T))
            return dX, dS, dy, dv

        Rc_aff = [-X @ S for X, S in zip(Xb, Sb)]
        got = direction(Rc_aff)
        if got is None:
            if restarted:
                break
            restarted = True
            Xb, Sb, y, xf = fresh_start(ws)
            continue
        dXa, dSa, dya, dva = got

        ap = min(1.0, 0.99 * _min_eig_step(Xb, dXa))
        ad = min(1.0, 0.99 * _min_eig_step(Sb, dSa))
        mu_aff = _inner([X + ap * dX for X, dX in zip(Xb, dXa)],
                        [S + ad * dS for S, dS in zip(Sb, dSa)]) / n_tot
        sigma = min(1.0, max(0.0, mu_aff / mu) ** 3)

        Rc = [sigma * mu * np.eye(n) - X @ S - dX @ dS
              for n, X, S, dX, dS in zip(ws.blocks, Xb, Sb, dXa, dSa)]
        got = direction(Rc)
        if got is None:
            break
        dX, dS, dy, dv = got

        gamma = 0.98 if mu > 1e-7 else 0.99
        ap = min(1.0, gamma * _min_eig_step(Xb, dX))
        ad = min(1.0, gamma * _min_eig_step(Sb, dS))
        if min(ap, ad) < 1e-4:
            stalls += 1
            if stalls >= 4:
                break
        else:
            stalls = 0
        Xb = [X + ap * dX_b for X, dX_b in zip(Xb, dX)]
        Sb = [S + ad * dS_b for S, dS_b in zip(Sb, dS)]
        y = y + ad * dy
        xf = xf + ad * dv

    if nf:
        xf = np.linalg.lstsq(ws.F, ws.b - ws.apply(Xb), rcond=None)[0]
    mzr = measure(Xb, Sb, y, xf)
    if best is None or res_score(mzr) < best[0]:
        best = (res_score(mzr), snapshot(mzr, "iteration-limit"), mzr)
    sol = best[1]

    # Final acceptance is judged on the FULL row set. The loop's kept-row
    # view only steers the iteration: a row presolve dropped as dependent
    # reconstructs with its dependency coefficients amplifying the kept
    # rows' residual, so it must be measured (and polished) directly.
    mzr_full = measure(sol.X, sol.S, sol.y[rows_full], sol.x_free, ws_full)
    if ws_full.k and (dropped or not acceptable(mzr_full)):
        # The iteration's floor on |A(X)-b| scales like eps/mu; projecting
        # the primal iterate back onto the affine set removes it.  Two
        # refinements: the gap <X,S> is linear in the correction, so a soft
        # <S, dX> = 0 row keeps it small, and components of the residual
        # along ill-conditioned row directions are left alone (a correction
        # there is amplified by 1/sigma and wrecks cone feasibility), by
        # trying several SVD truncation cuts and keeping the best score.
        s_row = np.concatenate([S.ravel() for S in sol.S] + [np.zeros(nf)])
        R = np.vstack([np.hstack(list(ws_full.AA) + [ws_full.F]), s_row])
        U, sv, Vt = np.linalg.svd(R, full_matrices=False)
        r = ws_full.b - ws_full.apply(sol.X) - ws_full.F @ sol.x_free
        Ur = U.T @ np.concatenate([r, [0.0]])
        sv_top = sv[0] if sv.size and sv[0] > 0.0 else 1.0
        for cut in (1e-1, 1e-2, 1e-3, 1e-5, 1e-9):
            keepd = sv >= cut * sv_top
            if not np.any(keepd):
                continue
            delta = Vt[keepd].T @ (Ur[keepd] / sv[keepd])
            Xp = []
            off = 0
            for bi, n in enumerate(ws_full.blocks):
                D = delta[off:off + n * n].reshape(n, n)
                off += n * n
                Xn = sol.X[bi] + 0.5 * (D + D.T)
                w, V = np.linalg.eigh(Xn)
                if w.size and w[0] < 0.0:
                    Xn = (V * np.maximum(w, 0.0)) @ V.T
                Xp.append(Xn)
            xfp = sol.x_free + delta[off:]
            if nf:
                xfp = np.linalg.lstsq(
                    ws_full.F, ws_full.b - ws_full.apply(Xp), rcond=None)[0]
            mzr_p = measure(Xp, sol.S, sol.y[rows_full], xfp, ws_full)
            if res_score(mzr_p) < res_score(mzr_full):
                sol = SdpSolution(Xp, sol.y.copy(),
                                  [S.copy() for S in sol.S], mzr_p["gap"],
                                  sol.status, xfp,
                                  mzr_p["pobj"], mzr_p["dobj"],
                                  sol.iterations)
                mzr_full = mzr_p
    sol.status = "optimal" if acceptable(mzr_full) else "iteration-limit"
    sol.duality_gap = mzr_full["gap"]
    sol.primal_objective = mzr_full["pobj"]
    sol.dual_objective = mzr_full["dobj"]
    if sol.status == "optimal":
        return sol
    # A stalled iteration whose primal residual floors at a positive value
    # is the signature of strong infeasibility (the central path cannot
    # exist), but the in-loop probes only fire once y itself diverges.
    # Settle it directly with a cone projection.
    cert = _farkas_search(ws_full)
    if cert is not None:
        Zb = [-Z for Z in ws_full.adjoint(cert)]
        y_full = np.zeros(k_full)
        y_full[rows_full] = cert
        blocks0 = [np.zeros((n, n)) for n in ws_full.blocks]
        return SdpSolution(blocks0, y_full, Zb, math.inf,
                           "primal-infeasible", np.zeros(nf),
                           math.nan, math.nan, it)
    if raise_on_limit:
        raise IterationLimit("no convergence within the iteration budget",
                             solution=sol)
    return sol
