"""Sum-of-squares machinery: Gram transcription of polynomial
nonnegativity into semidefinite feasibility, certificate verification,
and generalized S-procedure assembly.

A polynomial p is certified nonnegative by exhibiting a PSD Gram matrix Q
with p(x) = z(x)' Q z(x) over a monomial basis z. Transcription produces
one equality row per product monomial of the basis; the coefficient
matching is exact sparse assembly, tolerances enter only at verification.
"""

import itertools
import json
import math
from dataclasses import dataclass

import numpy as np

from .poly import Polynomial, grlex_key
from .sdp import SdpProblem, solve_sdp


class StructuralInfeasibility(ValueError):
    """Some monomial of the target cannot be produced by any product of
    two basis monomials, so no Gram matrix exists regardless of sign."""


def monomial_basis(nvars, half_degree):
    """All monomials of degree <= half_degree in graded-lex order."""
    if nvars < 1:
        raise ValueError("nvars must be >= 1")
    if half_degree < 0:
        raise ValueError("half_degree must be >= 0")
    monos = []
    for d in range(half_degree + 1):
        for combo in itertools.combinations_with_replacement(range(nvars), d):
            exp = [0] * nvars
            for i in combo:
                exp[i] += 1
            monos.append(tuple(exp))
    return sorted(monos, key=grlex_key)


def newton_reduce(p, basis):
    """Conservative Newton-polytope filter, box version: a monomial beta
    can appear in a square contributing to p only if 2*beta lies in the
    exponent box and total-degree interval of p's support."""
    if p.is_zero():
        return []
    sup = list(p.support())
    lo = [min(a[i] for a in sup) for i in range(p.nvars)]
    hi = [max(a[i] for a in sup) for i in range(p.nvars)]
    dlo = min(sum(a) for a in sup)
    dhi = max(sum(a) for a in sup)
    out = []
    for b in basis:
        if not dlo <= 2 * sum(b) <= dhi:
            continue
        if all(lo[i] <= 2 * b[i] <= hi[i] for i in range(p.nvars)):
            out.append(tuple(b))
    return out


def _product_index(basis):
    """Map product monomial -> list of unordered index pairs (i >= j)."""
    prods = {}
    for i, bi in enumerate(basis):
        for j in range(i + 1):
            a = tuple(x + y for x, y in zip(bi, basis[j]))
            prods.setdefault(a, []).append((i, j))
    return prods


def gram_transcribe(p, basis):
    """Feasibility SDP whose PSD solutions Q satisfy p = z' Q z.

    One equality row per product monomial alpha of the basis:
    <A_alpha, Q> = coeff_alpha(p), including alpha outside p's support
    (matched to zero). The cost is tr(Q), which normalizes the Gram
    representative and keeps the dual strictly feasible.
    """
    basis = [tuple(int(e) for e in b) for b in basis]
    if not basis:
        raise StructuralInfeasibility("empty basis")
    prods = _product_index(basis)
    unmatched = [a for a in p.support() if a not in prods]
    if unmatched:
        worst = min(unmatched, key=grlex_key)
        raise StructuralInfeasibility(
            f"monomial with exponents {worst} is outside every basis "
            "pair product")
    n = len(basis)
    alphas = sorted(prods, key=grlex_key)
    A_list = [[(0, i, j, 1.0) for i, j in prods[a]] for a in alphas]
    b = [p.terms.get(a, 0.0) for a in alphas]
    C = [(0, i, i, 1.0) for i in range(n)]
    return SdpProblem([n], C, A_list, b)


@dataclass(frozen=True)
class GramCertificate:
    """SOS witness: p = z' Q z with z the monomial column of `basis`."""

    basis: tuple  # of exponent tuples
    Q: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "basis",
                           tuple(tuple(int(e) for e in b)
                                 for b in self.basis))
        Q = np.asarray(self.Q, dtype=float)
        if Q.shape != (len(self.basis), len(self.basis)):
            raise ValueError("Q dimension does not match basis")
        object.__setattr__(self, "Q", Q)

    @property
    def nvars(self):
        return len(self.basis[0])

    def gram_poly(self):
        """z' Q z expanded to a Polynomial (exact sparse assembly)."""
        terms = {}
        for i, bi in enumerate(self.basis):
            for j, bj in enumerate(self.basis):
                a = tuple(x + y for x, y in zip(bi, bj))
                terms[a] = terms.get(a, 0.0) + self.Q[i, j]
        return Polynomial(self.nvars, terms)

    def to_json(self):
        return json.dumps({"basis": [list(b) for b in self.basis],
                           "Q": [float(v) for v in self.Q.ravel()]},
                          sort_keys=True)

    @staticmethod
    def from_json(text):
        d = json.loads(text)
        basis = [tuple(b) for b in d["basis"]]
        n = len(basis)
        return GramCertificate(basis, np.array(d["Q"]).reshape(n, n))


@dataclass(frozen=True)
class GramReport:
    """verify_gram output: certificate valid iff min_eig >= -tol and
    residual <= tol."""

    min_eig: float
    residual: float
    tol: float

    @property
    def valid(self):
        return self.min_eig >= -self.tol and self.residual <= self.tol


def verify_gram(p, cert, tol=1e-6):
    """Independent check of an SOS certificate: min eigenvalue of Q and
    the l-inf coefficient residual of p - z' Q z."""
    Q = 0.5 * (cert.Q + cert.Q.T)
    min_eig = float(np.linalg.eigvalsh(Q).min()) if Q.size else 0.0
    diff = p - cert.gram_poly()
    residual = max((abs(c) for c in diff.terms.values()), default=0.0)
    return GramReport(min_eig=min_eig, residual=residual, tol=tol)


def s_procedure_assemble(p0, pairs):
    """p0 - sum_k s_k * p_k: SOS membership of the result (with SOS s_k)
    certifies that the intersection of {p_k <= 0} lies in {p0 >= 0}."""
    out = p0
    for s_k, p_k in pairs:
        out = out - s_k * p_k
    return out


def prove_sos(p, basis=None, tol=1e-6, reduce_basis=True, max_iters=100):
    """Transcribe, solve, extract, verify. Returns (GramCertificate,
    GramReport) with report.valid True on success, (None, None) when the
    SDP reports infeasibility, and (cert, report) with report.valid False
    when a solution was found but fails verification."""
    if p.is_zero():
        nv = p.nvars
        cert = GramCertificate(((0,) * nv,), np.zeros((1, 1)))
        return cert, verify_gram(p, cert, tol)
    if basis is None:
        basis = monomial_basis(p.nvars, (p.degree() + 1) // 2)
    if reduce_basis:
        basis = newton_reduce(p, basis)
    try:
        prob = gram_transcribe(p, basis)
    except StructuralInfeasibility:
        return None, None
    sol = solve_sdp(prob, max_iters=max_iters)
    if sol.status in ("primal-infeasible", "dual-infeasible"):
        return None, None
    cert = GramCertificate(tuple(basis), sol.X[0])
    return cert, verify_gram(p, cert, tol)
