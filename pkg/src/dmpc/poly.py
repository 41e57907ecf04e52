"""Sparse multivariate polynomial arithmetic.

Polynomials are stored as a map from exponent tuples to real coefficients.
Terms whose coefficient falls below PRUNE_TOL in absolute value are dropped
after arithmetic so floating cancellation does not blow up the term count.
The canonical term order is graded-lexicographic: ascending total degree,
and within one degree descending lexicographic comparison of the exponent
tuple (x1 before x2).

Polynomials are immutable after construction; all operations return new
objects and are safe to share across workers.
"""

import json

import numpy as np

from . import kernels

PRUNE_TOL = 1e-14

Monomial = tuple  # exponent tuple, one non-negative int per variable


def grlex_key(exponents):
    """Sort key realizing the graded-lexicographic order."""
    return (sum(exponents), tuple(-e for e in exponents))


class DimensionMismatch(ValueError):
    pass


class Polynomial:
    __slots__ = ("nvars", "terms", "_block")

    def __init__(self, nvars, terms=None):
        if nvars < 1:
            raise ValueError("nvars must be >= 1")
        clean = {}
        for exp, coef in (terms or {}).items():
            exp = tuple(int(e) for e in exp)
            if len(exp) != nvars:
                raise DimensionMismatch(
                    f"exponent tuple {exp} has length {len(exp)}, expected {nvars}")
            if any(e < 0 for e in exp):
                raise ValueError(f"negative exponent in {exp}")
            c = float(coef)
            if abs(c) > PRUNE_TOL:
                clean[exp] = clean.get(exp, 0.0) + c
        clean = {e: c for e, c in clean.items() if abs(c) > PRUNE_TOL}
        object.__setattr__(self, "nvars", int(nvars))
        object.__setattr__(self, "terms", clean)
        object.__setattr__(self, "_block", None)

    def __setattr__(self, name, value):
        raise AttributeError("Polynomial is immutable")

    # -- constructors -------------------------------------------------

    @staticmethod
    def zero(nvars):
        return Polynomial(nvars, {})

    @staticmethod
    def constant(nvars, c):
        return Polynomial(nvars, {(0,) * nvars: c})

    @staticmethod
    def variable(nvars, i):
        exp = [0] * nvars
        exp[i] = 1
        return Polynomial(nvars, {tuple(exp): 1.0})

    @staticmethod
    def monomial(nvars, exponents, coef=1.0):
        return Polynomial(nvars, {tuple(exponents): coef})

    @staticmethod
    def from_quadratic_form(P):
        """x^T P x as a polynomial; P is a square array."""
        P = np.asarray(P, dtype=float)
        n = P.shape[0]
        terms = {}
        for i in range(n):
            for j in range(n):
                if P[i, j] == 0.0:
                    continue
                exp = [0] * n
                exp[i] += 1
                exp[j] += 1
                exp = tuple(exp)
                terms[exp] = terms.get(exp, 0.0) + P[i, j]
        return Polynomial(n, terms)

    # -- basic queries -------------------------------------------------

    def degree(self):
        if not self.terms:
            return 0
        return max(sum(e) for e in self.terms)

    def is_zero(self):
        return not self.terms

    def sorted_terms(self):
        return sorted(self.terms.items(), key=lambda kv: grlex_key(kv[0]))

    def coefficient(self, exponents):
        return self.terms.get(tuple(exponents), 0.0)

    def support(self):
        return set(self.terms)

    def __eq__(self, other):
        return (isinstance(other, Polynomial) and self.nvars == other.nvars
                and self.terms == other.terms)

    def __hash__(self):
        return hash((self.nvars, frozenset(self.terms.items())))

    def __repr__(self):
        if not self.terms:
            return "Polynomial(0)"
        bits = []
        for exp, c in self.sorted_terms()[:8]:
            mono = "*".join(f"x{i + 1}^{e}" if e > 1 else f"x{i + 1}"
                            for i, e in enumerate(exp) if e)
            bits.append(f"{c:+.6g}" + (f"*{mono}" if mono else ""))
        tail = " + ..." if len(self.terms) > 8 else ""
        return f"Polynomial({' '.join(bits)}{tail})"

    # -- arithmetic ----------------------------------------------------

    def _check(self, other):
        if self.nvars != other.nvars:
            raise DimensionMismatch(
                f"nvars mismatch: {self.nvars} vs {other.nvars}")

    def __add__(self, other):
        if isinstance(other, (int, float)):
            other = Polynomial.constant(self.nvars, other)
        self._check(other)
        terms = dict(self.terms)
        for exp, c in other.terms.items():
            terms[exp] = terms.get(exp, 0.0) + c
        return Polynomial(self.nvars, terms)

    __radd__ = __add__

    def __neg__(self):
        return Polynomial(self.nvars, {e: -c for e, c in self.terms.items()})

    def __sub__(self, other):
        if isinstance(other, (int, float)):
            other = Polynomial.constant(self.nvars, other)
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            if other == 0.0:
                return Polynomial.zero(self.nvars)
            return Polynomial(
                self.nvars, {e: c * other for e, c in self.terms.items()})
        self._check(other)
        terms = {}
        for e1, c1 in self.terms.items():
            for e2, c2 in other.terms.items():
                exp = tuple(a + b for a, b in zip(e1, e2))
                terms[exp] = terms.get(exp, 0.0) + c1 * c2
        return Polynomial(self.nvars, terms)

    __rmul__ = __mul__

    def __pow__(self, k):
        if k < 0 or k != int(k):
            raise ValueError("only non-negative integer powers")
        out = Polynomial.constant(self.nvars, 1.0)
        for _ in range(int(k)):
            out = out * self
        return out

    def gradient(self):
        """Tuple of partial derivatives, one Polynomial per variable."""
        grads = []
        for i in range(self.nvars):
            terms = {}
            for exp, c in self.terms.items():
                if exp[i] == 0:
                    continue
                de = list(exp)
                de[i] -= 1
                terms[tuple(de)] = c * exp[i]
            grads.append(Polynomial(self.nvars, terms))
        return tuple(grads)

    def substitute(self, assignments):
        """Partially evaluate: assignments maps variable index -> value."""
        terms = {}
        for exp, c in self.terms.items():
            factor = 1.0
            new = list(exp)
            for i, v in assignments.items():
                factor *= v ** exp[i]
                new[i] = 0
            exp2 = tuple(new)
            terms[exp2] = terms.get(exp2, 0.0) + c * factor
        return Polynomial(self.nvars, terms)

    # -- evaluation ----------------------------------------------------

    def _compiled(self):
        blk = self._block
        if blk is None:
            if self.terms:
                items = self.sorted_terms()
                E = np.array([e for e, _ in items], dtype=np.int64)
                C = np.array([[c for _, c in items]], dtype=float)
            else:
                E = np.zeros((1, self.nvars), dtype=np.int64)
                C = np.zeros((1, 1))
            blk = (np.ascontiguousarray(E), np.ascontiguousarray(C))
            object.__setattr__(self, "_block", blk)
        return blk

    def __call__(self, x):
        return self.evaluate(x)

    def evaluate(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape != (self.nvars,):
            raise DimensionMismatch(
                f"point has shape {x.shape}, expected ({self.nvars},)")
        E, C = self._compiled()
        out = np.empty(1)
        kernels.eval_point(np.ascontiguousarray(x), E, C, out)
        return float(out[0])

    def evaluate_many(self, X):
        X = np.ascontiguousarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.nvars:
            raise DimensionMismatch(
                f"batch has shape {X.shape}, expected (N, {self.nvars})")
        E, C = self._compiled()
        out = np.empty((X.shape[0], 1))
        kernels.eval_batch(X, E, C, out)
        return out[:, 0]

    # -- serialization -------------------------------------------------

    def to_dict(self):
        return {
            "nvars": self.nvars,
            "terms": [{"exp": list(e), "coef": c} for e, c in self.sorted_terms()],
        }

    @staticmethod
    def from_dict(d):
        return Polynomial(
            d["nvars"], {tuple(t["exp"]): t["coef"] for t in d["terms"]})

    def to_json(self):
        return json.dumps(self.to_dict())

    @staticmethod
    def from_json(s):
        return Polynomial.from_dict(json.loads(s))


def coeff_distance_sq(p, q):
    """Squared Euclidean norm of the coefficient vector of p - q."""
    if p.nvars != q.nvars:
        raise DimensionMismatch(f"nvars mismatch: {p.nvars} vs {q.nvars}")
    total = 0.0
    for exp in p.support() | q.support():
        d = p.terms.get(exp, 0.0) - q.terms.get(exp, 0.0)
        total += d * d
    return total


def algebra(p, q, op):
    """Dispatch-style arithmetic entry point: add/subtract/multiply/scale."""
    if op == "add":
        return p + q
    if op == "subtract":
        return p - q
    if op == "multiply":
        return p * q
    if op == "scale":
        return p * float(q)
    raise ValueError(f"unknown op {op!r}")


class PolyBlock:
    """Several polynomials over one shared exponent matrix, for fast
    simultaneous evaluation through the compiled kernels."""

    __slots__ = ("nvars", "size", "E", "C")

    def __init__(self, polys):
        polys = list(polys)
        if not polys:
            raise ValueError("empty block")
        nvars = polys[0].nvars
        for p in polys:
            if p.nvars != nvars:
                raise DimensionMismatch("mixed nvars in block")
        monos = sorted(set().union(*(p.support() for p in polys)),
                       key=grlex_key)
        if not monos:
            monos = [(0,) * nvars]
        index = {m: i for i, m in enumerate(monos)}
        E = np.array(monos, dtype=np.int64)
        C = np.zeros((len(polys), len(monos)))
        for r, p in enumerate(polys):
            for exp, c in p.terms.items():
                C[r, index[exp]] = c
        self.nvars = nvars
        self.size = len(polys)
        self.E = np.ascontiguousarray(E)
        self.C = np.ascontiguousarray(C)

    def eval(self, x):
        x = np.ascontiguousarray(x, dtype=float)
        out = np.empty(self.size)
        kernels.eval_point(x, self.E, self.C, out)
        return out

    def eval_many(self, X):
        X = np.ascontiguousarray(X, dtype=float)
        out = np.empty((X.shape[0], self.size))
        kernels.eval_batch(X, self.E, self.C, out)
        return out
