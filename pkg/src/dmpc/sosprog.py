"""Convex SOS programming on top of the SDP solver.

Models polynomials whose coefficients are affine in scalar decision
variables (SymPoly), SOS membership constraints (one Gram block plus
exact coefficient-matching rows each), matrix-SOS constraints through
the scalarization y' M(x) y, and squared coefficient-distance objectives
through 2x2 epigraph blocks [[t, d], [d, 1]] with cost on t.

The matrix-SOS path exists for constraints of the form
A(x) - w(x)'w(x) in Sigma with w affine in the decision variables:
by the Schur complement this is equivalent to [[A, w'], [w, I]] being
an SOS matrix, which is affine in the decisions, while the scalar form
is not.
"""

import itertools
import math

import numpy as np

from .poly import Polynomial, grlex_key
from .sdp import SdpProblem, solve_sdp
from .sos import GramCertificate, StructuralInfeasibility, newton_reduce


class LinExpr:
    """Affine expression const + sum_v coef_v * xi_v over program
    variables."""

    __slots__ = ("terms", "const")

    def __init__(self, terms=None, const=0.0):
        self.terms = dict(terms) if terms else {}
        self.const = float(const)

    @staticmethod
    def variable(v):
        return LinExpr({v: 1.0})

    @staticmethod
    def constant(c):
        return LinExpr(None, c)

    def is_zero(self):
        return self.const == 0.0 and not self.terms

    def scaled(self, c):
        if c == 0.0:
            return LinExpr()
        return LinExpr({v: c * w for v, w in self.terms.items()},
                       c * self.const)

    def __add__(self, other):
        if not isinstance(other, LinExpr):
            return LinExpr(self.terms, self.const + float(other))
        out = dict(self.terms)
        for v, w in other.terms.items():
            out[v] = out.get(v, 0.0) + w
        return LinExpr({v: w for v, w in out.items() if w != 0.0},
                       self.const + other.const)

    def __sub__(self, other):
        if not isinstance(other, LinExpr):
            return LinExpr(self.terms, self.const - float(other))
        return self + other.scaled(-1.0)

    def __neg__(self):
        return self.scaled(-1.0)

    def value(self, xi):
        return self.const + math.fsum(c * xi[v] for v, c in self.terms.items())


def _as_linexpr(x):
    if isinstance(x, LinExpr):
        return x
    return LinExpr.constant(float(x))


class SymPoly:
    """Polynomial with LinExpr coefficients: sum_e coef_e(xi) x^e."""

    __slots__ = ("nvars", "terms")

    def __init__(self, nvars, terms=None):
        self.nvars = int(nvars)
        self.terms = {}
        if terms:
            for e, le in terms.items():
                le = _as_linexpr(le)
                if not le.is_zero():
                    self.terms[tuple(int(k) for k in e)] = le

    @staticmethod
    def from_poly(p):
        return SymPoly(p.nvars, {e: LinExpr.constant(c)
                                 for e, c in p.terms.items()})

    def _coerce(self, other):
        if isinstance(other, SymPoly):
            return other
        if isinstance(other, Polynomial):
            return SymPoly.from_poly(other)
        return SymPoly(self.nvars,
                       {(0,) * self.nvars: LinExpr.constant(float(other))})

    def __add__(self, other):
        other = self._coerce(other)
        if other.nvars != self.nvars:
            raise ValueError("variable count mismatch")
        out = dict(self.terms)
        for e, le in other.terms.items():
            out[e] = out[e] + le if e in out else le
        return SymPoly(self.nvars, out)

    def __radd__(self, other):
        return self.__add__(other)

    def __sub__(self, other):
        return self + self._coerce(other).scaled(-1.0)

    def __rsub__(self, other):
        return self._coerce(other) + self.scaled(-1.0)

    def __neg__(self):
        return self.scaled(-1.0)

    def scaled(self, c):
        return SymPoly(self.nvars,
                       {e: le.scaled(float(c)) for e, le in self.terms.items()})

    def mul_poly(self, p):
        """Product with a fixed Polynomial (stays affine in xi)."""
        if isinstance(p, SymPoly):
            raise TypeError("product of two symbolic polynomials is not "
                            "affine; fix one side first")
        if p.nvars != self.nvars:
            raise ValueError("variable count mismatch")
        out = {}
        for ep, c in p.terms.items():
            for es, le in self.terms.items():
                e = tuple(a + b for a, b in zip(ep, es))
                contrib = le.scaled(c)
                out[e] = out[e] + contrib if e in out else contrib
        return SymPoly(self.nvars, out)

    def diff(self, i):
        out = {}
        for e, le in self.terms.items():
            if e[i] == 0:
                continue
            e2 = tuple(v - 1 if j == i else v for j, v in enumerate(e))
            contrib = le.scaled(float(e[i]))
            out[e2] = out[e2] + contrib if e2 in out else contrib
        return SymPoly(self.nvars, out)

    def zero_vars(self, idx):
        """Substitute x_i = 0 for every i in idx (drops terms)."""
        idx = set(idx)
        return SymPoly(self.nvars,
                       {e: le for e, le in self.terms.items()
                        if all(e[i] == 0 for i in idx)})

    def extend_vars(self, extra, y_exp=None):
        """Embed into nvars + extra variables, optionally multiplying by
        the monomial with exponents y_exp on the new tail variables."""
        tail = tuple(y_exp) if y_exp is not None else (0,) * extra
        return SymPoly(self.nvars + extra,
                       {e + tail: le for e, le in self.terms.items()})

    def support(self):
        return set(self.terms)

    def degree(self):
        return max((sum(e) for e in self.terms), default=0)

    def support_poly(self):
        """Indicator polynomial of the structural support."""
        return Polynomial(self.nvars, {e: 1.0 for e in self.terms})

    def value(self, xi):
        return Polynomial(self.nvars,
                          {e: le.value(xi) for e, le in self.terms.items()})

    def free_vars(self):
        out = set()
        for le in self.terms.values():
            out.update(le.terms)
        return out


class SosBlock:
    """Handle to one PSD block of the assembled SDP."""

    __slots__ = ("name", "index", "basis", "nvars", "kind")

    def __init__(self, name, index, basis, nvars, kind):
        self.name = name
        self.index = index
        self.basis = tuple(basis)
        self.nvars = nvars
        self.kind = kind  # "sos" | "matrix-sos" | "epigraph"


class SosProgram:
    """Accumulates variables, SOS blocks, equality rows, and squared
    coefficient-distance objective terms; assembles one SdpProblem."""

    def __init__(self):
        self.num_vars = 0
        self.var_names = []
        self.blocks = []        # SosBlock, creation order
        self.block_dims = []
        self.rows = []          # (triplets [(blk,i,j,v)], {var: coef}, rhs)
        self.cost = []          # cost triplets (blk, i, j, v)
        self.l2_terms = []      # (weight, [LinExpr d_alpha])

    # -- variables -----------------------------------------------------

    def new_var(self, name=None):
        v = self.num_vars
        self.num_vars += 1
        self.var_names.append(name or f"xi{v}")
        return v

    def new_poly(self, nvars, monomials, name="p"):
        terms = {}
        for e in monomials:
            e = tuple(int(k) for k in e)
            v = self.new_var(f"{name}[{','.join(map(str, e))}]")
            terms[e] = LinExpr.variable(v)
        return SymPoly(nvars, terms)

    # -- constraints ---------------------------------------------------

    def add_eq(self, expr, rhs=0.0):
        le = _as_linexpr(expr)
        self.rows.append(([], dict(le.terms), float(rhs) - le.const))

    def add_sos(self, sp, basis=None, name=None):
        """sp(x) = z(x)' Q z(x) with Q a fresh PSD block."""
        if isinstance(sp, Polynomial):
            sp = SymPoly.from_poly(sp)
        if basis is None:
            from .sos import monomial_basis
            full = monomial_basis(sp.nvars, (sp.degree() + 1) // 2)
            basis = newton_reduce(sp.support_poly(), full)
        basis = [tuple(int(k) for k in e) for e in basis]
        name = name or f"sos{len(self.blocks)}"
        if not basis:
            raise StructuralInfeasibility(f"{name}: empty Gram basis")
        bi = len(self.block_dims)
        self.block_dims.append(len(basis))
        block = SosBlock(name, bi, basis, sp.nvars, "sos")
        self.blocks.append(block)

        prods = {}
        for i, e1 in enumerate(basis):
            for j in range(i + 1):
                a = tuple(x + y for x, y in zip(e1, basis[j]))
                prods.setdefault(a, []).append((i, j))
        extra = [e for e in sp.terms if e not in prods]
        for a in sorted(prods, key=grlex_key):
            le = sp.terms.get(a, LinExpr())
            trip = [(bi, i, j, 1.0) for i, j in prods[a]]
            self.rows.append(
                (trip, {v: -c for v, c in le.terms.items()}, le.const))
        # support outside the pair products: no Gram entry can match it,
        # so its coefficient is pinned to zero
        for a in sorted(extra, key=grlex_key):
            le = sp.terms[a]
            if not le.terms:
                raise StructuralInfeasibility(
                    f"{name}: monomial {a} has fixed coefficient "
                    f"{le.const} outside every basis pair product")
            self.rows.append(([], {v: -c for v, c in le.terms.items()},
                              le.const))
        return block

    def add_matrix_sos(self, M, bases, name=None):
        """y' M(x) y in Sigma[x, y] with Gram basis {y_i z_i(x)}.

        M: symmetric list-of-lists of SymPoly/Polynomial entries over the
        x variables; bases[i] lists the x-monomials paired with y_i.
        """
        m = len(M)
        name = name or f"msos{len(self.blocks)}"
        nv = None
        for i in range(m):
            for j in range(m):
                entry = M[i][j]
                if isinstance(entry, (SymPoly, Polynomial)):
                    nv = entry.nvars
        if nv is None:
            raise ValueError(f"{name}: no polynomial entries")
        ext = SymPoly(nv + m, {})
        for i in range(m):
            for j in range(i + 1):
                entry = M[i][j]
                if isinstance(entry, Polynomial):
                    entry = SymPoly.from_poly(entry)
                elif not isinstance(entry, SymPoly):
                    entry = SymPoly(
                        nv, {(0,) * nv: LinExpr.constant(float(entry))})
                y_exp = [0] * m
                y_exp[i] += 1
                y_exp[j] += 1
                scale = 1.0 if i == j else 2.0
                ext = ext + entry.scaled(scale).extend_vars(m, y_exp)
        basis = []
        for i, bz in enumerate(bases):
            y_exp = [0] * m
            y_exp[i] = 1
            for e in bz:
                basis.append(tuple(int(k) for k in e) + tuple(y_exp))
        block = self.add_sos(ext, basis=basis, name=name)
        block.kind = "matrix-sos"
        return block

    # -- objective -----------------------------------------------------

    def add_coeff_l2(self, sp, weight):
        """weight * sum_alpha coeff_alpha(sp)^2 via one 2x2 epigraph
        block [[t, d], [d, 1]] per coefficient, cost weight on t."""
        if isinstance(sp, Polynomial):
            sp = SymPoly.from_poly(sp)
        weight = float(weight)
        if weight < 0.0:
            raise ValueError("weight must be non-negative")
        if weight == 0.0 or not sp.terms:
            return
        ds = []
        for a in sorted(sp.terms, key=grlex_key):
            le = sp.terms[a]
            bi = len(self.block_dims)
            self.block_dims.append(2)
            self.blocks.append(
                SosBlock(f"l2[{len(self.l2_terms)}]({','.join(map(str, a))})",
                         bi, ((0,), (1,)), 1, "epigraph"))
            # X01 = d_alpha(xi); X11 = 1; cost on X00
            self.rows.append(([(bi, 1, 0, 0.5)],
                              {v: -c for v, c in le.terms.items()}, le.const))
            self.rows.append(([(bi, 1, 1, 1.0)], {}, 1.0))
            self.cost.append((bi, 0, 0, weight))
            ds.append(le)
        self.l2_terms.append((weight, ds))

    # -- assembly and solve --------------------------------------------

    def assemble(self, trace_weight=0.0):
        if not self.block_dims:
            raise ValueError("program has no blocks")
        used = set()
        for _, fent, _ in self.rows:
            used.update(fent)
        missing = [self.var_names[v] for v in range(self.num_vars)
                   if v not in used]
        if missing:
            raise ValueError("variables never constrained: "
                             + ", ".join(missing[:5]))
        cost = list(self.cost)
        if trace_weight:
            for blk in self.blocks:
                if blk.kind != "epigraph":
                    n = self.block_dims[blk.index]
                    cost.extend((blk.index, i, i, float(trace_weight))
                                for i in range(n))
        k = len(self.rows)
        con = []
        b = np.zeros(k)
        F = np.zeros((k, self.num_vars))
        for r, (trip, fent, rhs) in enumerate(self.rows):
            for bi, i, j, v in trip:
                con.append((r, bi, i, j, v))
            for v, c in fent.items():
                F[r, v] = c
            b[r] = rhs
        return SdpProblem.from_triplets(
            self.block_dims, cost, con, b,
            F=F if self.num_vars else None,
            c_free=np.zeros(self.num_vars) if self.num_vars else None)

    def solve(self, trace_weight=0.0, **sdp_opts):
        prob = self.assemble(trace_weight)
        sol = solve_sdp(prob, **sdp_opts)
        return SosSolution(self, sol)


class SosSolution:
    """Extraction wrapper: decision-variable values, realized
    polynomials, Gram certificates, and the exact l2 objective."""

    def __init__(self, prog, sdp_solution):
        self.prog = prog
        self.sdp = sdp_solution
        self.status = sdp_solution.status
        self.xi = np.asarray(sdp_solution.x_free, dtype=float) \
            if prog.num_vars else np.zeros(0)

    @property
    def feasible(self):
        return self.status == "optimal"

    def value(self, expr):
        if isinstance(expr, LinExpr):
            return expr.value(self.xi)
        if isinstance(expr, SymPoly):
            return expr.value(self.xi)
        raise TypeError("expected LinExpr or SymPoly")

    def gram(self, block):
        Q = self.sdp.X[block.index]
        return GramCertificate(block.basis, np.asarray(Q, dtype=float))

    def objective(self):
        """Exact sum of weighted squared coefficient distances."""
        total = 0.0
        for weight, ds in self.prog.l2_terms:
            total += weight * math.fsum(le.value(self.xi) ** 2 for le in ds)
        return total
