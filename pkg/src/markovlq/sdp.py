"""Self-contained feasibility solver for affine LMIs with matrix variables.

A problem is a list of symmetric block constraints, each an affine function of
named matrix/scalar variables, to be made >= epsilon * I simultaneously.  The
solver runs a primal barrier path-following scheme on the slack-maximization
form

    maximize t   s.t.   F_b(x) - t I >= 0 for all b,   ||x|| < ball_radius,

minimizing  -nu*t - sum_b logdet(F_b(x) - tI) - log(rho^2 - |x|^2)  by damped
Newton for an increasing sequence of nu.  It stops as soon as an interior
point reaches the requested slack, so well-posed feasibility questions exit
early; "infeasible-within-budget" is an exhausted search, not a certificate
of infeasibility, and is labeled as such everywhere.

The Hessian is assembled per matrix-variable block through small Kronecker
products (the constraint blocks are low-dimensional even when the stacked
constraint is large), which keeps the cost polynomial in the number of
variables rather than in the constraint size squared.

The problem container is solver-agnostic: it only describes block structure,
so an external SDP solver could consume the same object.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la

from .errors import DomainError

__all__ = ["Variable", "Constraint", "AffineLmiProblem", "FeasibilityResult", "solve_feasibility"]

FEASIBLE = "feasible"
INFEASIBLE = "infeasible-within-budget"
FAILURE = "numerical-failure"


@dataclass
class Variable:
    """A named unknown: symmetric (packed upper triangle), rectangular, or scalar."""

    name: str
    rows: int
    cols: int
    kind: str  # "sym" | "rect" | "scalar"
    offset: int = 0

    def __post_init__(self):
        if self.kind not in ("sym", "rect", "scalar"):
            raise DomainError(f"unknown variable kind {self.kind!r}")
        if self.kind == "sym" and self.rows != self.cols:
            raise DomainError("symmetric variables must be square")
        if self.kind == "scalar" and (self.rows, self.cols) != (1, 1):
            raise DomainError("scalar variables have shape (1, 1)")

    @property
    def size(self) -> int:
        if self.kind == "sym":
            return self.rows * (self.rows + 1) // 2
        return self.rows * self.cols

    def unpack(self, v: np.ndarray) -> np.ndarray:
        if self.kind == "scalar":
            return np.asarray([[v[0]]])
        if self.kind == "rect":
            return v.reshape(self.rows, self.cols)
        x = np.zeros((self.rows, self.rows))
        iu = np.triu_indices(self.rows)
        x[iu] = v
        x.T[iu] = v
        return x

    def pack(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.kind == "scalar":
            return np.asarray([float(x.reshape(()))]) if x.size == 1 else np.asarray([float(x)])
        if self.kind == "rect":
            return x.reshape(-1).copy()
        return x[np.triu_indices(self.rows)].copy()

    def basis_matrix(self) -> np.ndarray:
        """D with vec_r(X) = D @ packed(X); chain-rule adapter for sym packing."""
        r, c = self.rows, self.cols
        if self.kind in ("rect", "scalar"):
            return np.eye(r * c)
        d = np.zeros((r * r, self.size))
        k = 0
        for i in range(r):
            for j in range(i, r):
                d[i * r + j, k] = 1.0
                d[j * r + i, k] = 1.0
                k += 1
        return d

    def transpose_perm(self) -> np.ndarray:
        """Index array mapping vec_r(X) -> vec_r(X^T)."""
        r, c = self.rows, self.cols
        idx = np.arange(r * c).reshape(r, c)
        return idx.T.reshape(-1)


@dataclass
class _MatTerm:
    row: int
    col: int
    var: int
    left: np.ndarray
    right: np.ndarray
    coeff: float
    transpose: bool


@dataclass
class _ScalarTerm:
    row: int
    col: int
    var: int
    cmat: np.ndarray
    coeff: float


@dataclass
class _ConstTerm:
    row: int
    col: int
    cmat: np.ndarray


class Constraint:
    """One symmetric block F_b(x); assembled from explicitly placed blocks.

    `add_*` helpers place a block at (row, col); with mirror=True (the default
    for off-diagonal use) the transposed block is placed at (col, row) too, so
    assemblers state each upper-triangle block once.  add_mat at a diagonal
    position with mirror=True produces M + M^T, which is exactly the
    U + U^T pattern the design LMIs need.
    """

    def __init__(self, size: int, label: str = ""):
        self.size = int(size)
        self.label = label
        self.mat_terms: list[_MatTerm] = []
        self.scalar_terms: list[_ScalarTerm] = []
        self.const_terms: list[_ConstTerm] = []

    def add_const(self, row: int, col: int, cmat, mirror: bool = None):
        cmat = np.atleast_2d(np.asarray(cmat, dtype=float))
        if mirror is None:
            mirror = row != col
        self.const_terms.append(_ConstTerm(row, col, cmat))
        if mirror:
            self.const_terms.append(_ConstTerm(col, row, cmat.T))
        elif row == col and np.abs(cmat - cmat.T).max() > 1e-12 * max(1.0, np.abs(cmat).max()):
            raise DomainError("unmirrored diagonal constant block must be symmetric")

    def add_mat(self, row, col, var_index, rows_cols, left=None, right=None, coeff=1.0, transpose=False, mirror=True):
        vr, vc = rows_cols
        a, b = (vc, vr) if transpose else (vr, vc)
        left = np.eye(a) if left is None else np.atleast_2d(np.asarray(left, dtype=float))
        right = np.eye(b) if right is None else np.atleast_2d(np.asarray(right, dtype=float))
        if left.shape[1] != a or right.shape[0] != b:
            raise DomainError("term coefficient shapes do not match the variable")
        self.mat_terms.append(_MatTerm(row, col, var_index, left, right, float(coeff), transpose))
        if mirror:
            self.mat_terms.append(_MatTerm(col, row, var_index, right.T, left.T, float(coeff), not transpose))

    def add_scalar(self, row, col, var_index, cmat, coeff=1.0, mirror=None):
        cmat = np.atleast_2d(np.asarray(cmat, dtype=float))
        if mirror is None:
            mirror = row != col
        self.scalar_terms.append(_ScalarTerm(row, col, var_index, cmat, float(coeff)))
        if mirror:
            self.scalar_terms.append(_ScalarTerm(col, row, var_index, cmat.T, float(coeff)))
        elif row == col and np.abs(cmat - cmat.T).max() > 1e-12 * max(1.0, np.abs(cmat).max()):
            raise DomainError("unmirrored diagonal scalar block must be symmetric")


class AffineLmiProblem:
    """Named variables plus symmetric affine block constraints F_b(x) >= eps*I."""

    def __init__(self, epsilon: float = 1e-6):
        if epsilon <= 0:
            raise DomainError("strictness margin epsilon must be positive")
        self.epsilon = float(epsilon)
        self.variables: list[Variable] = []
        self._var_index: dict[str, int] = {}
        self.constraints: list[Constraint] = []
        self.meta: dict = {}

    # -- construction ------------------------------------------------------
    def add_variable(self, name: str, rows: int, cols: int, kind: str) -> int:
        if name in self._var_index:
            raise DomainError(f"duplicate variable name {name!r}")
        var = Variable(name, rows, cols, kind)
        idx = len(self.variables)
        self.variables.append(var)
        self._var_index[name] = idx
        return idx

    def var(self, name: str) -> Variable:
        return self.variables[self._var_index[name]]

    def add_constraint(self, size: int, label: str = "") -> Constraint:
        con = Constraint(size, label)
        self.constraints.append(con)
        return con

    def finalize(self) -> None:
        off = 0
        for v in self.variables:
            v.offset = off
            off += v.size
        self._nparams = off

    @property
    def n_params(self) -> int:
        return self._nparams

    @property
    def homogeneous(self) -> bool:
        return all(not c.const_terms for c in self.constraints)

    # -- evaluation --------------------------------------------------------
    def pack(self, assignment: dict) -> np.ndarray:
        x = np.zeros(self.n_params)
        for v in self.variables:
            x[v.offset : v.offset + v.size] = v.pack(np.asarray(assignment[v.name], dtype=float))
        return x

    def unpack(self, x: np.ndarray) -> dict:
        out = {}
        for v in self.variables:
            val = v.unpack(x[v.offset : v.offset + v.size])
            out[v.name] = float(val[0, 0]) if v.kind == "scalar" else val
        return out

    def evaluate(self, b: int, x: np.ndarray) -> np.ndarray:
        con = self.constraints[b]
        f = np.zeros((con.size, con.size))
        for t in con.const_terms:
            h, w = t.cmat.shape
            f[t.row : t.row + h, t.col : t.col + w] += t.cmat
        for t in con.mat_terms:
            v = self.variables[t.var]
            xm = v.unpack(x[v.offset : v.offset + v.size])
            m = t.coeff * (t.left @ (xm.T if t.transpose else xm) @ t.right)
            h, w = m.shape
            f[t.row : t.row + h, t.col : t.col + w] += m
        for t in con.scalar_terms:
            v = self.variables[t.var]
            m = t.coeff * x[v.offset] * t.cmat
            h, w = m.shape
            f[t.row : t.row + h, t.col : t.col + w] += m
        return f

    def evaluate_all(self, x: np.ndarray) -> list:
        return [self.evaluate(b, x) for b in range(len(self.constraints))]

    def recheck_margin(self, assignment_or_x) -> float:
        """Independent eigensolver margin: min over constraints of lambda_min(F_b)."""
        x = assignment_or_x if isinstance(assignment_or_x, np.ndarray) else self.pack(assignment_or_x)
        return min(float(np.linalg.eigvalsh(0.5 * (f + f.T)).min()) for f in self.evaluate_all(x))

    def describe(self) -> dict:
        return {
            "epsilon": self.epsilon,
            "homogeneous": self.homogeneous,
            "variables": [
                {"name": v.name, "rows": v.rows, "cols": v.cols, "kind": v.kind} for v in self.variables
            ],
            "constraints": [
                {
                    "label": c.label,
                    "size": c.size,
                    "matrix_terms": len(c.mat_terms),
                    "scalar_terms": len(c.scalar_terms),
                    "constant_terms": len(c.const_terms),
                }
                for c in self.constraints
            ],
            "meta": {k: v for k, v in self.meta.items() if isinstance(v, (str, int, float, bool))},
        }


@dataclass
class FeasibilityResult:
    """Outcome of a feasibility solve, with independently rechecked margin."""

    status: str
    assignment: dict
    margin: float
    iterations: int
    wallclock: float
    best_slack: float
    message: str = ""
    problem: AffineLmiProblem = field(default=None, repr=False)


# -- barrier machinery ------------------------------------------------------


def _bilin(p, q, op1, op2, inv_perm2):
    """Matrix H with vec_r(dX)^T H vec_r(dY) = tr(P op1(dX) Q op2(dY)).

    Derived from tr(A^T X B Y^T) = vec_r(X)^T kron(A, B) vec_r(Y); transposes
    on dX/dY are absorbed through the inverse transpose permutation of Y.
    """
    if not op1 and op2:
        return np.kron(p.T, q)
    if op1 and not op2:
        return np.kron(q, p.T)
    if not op1 and not op2:
        return np.kron(p.T, q)[:, inv_perm2]
    return np.kron(q, p.T)[:, inv_perm2]


def _is_identity(m: np.ndarray) -> bool:
    return m.shape[0] == m.shape[1] and np.array_equal(m, np.eye(m.shape[0]))


class _ConstraintPlan:
    """Per-constraint term split: a batchable family plus a general remainder.

    The family holds identity-coefficient placements of same-sized symmetric
    variables (the diagonal R/S blocks that dominate large problems); their
    pairwise Hessian blocks are computed with one vectorized gather/kron pass
    instead of a Python loop.
    """

    def __init__(self, con: Constraint, variables):
        grp, gen_mat = [], []
        dims = [variables[t.var].rows for t in con.mat_terms
                if variables[t.var].kind == "sym" and not t.transpose and _is_identity(t.left) and _is_identity(t.right)]
        self.gdim = max(set(dims), key=dims.count) if dims else 0
        for t in con.mat_terms:
            v = variables[t.var]
            if (
                v.kind == "sym"
                and not t.transpose
                and v.rows == self.gdim
                and _is_identity(t.left)
                and _is_identity(t.right)
            ):
                grp.append(t)
            else:
                gen_mat.append(t)
        grp.sort(key=lambda t: variables[t.var].offset)
        self.grp = grp
        self.gen = gen_mat + list(con.scalar_terms)
        self.g_rows = np.asarray([t.row for t in grp], dtype=int)
        self.g_cols = np.asarray([t.col for t in grp], dtype=int)
        self.g_coeffs = np.asarray([t.coeff for t in grp])
        self.g_offs = np.asarray([variables[t.var].offset for t in grp], dtype=int)
        # var segmentation for duplicate placements of the same variable
        self.seg_starts = []
        self.seg_offsets = []
        for i, t in enumerate(grp):
            off = variables[t.var].offset
            if not self.seg_offsets or self.seg_offsets[-1] != off:
                self.seg_starts.append(i)
                self.seg_offsets.append(off)
        self.seg_starts = np.asarray(self.seg_starts, dtype=int)
        self.seg_offsets = np.asarray(self.seg_offsets, dtype=int)
        ps = self.gdim * (self.gdim + 1) // 2 if self.gdim else 0
        self.fast_scatter = ps > 0 and np.array_equal(
            self.seg_offsets, self.seg_offsets[0] + ps * np.arange(self.seg_offsets.size)
        )


class _Workspace:
    """Precomputed structure for fast gradient/Hessian assembly."""

    def __init__(self, problem: AffineLmiProblem):
        self.problem = problem
        # Symmetric variables make X and X^T indistinguishable after packing,
        # so their transpose flags are normalized away up front.
        for con in problem.constraints:
            for t in con.mat_terms:
                if t.transpose and problem.variables[t.var].kind == "sym":
                    t.transpose = False
        self.d_mats = [v.basis_matrix() for v in problem.variables]
        self.tperm_inv = [np.argsort(v.transpose_perm()) for v in problem.variables]
        self.slices = [slice(v.offset, v.offset + v.size) for v in problem.variables]
        self.plans = [_ConstraintPlan(con, problem.variables) for con in problem.constraints]
        self._dcache = {}
        for v in problem.variables:
            if v.kind == "sym" and v.rows not in self._dcache:
                self._dcache[v.rows] = v.basis_matrix()

    def hess_accumulate(self, b: int, smat: np.ndarray, hess: np.ndarray) -> None:
        """Adds constraint b's block tr(S dF S dF) Hessian into the packed matrix."""
        plan = self.plans[b]
        self._grp_grp(plan, smat, hess)
        for tg in plan.gen:
            self._grp_gen(plan, smat, tg, hess)
        gen = plan.gen
        for i1, t1 in enumerate(gen):
            for t2 in gen[i1:]:
                v1, v2, blk = self.hess_block(smat, t1, t2)
                sl1, sl2 = self.slices[v1], self.slices[v2]
                hess[sl1, sl2] += blk
                if t1 is not t2:
                    hess[sl2, sl1] += blk.T

    def _grp_grp(self, plan, smat, hess):
        tcount = plan.g_rows.size
        if tcount == 0:
            return
        q = plan.gdim
        dmat = self._dcache[q]
        ps = dmat.shape[1]
        ar = np.arange(q)
        # P[x, y, i, j] = S[c_y + i, r_x + j]; Q[x, y] = P[y, x]
        rows_idx = plan.g_rows[:, None, None, None] + ar[None, None, None, :]
        cols_idx = plan.g_cols[None, :, None, None] + ar[None, None, :, None]
        p = smat[cols_idx, rows_idx]
        qm = p.transpose(1, 0, 2, 3)
        blk = np.empty((tcount, tcount, ps, ps))
        pt = p.transpose(0, 1, 3, 2)  # pt[x, y, i, k] = P[x, y, k, i]
        slab = max(1, int(2.5e7 / max(1, tcount * (q**4))))
        for lo in range(0, tcount, slab):
            hi = min(lo + slab, tcount)
            # kron(P^T, Q) by broadcasting: K[(i,j),(k,l)] = P[k,i] Q[j,l]
            k = pt[lo:hi, :, :, None, :, None] * qm[lo:hi, :, None, :, None, :]
            k = k.reshape((hi - lo) * tcount, q * q, q * q)
            blk[lo:hi] = (dmat.T @ (k @ dmat)).reshape(hi - lo, tcount, ps, ps)
        blk *= (plan.g_coeffs[:, None] * plan.g_coeffs[None, :])[:, :, None, None]
        # collapse duplicate placements of the same variable
        if plan.seg_starts.size != tcount:
            blk = np.add.reduceat(blk, plan.seg_starts, axis=0)
            blk = np.add.reduceat(blk, plan.seg_starts, axis=1)
        nv = plan.seg_offsets.size
        if plan.fast_scatter:
            o0 = plan.seg_offsets[0]
            hess[o0 : o0 + nv * ps, o0 : o0 + nv * ps] += blk.transpose(0, 2, 1, 3).reshape(nv * ps, nv * ps)
        else:
            for a in range(nv):
                oa = plan.seg_offsets[a]
                for c in range(nv):
                    oc = plan.seg_offsets[c]
                    hess[oa : oa + ps, oc : oc + ps] += blk[a, c]

    def _grp_gen(self, plan, smat, t2, hess):
        """Cross blocks between every family term and one general term."""
        tcount = plan.g_rows.size
        if tcount == 0:
            return
        q = plan.gdim
        dmat = self._dcache[q]
        ar = np.arange(q)
        if isinstance(t2, _ScalarTerm):
            h2, w2 = t2.cmat.shape
            # m[x] = S[c_x, r_2] C S[c_2, r_1x]  (q x q); gradient-style vector
            s_left = smat[plan.g_cols[:, None, None] + ar[None, :, None], np.arange(t2.row, t2.row + h2)[None, None, :]]
            s_right = smat[t2.col : t2.col + w2, :][:, plan.g_rows[:, None] + ar[None, :]].transpose(1, 0, 2)
            m = np.einsum("xiw,wv,xvj->xij", s_left, t2.cmat, s_right, optimize=True)
            vecs = t2.coeff * plan.g_coeffs[:, None] * (m.transpose(0, 2, 1).reshape(tcount, -1) @ dmat)
            voff2 = self.problem.variables[t2.var].offset
            for x in range(tcount):
                ox = plan.g_offs[x]
                hess[ox : ox + vecs.shape[1], voff2] += vecs[x]
                hess[voff2, ox : ox + vecs.shape[1]] += vecs[x]
            return
        h2, w2 = t2.left.shape[0], t2.right.shape[1]
        # P[x] = R2 @ S[c2, r_x]  (b2 x q); Q[x] = S[c_x, r2] @ L2  (q x a2)
        s_c2r = smat[t2.col : t2.col + w2, :][:, plan.g_rows[:, None] + ar[None, :]]  # (w2, T, q)
        p = (t2.right @ s_c2r.reshape(w2, -1)).reshape(-1, tcount, q).transpose(1, 0, 2)  # (T, b2, q)
        s_cr2 = smat[plan.g_cols[:, None, None] + ar[None, :, None], np.arange(t2.row, t2.row + h2)[None, None, :]]
        qmat = s_cr2 @ t2.left  # (T, q, a2)
        # kron(P^T, Q): K[x, (i,j), (k,l)] = P[x,k,i] Q[x,j,l]
        pt = p.transpose(0, 2, 1)
        k = (pt[:, :, None, :, None] * qmat[:, None, :, None, :]).reshape(tcount, q * q, -1)
        if not t2.transpose:
            k = k[:, :, self.tperm_inv[t2.var]]
        k *= (t2.coeff * plan.g_coeffs)[:, None, None]
        blk = np.matmul(dmat.T, k) @ self.d_mats[t2.var]
        sl2 = self.slices[t2.var]
        ps = dmat.shape[1]
        for x in range(tcount):
            ox = plan.g_offs[x]
            hess[ox : ox + ps, sl2] += blk[x]
            hess[sl2, ox : ox + ps] += blk[x].T

    def grad_like(self, b: int, smat: np.ndarray, out: np.ndarray) -> None:
        """out[p] += <smat, dF_b/dx_p> for all parameters p (smat symmetric)."""
        con = self.problem.constraints[b]
        for t in con.mat_terms:
            v = self.problem.variables[t.var]
            sblk = smat[t.row : t.row + t.left.shape[0], :][:, t.col : t.col + t.right.shape[1]]
            if t.transpose:
                g = t.coeff * (t.right @ sblk.T @ t.left)
            else:
                g = t.coeff * (t.left.T @ sblk @ t.right.T)
            out[self.slices[t.var]] += self.d_mats[t.var].T @ g.reshape(-1)
        for t in con.scalar_terms:
            sblk = smat[t.row : t.row + t.cmat.shape[0], :][:, t.col : t.col + t.cmat.shape[1]]
            out[self.problem.variables[t.var].offset] += t.coeff * float(np.sum(sblk * t.cmat))

    def hess_block(self, smat: np.ndarray, t1, t2):
        """Packed Hessian block for tr(S dF_{t1} S dF_{t2}), ordered term pair."""
        vars_ = self.problem.variables
        if isinstance(t1, _MatTerm) and isinstance(t2, _MatTerm):
            v1, v2 = vars_[t1.var], vars_[t2.var]
            h1, w1 = t1.left.shape[0], t1.right.shape[1]
            h2, w2 = t2.left.shape[0], t2.right.shape[1]
            s_c2r1 = smat[t2.col : t2.col + w2, :][:, t1.row : t1.row + h1]
            s_c1r2 = smat[t1.col : t1.col + w1, :][:, t2.row : t2.row + h2]
            p = t2.right @ s_c2r1 @ t1.left
            q = t1.right @ s_c1r2 @ t2.left
            blk = _bilin(p, q, t1.transpose, t2.transpose, self.tperm_inv[t2.var])
            blk = t1.coeff * t2.coeff * (self.d_mats[t1.var].T @ blk @ self.d_mats[t2.var])
            return t1.var, t2.var, blk
        if isinstance(t1, _ScalarTerm) and isinstance(t2, _ScalarTerm):
            s_c2r1 = smat[t2.col : t2.col + t2.cmat.shape[1], :][:, t1.row : t1.row + t1.cmat.shape[0]]
            s_c1r2 = smat[t1.col : t1.col + t1.cmat.shape[1], :][:, t2.row : t2.row + t2.cmat.shape[0]]
            val = t1.coeff * t2.coeff * float(np.trace(s_c2r1 @ t1.cmat @ s_c1r2 @ t2.cmat))
            return t1.var, t2.var, np.asarray([[val]])
        if isinstance(t1, _ScalarTerm):
            var, vec = self._cross(smat, t2, t1)
            return t2.var, t1.var, vec.reshape(-1, 1)
        var, vec = self._cross(smat, t1, t2)
        return t1.var, t2.var, vec.reshape(-1, 1)

    def _cross(self, smat, tm: _MatTerm, ts: _ScalarTerm):
        """Vector v with v . vec(dX) = tr(S dF_tm(dX) S dF_ts(1))."""
        h1, w1 = tm.left.shape[0], tm.right.shape[1]
        s_c2r1 = smat[ts.col : ts.col + ts.cmat.shape[1], :][:, tm.row : tm.row + h1]
        s_c1r2 = smat[tm.col : tm.col + w1, :][:, ts.row : ts.row + ts.cmat.shape[0]]
        m = tm.right @ s_c1r2 @ ts.cmat @ s_c2r1 @ tm.left
        grad = m if tm.transpose else m.T
        vec = tm.coeff * ts.coeff * (self.d_mats[tm.var].T @ grad.reshape(-1))
        return tm.var, vec


def _psd_slack(f: np.ndarray) -> float:
    return float(np.linalg.eigvalsh(0.5 * (f + f.T)).min())


def _chol_inverse(c: np.ndarray, low: bool) -> np.ndarray:
    """Full symmetric inverse from a Cholesky factor via LAPACK potri."""
    inv, info = la.lapack.dpotri(c, lower=1 if low else 0)
    if info != 0:
        raise la.LinAlgError(f"dpotri failed with info={info}")
    tri = np.tril(inv) if low else np.triu(inv)
    return tri + tri.T - np.diag(np.diag(tri))


def solve_feasibility(
    problem: AffineLmiProblem,
    budget: int = 400,
    target: float = None,
    ball_radius: float = 1e3,
    nu0: float = None,
    nu_factor: float = 10.0,
    nu_max: float = 1e12,
    verbose: bool = False,
) -> FeasibilityResult:
    """Search for x with every F_b(x) >= epsilon*I (strictness from the problem).

    Returns status "feasible" only when the independent eigensolver recheck
    confirms margin >= 0.9 * epsilon; an exhausted search returns
    "infeasible-within-budget", which is explicitly not an infeasibility
    certificate; breakdowns return "numerical-failure".
    """
    t_start = time.perf_counter()
    problem.finalize()
    ws = _Workspace(problem)
    n = problem.n_params
    eps = problem.epsilon
    t_target = float(target) if target is not None else 1.05 * eps
    rho2 = float(ball_radius) ** 2

    x = np.zeros(n)
    f0 = problem.evaluate_all(x)
    slack0 = min(_psd_slack(f) for f in f0)
    t = slack0 - max(1.0, 0.25 * abs(slack0))
    iters = 0
    best_t = t
    best_x = x.copy()
    total_dim = float(sum(c.size for c in problem.constraints))
    # Quadratic ridge on x: homogeneous families are scale-invariant, so the
    # log-det pull would otherwise run the iterates into the ball boundary.
    # The ridge pins the scale well inside it and floors the Hessian spectrum;
    # positive slack found at the pinned scale is rescaled afterwards.
    ridge = 100.0 * total_dim / rho2

    def finish(status, message, xcur, tcur):
        margin = problem.recheck_margin(xcur)
        assignment = problem.unpack(xcur)
        if status == FEASIBLE and margin < 0.9 * eps:
            status, message = FAILURE, f"recheck margin {margin:.3e} below 0.9*epsilon"
        return FeasibilityResult(
            status=status,
            assignment=assignment,
            margin=margin,
            iterations=iters,
            wallclock=time.perf_counter() - t_start,
            best_slack=tcur,
            message=message,
            problem=problem,
        )

    def feasible_interior(xc, tc):
        if np.dot(xc, xc) >= rho2:
            return None
        mats = []
        for b in range(len(problem.constraints)):
            w = problem.evaluate(b, xc)
            w = 0.5 * (w + w.T) - tc * np.eye(w.shape[0])
            try:
                c, low = la.cho_factor(w, check_finite=False)
            except la.LinAlgError:
                return None
            mats.append((w, c, low))
        return mats

    def potential(xc, tc, nu, mats):
        val = -nu * tc - np.log(rho2 - np.dot(xc, xc)) + ridge * np.dot(xc, xc)
        for w, c, low in mats:
            val -= 2.0 * np.sum(np.log(np.diag(c)))
        return val

    mats = feasible_interior(x, t)
    if mats is None:
        return finish(FAILURE, "could not construct a strictly interior starting point", x, t)

    # With nu equal to the total constraint dimension, the first analytic
    # center keeps the slack eigenvalues O(1) instead of digging a deep hole.
    nu = float(nu0) if nu0 is not None else float(sum(c.size for c in problem.constraints))
    stall = 0
    neg_stall = 0
    prev_level_t = t
    level_ts = []
    while True:
        # -- Newton centering at this nu ------------------------------------
        level_best = t
        level_idle = 0
        level_converged = False
        for _ in range(25):
            if iters >= budget:
                if best_t >= t_target:
                    return finish(FEASIBLE, "slack target reached", best_x, best_t)
                res = _try_homogeneous_rescale(problem, best_x, best_t, t_target)
                if res is not None:
                    return finish(FEASIBLE, "homogeneous rescale", res, t_target)
                return finish(INFEASIBLE, f"iteration budget {budget} exhausted", best_x, best_t)
            grad = np.zeros(n + 1)
            hess = np.zeros((n + 1, n + 1))
            d = rho2 - np.dot(x, x)
            grad[:n] += 2.0 * x / d + 2.0 * ridge * x
            hess[:n, :n] += (2.0 / d + 2.0 * ridge) * np.eye(n) + (4.0 / d**2) * np.outer(x, x)
            grad[n] -= nu
            ok = True
            for b, (w, c, low) in enumerate(mats):
                try:
                    s = _chol_inverse(c, low)
                except la.LinAlgError:
                    ok = False
                    break
                s2 = s @ s
                gb = np.zeros(n)
                ws.grad_like(b, s, gb)
                grad[:n] -= gb
                grad[n] += np.trace(s)
                if not np.all(np.isfinite(s)):
                    ok = False
                    break
                gb2 = np.zeros(n)
                ws.grad_like(b, s2, gb2)
                hess[:n, n] -= gb2
                hess[n, n] += np.trace(s2)
                ws.hess_accumulate(b, s, hess[:n, :n])
            if not ok or not np.all(np.isfinite(grad)) or not np.all(np.isfinite(hess)):
                return finish(FAILURE, "non-finite barrier derivatives", x, t)
            hess[n, :n] = hess[:n, n]
            hess = 0.5 * (hess + hess.T)
            hess[np.diag_indices_from(hess)] += 1e-12 * (1.0 + np.trace(hess) / (n + 1))
            try:
                cf = la.cho_factor(hess, check_finite=False)
                step = la.cho_solve(cf, -grad, check_finite=False)
            except la.LinAlgError:
                return finish(FAILURE, "barrier Hessian factorization broke down", x, t)
            decrement = float(-grad @ step)
            # -- damped line search ----------------------------------------
            cur_pot = potential(x, t, nu, mats)
            alpha = 1.0
            accepted = False
            while alpha > 1e-13:
                xn = x + alpha * step[:n]
                tn = t + alpha * step[n]
                mats_n = feasible_interior(xn, tn)
                if mats_n is not None and potential(xn, tn, nu, mats_n) <= cur_pot - 1e-4 * alpha * max(decrement, 0.0):
                    x, t, mats = xn, tn, mats_n
                    accepted = True
                    break
                alpha *= 0.5
            iters += 1
            if not accepted:
                break
            if t > best_t:
                best_t = t
                best_x = x.copy()
            if verbose:
                print(f"nu={nu:.1e} iter={iters} t={t:.6e} decrement={decrement:.2e}")
            if t >= t_target:
                return finish(FEASIBLE, "slack target reached", x, t)
            if t > 0 and problem.homogeneous:
                # Any strictly interior point of a homogeneous problem scales
                # to the requested slack; no need to push the path further.
                res = _try_homogeneous_rescale(problem, x, t, t_target)
                if res is not None:
                    return finish(FEASIBLE, "homogeneous rescale", res, t_target)
            # Loose centering: path-following only needs approximate centers,
            # and a level that stops improving the slack is done.
            if decrement < 1e-3:
                break
            if t > level_best + 1e-12 * max(1.0, abs(level_best)):
                level_best = t
                level_idle = 0
            else:
                level_idle += 1
                if level_idle >= 4:
                    break
        # -- advance the path --------------------------------------------
        if nu >= nu_max:
            break
        if abs(t - prev_level_t) < 1e-13 * max(1.0, abs(t)):
            stall += 1
            if stall >= 2:
                break
        else:
            stall = 0
        if t < 0 and abs(t - prev_level_t) < 0.1 * abs(t):
            # Slack pinned below zero across nu levels: the supremum is
            # negative, so keep the budget and stop the ladder here.
            neg_stall += 1
            if neg_stall >= 2:
                break
        else:
            neg_stall = 0
        level_ts.append(t)
        if len(level_ts) >= 3 and t < 0:
            # Slack shrinking like -c/nu across levels is the signature of a
            # supremum at exactly zero (only the trivial point of a
            # homogeneous family): no strictly feasible point will appear.
            r1 = level_ts[-1] / level_ts[-2] if level_ts[-2] < 0 else 0.0
            r2 = level_ts[-2] / level_ts[-3] if level_ts[-3] < 0 else 0.0
            goal = 1.0 / nu_factor
            if 0 < r1 < 3.0 * goal and 0 < r2 < 3.0 * goal:
                break
        prev_level_t = t
        nu *= nu_factor

    if best_t >= t_target:
        return finish(FEASIBLE, "slack target reached", best_x, best_t)
    res = _try_homogeneous_rescale(problem, best_x, best_t, t_target)
    if res is not None:
        return finish(FEASIBLE, "homogeneous rescale", res, t_target)
    return finish(INFEASIBLE, f"search exhausted at best slack {best_t:.3e} < target {t_target:.3e}", best_x, best_t)


def _try_homogeneous_rescale(problem: AffineLmiProblem, x: np.ndarray, best_t: float, t_target: float):
    """For homogeneous problems any positive slack scales to the target slack."""
    if not problem.homogeneous or best_t <= 0:
        return None
    scale = 1.2 * t_target / best_t
    xs = x * scale
    if problem.recheck_margin(xs) >= t_target:
        return xs
    return None
