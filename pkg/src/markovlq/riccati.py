"""Grid-coupled Riccati recursion, optimal gains, and the stability surrogate.

With piecewise-constant matrix functions on the grid, the conditional
expectation of the next-step value matrix is an exact finite sum,

    E(Z)(phi) = sum_j w_j(phi) Z_j,

so the coupled Riccati recursion collapses to N coupled matrix updates at the
box centers.  Iterating from zero the updates are monotone nondecreasing in
the semidefinite order and converge exactly when the loop is stochastically
stabilizable and detectable; divergence is reported, not hidden, because it
is the meaningful diagnostic for a loop that cannot be stabilized.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg as la

from .errors import ConsistencyError, DomainError, NotConvergedError
from .initials import InitialSpec
from .plant import sym

__all__ = [
    "PiecewiseMatrixFunction",
    "RiccatiReport",
    "op_E",
    "riccati_iterate",
    "optimal_cost",
    "recover_original_input",
    "spectral_radius_surrogate",
    "closed_loop_values",
]


@dataclass
class PiecewiseMatrixFunction:
    """One matrix per grid box, looked up by the box containing phi."""

    grid: object
    values: np.ndarray  # (N, rows, cols)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 3 or self.values.shape[0] != self.grid.n_boxes:
            raise DomainError(
                f"need one value per box: expected leading dim {self.grid.n_boxes}, got {self.values.shape}"
            )

    @property
    def shape(self):
        return self.values.shape[1:]

    def lookup(self, phi) -> np.ndarray:
        return self.values[self.grid.locate(phi)]

    def __call__(self, phi) -> np.ndarray:
        return self.lookup(phi)


def op_E(grid, z: PiecewiseMatrixFunction, phi) -> np.ndarray:
    """Conditional next-step average sum_j w_j(phi) Z_j; exact for piecewise-constant Z."""
    w = grid.weights_at(phi)
    return np.einsum("j,jab->ab", w, z.values)


@dataclass
class RiccatiReport:
    """Converged (or explicitly non-converged) output of the coupled recursion."""

    solution: PiecewiseMatrixFunction
    gain: PiecewiseMatrixFunction  # gain in shifted-input coordinates
    iterations: int
    final_delta: float
    converged: bool
    tol: float
    closed_loop_radius: Optional[float] = None
    delta_history_tail: np.ndarray = field(default=None, repr=False)

    @property
    def diverging(self) -> bool:
        """Monotone growth of the update size over the recorded tail."""
        tail = self.delta_history_tail
        if tail is None or tail.size < 3:
            return False
        return bool(np.all(np.diff(tail) > 0))


def riccati_iterate(maps, grid, init: PiecewiseMatrixFunction = None, tol: float = 1e-10, max_iters: int = 100000) -> RiccatiReport:
    """Fixed-point iteration of the coupled Riccati update at the grid centers.

    Uses the cross-term-free data (Abar, B, M, R).  Each sweep evaluates
    E_i = sum_j w_j(c_i) Y_j and

        Y_i <- M_i + Abar_i' (E_i - E_i B_i V_i^{-1} B_i' E_i) Abar_i,
        V_i = R_i + B_i' E_i B_i,

    stopping when the largest spectral-norm update falls below tol.  The gain
    K_i = -V_i^{-1} B_i' E(S)(c_i) Abar_i applies to the shifted input; use
    recover_original_input for the physical one.
    """
    n_boxes = grid.n_boxes
    abar = np.stack([maps.abar_of(grid.centers[i]) for i in range(n_boxes)])
    bmat = np.stack([maps.b_of(grid.centers[i]) for i in range(n_boxes)])
    mwt = np.stack([maps.m_of(grid.centers[i]) for i in range(n_boxes)])
    rmat = np.stack([maps.r_of(grid.centers[i]) for i in range(n_boxes)])
    table = grid.weight_table
    q = abar.shape[1]

    if init is None:
        y = np.zeros((n_boxes, q, q))
    else:
        y = np.array(init.values, dtype=float)
        if y.shape != (n_boxes, q, q):
            raise DomainError(f"init has shape {y.shape}, expected {(n_boxes, q, q)}")
        mins = [np.linalg.eigvalsh(sym(yi)).min() for yi in y]
        if min(mins) < -1e-9:
            raise DomainError("init must be symmetric positive semidefinite per box")

    deltas = []
    converged = False
    it = 0
    for it in range(1, max_iters + 1):
        e = np.einsum("ij,jab->iab", table, y)
        y_new = np.empty_like(y)
        for i in range(n_boxes):
            eb = e[i] @ bmat[i]
            v = rmat[i] + bmat[i].T @ eb
            try:
                cf = la.cho_factor(sym(v))
            except la.LinAlgError as exc:
                raise ConsistencyError("V = R + B'E B lost positive definiteness") from exc
            g = la.cho_solve(cf, eb.T @ abar[i])
            y_new[i] = sym(mwt[i] + abar[i].T @ (e[i] @ abar[i] - eb @ g))
        delta = max(np.linalg.norm(y_new[i] - y[i], 2) for i in range(n_boxes))
        deltas.append(delta)
        y = y_new
        if delta < tol:
            converged = True
            break
        if not np.isfinite(delta):
            break

    gains = np.zeros((n_boxes, bmat.shape[2], q))
    if np.all(np.isfinite(y)):
        e = np.einsum("ij,jab->iab", table, y)
        for i in range(n_boxes):
            eb = e[i] @ bmat[i]
            v = sym(rmat[i] + bmat[i].T @ eb)
            gains[i] = -la.cho_solve(la.cho_factor(v), eb.T @ abar[i])

    solution = PiecewiseMatrixFunction(grid, y)
    gain = PiecewiseMatrixFunction(grid, gains)
    report = RiccatiReport(
        solution=solution,
        gain=gain,
        iterations=it,
        final_delta=float(deltas[-1]) if deltas else 0.0,
        converged=converged,
        tol=tol,
        delta_history_tail=np.asarray(deltas[-16:]),
    )
    if converged:
        acl = abar + np.einsum("iab,ibc->iac", bmat, gains)
        report.closed_loop_radius = spectral_radius_surrogate(acl, grid)
    return report


def optimal_cost(report: RiccatiReport, initial: InitialSpec) -> float:
    """Predicted optimal cost E(xi_0' S(phi_0) xi_0) for a converged solution.

    Point-mass or Gaussian xi_0 and point/uniform phi_0 evaluate in closed
    form through per-box probabilities and the second moment of xi_0.
    """
    if not report.converged:
        raise NotConvergedError(
            f"Riccati recursion did not converge (final update {report.final_delta:.3e}); "
            "no optimal cost is defined"
        )
    grid = report.solution.grid
    probs = initial.phi0_box_probs(grid)
    moment = initial.xi0_second_moment()
    if moment.shape != report.solution.shape:
        raise DomainError(
            f"initial state dimension {moment.shape[0]} does not match solution dimension "
            f"{report.solution.shape[0]}"
        )
    return float(sum(p * float(np.sum(s * moment)) for p, s in zip(probs, report.solution.values) if p > 0))


def recover_original_input(maps, ubar_gain: PiecewiseMatrixFunction) -> PiecewiseMatrixFunction:
    """Undo the cross-term input shift: K_orig(c_i) = K(c_i) - R^{-1}W' at each center."""
    grid = ubar_gain.grid
    vals = []
    for i in range(grid.n_boxes):
        ci = grid.centers[i]
        _, w, r = maps.qwr_of(ci)
        shift = la.cho_solve(la.cho_factor(sym(r)), w.T)
        vals.append(ubar_gain.values[i] - shift)
    return PiecewiseMatrixFunction(grid, np.asarray(vals))


def closed_loop_values(maps, grid, gain: PiecewiseMatrixFunction, coordinates: str = "original") -> np.ndarray:
    """Per-box closed-loop matrices A(c_i) + B(c_i) K_i (or Abar + B K for shifted input)."""
    vals = np.empty((grid.n_boxes,) + (maps.a_of(grid.centers[0]).shape))
    for i in range(grid.n_boxes):
        ci = grid.centers[i]
        a = maps.a_of(ci) if coordinates == "original" else maps.abar_of(ci)
        vals[i] = a + maps.b_of(ci) @ gain.values[i]
    return vals


def spectral_radius_surrogate(a_cl, grid, tol: float = 1e-10, max_iters: int = 20000):
    """Dominant eigenvalue of the finite second-moment operator on the grid.

    The operator (L V)_i = sum_j w_i(c_j) A(c_j) V_j A(c_j)' preserves the
    cone of positive semidefinite tuples, so power iteration from the identity
    tuple converges to the spectral radius; the loop is mean-square stable on
    the grid approximation exactly when the value is below one.  Returns the
    Rayleigh estimate; a second return flag marks a capped, unconverged run.
    """
    if isinstance(a_cl, PiecewiseMatrixFunction):
        a_cl = a_cl.values
    a_cl = np.asarray(a_cl, dtype=float)
    n_boxes, q, _ = a_cl.shape
    if n_boxes != grid.n_boxes:
        raise DomainError("closed-loop values do not match the grid")
    table = grid.weight_table

    def apply(v):
        ava = np.einsum("jab,jbc,jdc->jad", a_cl, v, a_cl)
        return np.einsum("ji,jad->iad", table, ava)

    v = np.stack([np.eye(q)] * n_boxes)
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(max_iters):
        lv = apply(v)
        norm = np.linalg.norm(lv)
        if norm == 0.0:
            return 0.0
        lam_new = float(np.sum(v * lv))  # Rayleigh quotient at unit-norm v
        if abs(lam_new - lam) <= tol * max(1.0, abs(lam_new)):
            return lam_new
        lam = lam_new
        v = lv / norm
    warnings.warn(
        f"spectral-radius power iteration hit the {max_iters}-iteration cap; "
        f"estimate {lam:.6e} is unconverged",
        RuntimeWarning,
        stacklevel=2,
    )
    return lam
