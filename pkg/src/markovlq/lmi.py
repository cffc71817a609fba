"""Gridded LMI certificates for stochastic stabilizability and detectability.

For each grid box i the design inequality freezes the system data at the box
center and pays for the within-box variation through the sampled bounds
kappa.  Stabilizability uses the weighted stack

    Gamma_i = [ sqrt(w_j(c_i)) [A(c_i) B(c_i)] ]_{j=1..N}

and a 4x4 block matrix in variables (R_j > 0, U_i, Fbar_i, lambda_i); a
feasible family certifies that the piecewise-constant state feedback
F_i = Fbar_i U_i^{-1} makes the second-moment operator contractive.  The
detectability test is not the formal dual (no duality is claimed for
continuum-state chains); it is a separate 7x7 block family in
(S_j > 0, U_i, Lbar_i, lambda_i, rho_i) built on Abar and the cross-term-free
state weight M standing in the output-matrix slot, yielding observer gains
L_i = U_i^{-1} Lbar_i.
"""
from __future__ import annotations

import numpy as np

from .errors import ConsistencyError, DomainError
from .riccati import PiecewiseMatrixFunction
from .sdp import FEASIBLE, AffineLmiProblem, FeasibilityResult, solve_feasibility

__all__ = [
    "assemble_stabilizability_lmi",
    "assemble_detectability_lmi",
    "assemble_delay_independent_lmi",
    "extract_feedback_gains",
    "extract_observer_gains",
    "solve_feasibility",
    "FeasibilityResult",
    "AffineLmiProblem",
]


def _weighted_stack(a: np.ndarray, b: np.ndarray, weights: np.ndarray):
    """(Gamma_A, Gamma_B): the sqrt-weighted vertical stacks of A and B."""
    w = np.sqrt(np.clip(weights, 0.0, None))
    ga = np.vstack([wj * a for wj in w])
    gb = np.vstack([wj * b for wj in w])
    return ga, gb


def assemble_stabilizability_lmi(maps, grid, epsilon: float = 1e-6, shared_gain: bool = False) -> AffineLmiProblem:
    """Block LMIs whose feasibility certifies stochastic stabilizability.

    One constraint per box; the diagonal R-block is shared across constraints,
    which is what couples the boxes.  With shared_gain=True a single (U, Fbar)
    pair is used everywhere and the extracted controller needs no delay
    measurement.
    """
    if grid.kappa_stab is None:
        raise DomainError("grid carries no kappa_stab; run estimate_kappa_stab first")
    n_boxes = grid.n_boxes
    a0 = maps.a_of(grid.centers[0])
    q = a0.shape[0]
    m = maps.b_of(grid.centers[0]).shape[1]

    prob = AffineLmiProblem(epsilon=epsilon)
    i_r = [prob.add_variable(f"R_{j}", q, q, "sym") for j in range(n_boxes)]
    if shared_gain:
        iu_shared = prob.add_variable("U", q, q, "rect")
        if_shared = prob.add_variable("Fbar", m, q, "rect")
    i_lam = [prob.add_variable(f"lam_{i}", 1, 1, "scalar") for i in range(n_boxes)]

    b0 = 0
    b1 = q
    b2 = q + n_boxes * q
    b3 = q + 2 * n_boxes * q
    size = b3 + q + m

    for i in range(n_boxes):
        ci = grid.centers[i]
        ga, gb = _weighted_stack(maps.a_of(ci), maps.b_of(ci), grid.weight_table[i])
        kappa = float(grid.kappa_stab[i])
        iu = iu_shared if shared_gain else prob.add_variable(f"U_{i}", q, q, "rect")
        ifb = if_shared if shared_gain else prob.add_variable(f"Fbar_{i}", m, q, "rect")

        con = prob.add_constraint(size, label=f"stab_box_{i}")
        con.add_mat(b0, b0, iu, (q, q), mirror=True)
        con.add_mat(b0, b0, i_r[i], (q, q), coeff=-1.0, mirror=False)
        con.add_mat(b0, b2, iu, (q, q), right=ga.T, transpose=True, mirror=True)
        con.add_mat(b0, b2, ifb, (m, q), right=gb.T, transpose=True, mirror=True)
        con.add_mat(b0, b3, iu, (q, q), coeff=kappa, transpose=True, mirror=True)
        con.add_mat(b0, b3 + q, ifb, (m, q), coeff=kappa, transpose=True, mirror=True)
        con.add_scalar(b1, b1, i_lam[i], np.eye(n_boxes * q), mirror=False)
        con.add_scalar(b1, b2, i_lam[i], np.eye(n_boxes * q), mirror=True)
        for j in range(n_boxes):
            con.add_mat(b2 + j * q, b2 + j * q, i_r[j], (q, q), mirror=False)
        con.add_scalar(b3, b3, i_lam[i], np.eye(q + m), mirror=False)

    prob.finalize()
    prob.meta.update(
        {
            "kind": "delay-independent-stabilizability" if shared_gain else "stabilizability",
            "grid": grid,
            "q": q,
            "m": m,
            "shared_gain": shared_gain,
        }
    )
    return prob


def assemble_delay_independent_lmi(maps, grid, epsilon: float = 1e-6) -> AffineLmiProblem:
    """Stabilizability family with one shared (U, Fbar): a delay-independent controller."""
    return assemble_stabilizability_lmi(maps, grid, epsilon=epsilon, shared_gain=True)


def assemble_detectability_lmi(maps, grid, epsilon: float = 1e-6) -> AffineLmiProblem:
    """Block LMIs whose feasibility certifies stochastic detectability of (M, Abar).

    The cross-term-free state weight M(c_i) occupies the output-matrix slot
    (testing the pair (M, Abar) suffices when the joint weight is positive
    definite), and the sqrt-weight row enters through its own variation bound
    kappa_w.
    """
    if grid.kappa_det_a is None or grid.kappa_det_w is None:
        raise DomainError("grid carries no detectability kappas; run estimate_kappa_det first")
    n_boxes = grid.n_boxes
    q = maps.abar_of(grid.centers[0]).shape[0]
    rdim = maps.m_of(grid.centers[0]).shape[0]

    prob = AffineLmiProblem(epsilon=epsilon)
    i_s = [prob.add_variable(f"S_{j}", q, q, "sym") for j in range(n_boxes)]
    i_lam = [prob.add_variable(f"lam_{i}", 1, 1, "scalar") for i in range(n_boxes)]
    i_rho = [prob.add_variable(f"rho_{i}", 1, 1, "scalar") for i in range(n_boxes)]

    d0 = 0
    d1 = q
    d2 = 2 * q
    d3 = 3 * q
    d4 = 3 * q + (q + rdim)
    d5 = d4 + n_boxes * q
    d6 = d5 + n_boxes * q
    size = d6 + q

    for i in range(n_boxes):
        ci = grid.centers[i]
        abar = maps.abar_of(ci)
        mwt = maps.m_of(ci)
        sqw = np.sqrt(np.clip(grid.weight_table[i], 0.0, None))
        ka = float(grid.kappa_det_a[i])
        kw = float(grid.kappa_det_w[i])
        iu = prob.add_variable(f"U_{i}", q, q, "rect")
        il = prob.add_variable(f"Lbar_{i}", q, rdim, "rect")

        con = prob.add_constraint(size, label=f"det_box_{i}")
        con.add_mat(d0, d0, iu, (q, q), mirror=True)
        con.add_mat(d0, d2, iu, (q, q), right=abar, mirror=True)
        con.add_mat(d0, d2, il, (q, rdim), right=mwt, mirror=True)
        con.add_mat(d0, d3, iu, (q, q), coeff=ka, mirror=True)
        con.add_mat(d0, d3 + q, il, (q, rdim), coeff=ka, mirror=True)
        for j in range(n_boxes):
            if sqw[j] != 0.0:
                con.add_mat(d0, d5 + j * q, i_s[j], (q, q), coeff=float(sqw[j]), mirror=True)
        con.add_scalar(d0, d6, i_rho[i], np.eye(q), mirror=True)
        con.add_scalar(d1, d1, i_lam[i], np.eye(q), mirror=False)
        con.add_scalar(d1, d2, i_lam[i], np.eye(q), mirror=True)
        con.add_mat(d2, d2, i_s[i], (q, q), mirror=False)
        con.add_scalar(d3, d3, i_lam[i], np.eye(q + rdim), mirror=False)
        con.add_scalar(d4, d4, i_rho[i], np.eye(n_boxes * q), mirror=False)
        for j in range(n_boxes):
            con.add_mat(d4 + j * q, d5 + j * q, i_s[j], (q, q), coeff=kw, mirror=True)
        for j in range(n_boxes):
            con.add_mat(d5 + j * q, d5 + j * q, i_s[j], (q, q), mirror=False)
        con.add_scalar(d6, d6, i_rho[i], np.eye(q), mirror=False)

    prob.finalize()
    prob.meta.update({"kind": "detectability", "grid": grid, "q": q, "rdim": rdim})
    return prob


def _require_feasible(result: FeasibilityResult, kind_prefix: str) -> AffineLmiProblem:
    if result.status != FEASIBLE:
        raise DomainError(f"gain extraction requires a feasible result, got status {result.status!r}")
    prob = result.problem
    if prob is None or not str(prob.meta.get("kind", "")).endswith(kind_prefix):
        raise DomainError(f"result does not come from a {kind_prefix} problem")
    return prob


def extract_feedback_gains(result: FeasibilityResult) -> PiecewiseMatrixFunction:
    """Piecewise-constant state-feedback gains F_i = Fbar_i U_i^{-1}."""
    prob = _require_feasible(result, "stabilizability")
    grid = prob.meta["grid"]
    shared = prob.meta["shared_gain"]
    gains = []
    for i in range(grid.n_boxes):
        u = np.asarray(result.assignment["U" if shared else f"U_{i}"])
        fbar = np.asarray(result.assignment["Fbar" if shared else f"Fbar_{i}"])
        try:
            gains.append(np.linalg.solve(u.T, fbar.T).T)
        except np.linalg.LinAlgError as exc:
            # U + U' > R > 0 forces U nonsingular; reaching this means the
            # solver recheck let a broken point through.
            raise ConsistencyError(f"U_{i} is numerically singular during gain extraction") from exc
    return PiecewiseMatrixFunction(grid, np.asarray(gains))


def extract_observer_gains(result: FeasibilityResult) -> PiecewiseMatrixFunction:
    """Piecewise-constant observer gains L_i = U_i^{-1} Lbar_i."""
    prob = _require_feasible(result, "detectability")
    grid = prob.meta["grid"]
    gains = []
    for i in range(grid.n_boxes):
        u = np.asarray(result.assignment[f"U_{i}"])
        lbar = np.asarray(result.assignment[f"Lbar_{i}"])
        try:
            gains.append(np.linalg.solve(u, lbar))
        except np.linalg.LinAlgError as exc:
            raise ConsistencyError(f"U_{i} is numerically singular during observer extraction") from exc
    return PiecewiseMatrixFunction(grid, np.asarray(gains))
