"""Exact discretization of a sampled-data plant with a delayed zero-order hold.

The continuous-time plant  dx/dt = A_c x + B_c u  is sampled with period h.
The input computed from the sample at t = kh reaches the hold at t = kh + tau_k,
so over one period the hold plays the previous input on [kh, kh+tau_k) and the
new one on [kh+tau_k, (k+1)h).  With the stacked state xi_k = (x(kh), u_{k-1})
the loop becomes a discrete-time jump-linear system

    xi_{k+1} = A(tau_k) xi_k + B(tau_k) u_k,

and the running integral of  x'Q_c x + u'R_c u  over one period is an exact
quadratic form in (xi_k, u_k) with delay-dependent blocks Q, W, R.  All
integrals are evaluated by the Van Loan block-exponential technique
(Van Loan, IEEE TAC 1978), so there is no time-stepping error; an independent
Gauss-Legendre evaluator of the same blocks is provided for cross-checks.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np
import scipy.linalg as la
from numpy.polynomial.legendre import leggauss

from .errors import ConsistencyError, DomainError, NotPsdError
from .matexp import ExpPropagator, augmented_generator

__all__ = [
    "Plant",
    "HoldPropagators",
    "JumpSystemMaps",
    "CrossTermFree",
    "discretize_dynamics",
    "assemble_jump_matrices",
    "assemble_cost_blocks",
    "cost_gram",
    "cost_gram_batch",
    "remove_cross_term",
    "cholesky_factor",
    "sym",
]

_PSD_TOL = 1e-10


def sym(m: np.ndarray) -> np.ndarray:
    """Symmetric part, used to damp roundoff on nominally symmetric results."""
    return 0.5 * (m + np.swapaxes(m, -1, -2))


def _as_matrix(x, name: str) -> np.ndarray:
    m = np.atleast_2d(np.asarray(x, dtype=float))
    if m.ndim != 2:
        raise DomainError(f"{name} must be a matrix, got ndim={m.ndim}")
    return m


def tau_of(phi) -> float:
    """First entry of a delay vector (the delay that shapes the current period)."""
    arr = np.atleast_1d(np.asarray(phi, dtype=float))
    return float(arr.flat[0])


@dataclass(frozen=True)
class Plant:
    """Continuous-time plant data: dynamics (a_c, b_c), cost weights (q_c, r_c), period h.

    q_c must be symmetric positive semidefinite and r_c symmetric positive
    definite; both are checked eagerly so downstream code can rely on them.
    """

    a_c: np.ndarray
    b_c: np.ndarray
    q_c: np.ndarray
    r_c: np.ndarray
    h: float

    def __post_init__(self):
        object.__setattr__(self, "a_c", _as_matrix(self.a_c, "a_c"))
        object.__setattr__(self, "b_c", _as_matrix(self.b_c, "b_c"))
        object.__setattr__(self, "q_c", _as_matrix(self.q_c, "q_c"))
        object.__setattr__(self, "r_c", _as_matrix(self.r_c, "r_c"))
        object.__setattr__(self, "h", float(self.h))
        n, m = self.b_c.shape
        if self.a_c.shape != (n, n):
            raise DomainError(f"a_c shape {self.a_c.shape} incompatible with b_c {self.b_c.shape}")
        if self.q_c.shape != (n, n):
            raise DomainError(f"q_c must be {n}x{n}, got {self.q_c.shape}")
        if self.r_c.shape != (m, m):
            raise DomainError(f"r_c must be {m}x{m}, got {self.r_c.shape}")
        if not self.h > 0:
            raise DomainError(f"sampling period h must be positive, got {self.h}")
        scale = max(1.0, np.abs(self.q_c).max())
        if np.abs(self.q_c - self.q_c.T).max() > _PSD_TOL * scale:
            raise DomainError("q_c must be symmetric")
        if np.linalg.eigvalsh(sym(self.q_c)).min() < -_PSD_TOL * scale:
            raise NotPsdError("q_c must be positive semidefinite")
        rscale = max(1.0, np.abs(self.r_c).max())
        if np.abs(self.r_c - self.r_c.T).max() > _PSD_TOL * rscale:
            raise DomainError("r_c must be symmetric")
        try:
            la.cholesky(self.r_c)
        except la.LinAlgError as exc:
            raise NotPsdError("r_c must be positive definite") from exc

    @property
    def n(self) -> int:
        return self.a_c.shape[0]

    @property
    def m(self) -> int:
        return self.b_c.shape[1]

    @property
    def q(self) -> int:
        """Stacked-state dimension n + m."""
        return self.n + self.b_c.shape[1]


class HoldPropagators:
    """The three propagator maps of the sampled-data solution.

    alpha(theta) = e^{A_c theta},  beta(theta) = int_0^theta e^{A_c s} B_c ds,
    gamma(tau, theta) = int_0^{theta-tau} e^{A_c s} B_c ds = beta(theta - tau).
    All come out of one exponential of the augmented generator [[A_c,B_c],[0,0]].
    """

    def __init__(self, plant: Plant):
        self.plant = plant
        self._prop = ExpPropagator(augmented_generator(plant.a_c, plant.b_c))

    def alpha_beta(self, theta):
        """(alpha(theta), beta(theta)) for scalar or batched theta."""
        n = self.plant.n
        e = self._prop.at(theta)
        return e[..., :n, :n], e[..., :n, n:]

    def alpha_of(self, theta):
        return self.alpha_beta(theta)[0]

    def beta_of(self, theta):
        return self.alpha_beta(theta)[1]

    def gamma_of(self, tau, theta):
        tau = np.asarray(tau, dtype=float)
        theta = np.asarray(theta, dtype=float)
        if np.any(theta - tau < -1e-15):
            raise DomainError("gamma(tau, theta) requires theta >= tau")
        return self.beta_of(np.maximum(theta - tau, 0.0))


def _check_tau(plant: Plant, tau: float) -> float:
    tau = float(tau)
    if not (0.0 <= tau < plant.h):
        raise DomainError(f"delay tau={tau} outside [0, h) with h={plant.h}")
    return tau


def discretize_dynamics(plant: Plant, tau: float):
    """Exact per-period transition data (A_d, B_d, Gamma(tau)).

    A_d = e^{A_c h}, B_d = int_0^h e^{A_c s}B_c ds, Gamma(tau) = int_0^{h-tau}.
    Each block comes from a single augmented-matrix exponential, so accuracy is
    that of expm itself.
    """
    tau = _check_tau(plant, tau)
    n = plant.n
    gen = augmented_generator(plant.a_c, plant.b_c)
    e_h = la.expm(gen * plant.h)
    a_d, b_d = e_h[:n, :n], e_h[:n, n:]
    e_g = la.expm(gen * (plant.h - tau))
    gamma = e_g[:n, n:]
    return a_d, b_d, gamma


def assemble_jump_matrices(plant: Plant, phi):
    """Jump-system pair (A(phi), B(phi)) for the stacked state (x(kh), u_{k-1}).

    A(phi) = [[A_d, B_d - Gamma(tau)], [0, 0]],  B(phi) = [[Gamma(tau)], [I]].
    The bottom rows of A are exactly zero and the bottom block of B is exactly
    the identity: u_{k-1} is replaced wholesale by u_k each period.
    """
    tau = _check_tau(plant, tau_of(phi))
    n, m = plant.n, plant.m
    a_d, b_d, gamma = discretize_dynamics(plant, tau)
    a = np.zeros((n + m, n + m))
    a[:n, :n] = a_d
    a[:n, n:] = b_d - gamma
    b = np.zeros((n + m, m))
    b[:n, :] = gamma
    b[n:, :] = np.eye(m)
    return a, b


def _cost_generators(plant: Plant):
    """Generators/weights for the two hold segments on the (x, u_old, u_new) state."""
    n, m = plant.n, plant.m
    z_nm = np.zeros((n, m))
    z_m = np.zeros((m, m))
    m1 = augmented_generator(plant.a_c, np.hstack([plant.b_c, z_nm]))
    m2 = augmented_generator(plant.a_c, np.hstack([z_nm, plant.b_c]))
    w1 = la.block_diag(plant.q_c, plant.r_c, z_m)
    w2 = la.block_diag(plant.q_c, z_m, plant.r_c)
    return m1, m2, w1, w2


def cost_gram_batch(plant: Plant, taus: np.ndarray) -> np.ndarray:
    """Per-period cost Gram matrices over (x_k, u_{k-1}, u_k) for an array of delays.

    Row/column order is (xi_k, u_k), so the blocks of the result are
    [[Q, W], [W', R]].  Segment one ([0,tau), old input active) and segment two
    ([tau,h), new input active) each contribute a Van Loan Gram integral; the
    second is pulled back through the segment-one transition.
    """
    taus = np.asarray(taus, dtype=float)
    if taus.size and (taus.min() < 0.0 or taus.max() >= plant.h):
        bad = taus[(taus < 0.0) | (taus >= plant.h)][0]
        raise DomainError(f"delay tau={bad} outside [0, h) with h={plant.h}")
    m1, m2, w1, w2 = _cost_generators(plant)
    d = m1.shape[0]
    z1 = np.block([[-m1.T, w1], [np.zeros((d, d)), m1]])
    z2 = np.block([[-m2.T, w2], [np.zeros((d, d)), m2]])
    e1 = ExpPropagator(z1).at(taus)
    e2 = ExpPropagator(z2).at(plant.h - taus)
    t1 = ExpPropagator(m1).at(taus)
    g1 = np.swapaxes(e1[..., d:, d:], -1, -2) @ e1[..., :d, d:]
    g2 = np.swapaxes(e2[..., d:, d:], -1, -2) @ e2[..., :d, d:]
    gram = g1 + np.swapaxes(t1, -1, -2) @ g2 @ t1
    return sym(gram)


def cost_gram(plant: Plant, tau: float) -> np.ndarray:
    """Single-delay convenience wrapper around cost_gram_batch."""
    return cost_gram_batch(plant, np.asarray([float(tau)]))[0]


def _cost_blocks_quadrature(plant: Plant, tau: float, nodes: int):
    """Gauss-Legendre evaluation of the Q/W/R integral blocks, split at theta = tau.

    Deliberately independent of the Van Loan path: it integrates the
    alpha/beta/gamma products of the split-domain block formulas directly and
    serves as the cross-check oracle.
    """
    q_c, r_c, h = plant.q_c, plant.r_c, plant.h
    props = HoldPropagators(plant)
    x_gl, w_gl = leggauss(nodes)

    def quad(lo, hi, integrand_at):
        if hi <= lo:
            return 0.0 * integrand_at(np.asarray([hi]))[0]
        pts = 0.5 * (hi - lo) * x_gl + 0.5 * (hi + lo)
        return 0.5 * (hi - lo) * np.einsum("k,kab->ab", w_gl, integrand_at(pts))

    def tp(x):
        return np.swapaxes(x, -1, -2)

    q11 = quad(0.0, h, lambda p: tp(props.alpha_of(p)) @ q_c @ props.alpha_of(p))
    i_ab = quad(0.0, h, lambda p: tp(props.alpha_of(p)) @ q_c @ props.beta_of(p))
    i_bb = quad(0.0, h, lambda p: tp(props.beta_of(p)) @ q_c @ props.beta_of(p))
    i_ag = quad(tau, h, lambda p: tp(props.alpha_of(p)) @ q_c @ props.beta_of(p - tau))
    i_bg = quad(tau, h, lambda p: tp(props.beta_of(p)) @ q_c @ props.beta_of(p - tau))
    i_gg = quad(tau, h, lambda p: tp(props.beta_of(p - tau)) @ q_c @ props.beta_of(p - tau))

    q12 = i_ab - i_ag
    q22 = tau * r_c + i_bb + i_gg - (i_bg + i_bg.T)
    q = np.block([[q11, q12], [q12.T, q22]])
    w = np.vstack([i_ag, i_bg - i_gg])
    r = (h - tau) * r_c + i_gg
    return sym(q), w, sym(r)


def assemble_cost_blocks(plant: Plant, phi, method: str = "van-loan", gl_nodes: int = 64):
    """Delay-dependent cost blocks (Q(phi), W(phi), R(phi)).

    method="van-loan" is the production path (block exponentials, exact);
    method="gauss-legendre" integrates the same blocks numerically with
    gl_nodes points per segment and exists as an independent evaluator for
    cross-checks.  Q is symmetrized; R is verified positive definite, which a
    valid plant forces structurally through (h - tau) R_c.
    """
    tau = _check_tau(plant, tau_of(phi))
    qdim = plant.q
    if method == "van-loan":
        gram = cost_gram(plant, tau)
        q = sym(gram[:qdim, :qdim])
        w = gram[:qdim, qdim:]
        r = sym(gram[qdim:, qdim:])
    elif method == "gauss-legendre":
        q, w, r = _cost_blocks_quadrature(plant, tau, gl_nodes)
    else:
        raise DomainError(f"unknown cost-block method {method!r}")
    if np.linalg.eigvalsh(r).min() < _PSD_TOL:
        raise ConsistencyError(
            "R(phi) lost positive definiteness; input plant data is corrupted "
            "(R_c > 0 and h - tau > 0 force R(phi) > 0)"
        )
    return q, w, r


class CrossTermFree(NamedTuple):
    """Cross-term-free pair: drift Abar, state weight M, and M's smallest eigenvalue."""

    abar: np.ndarray
    m_weight: np.ndarray
    m_min_eig: float


def remove_cross_term(maps: "JumpSystemMaps", phi) -> CrossTermFree:
    """Eliminates the Q-W-R cross block via the input shift u -> u + R^{-1}W' xi.

    Returns Abar(phi) = A - B R^{-1} W' and M(phi) = Q - W R^{-1} W'
    (symmetrized), with M's minimum eigenvalue attached so callers can confirm
    the joint weighting block was positive semidefinite.
    """
    a, b = maps.a_of(phi), maps.b_of(phi)
    q, w, r = maps.qwr_of(phi)
    try:
        rinv_wt = la.cho_solve(la.cho_factor(r), w.T)
    except la.LinAlgError as exc:
        raise ConsistencyError("R(phi) numerically singular in cross-term removal") from exc
    abar = a - b @ rinv_wt
    m = sym(q - w @ rinv_wt)
    return CrossTermFree(abar, m, float(np.linalg.eigvalsh(m).min()))


def cholesky_factor(m: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    """Factor C with C'C = M for symmetric positive semidefinite M.

    Strictly positive definite M yields the unique upper-triangular factor
    with positive diagonal; semidefinite M falls back to a pivoted
    factorization (LAPACK ?pstrf), whose factor is not triangular after
    un-permutation but still reconstructs M.  Diagnostic use only.
    """
    m = np.asarray(m, dtype=float)
    scale = max(1.0, np.abs(m).max())
    if np.abs(m - m.T).max() > 1e-8 * scale:
        raise NotPsdError("matrix must be symmetric")
    eigmin = np.linalg.eigvalsh(sym(m)).min()
    if eigmin < -tol:
        raise NotPsdError(f"matrix is not positive semidefinite (min eigenvalue {eigmin:.3e})")
    if eigmin > max(tol, 1e-14 * scale):
        return la.cholesky(sym(m), lower=False)
    c, piv, rank, info = la.lapack.dpstrf(sym(m), lower=0)
    if info < 0:
        raise ConsistencyError(f"pivoted factorization failed (info={info})")
    k = m.shape[0]
    u = np.triu(c)
    u[rank:, :] = 0.0
    perm = np.asarray(piv, dtype=int) - 1
    out = np.zeros_like(u)
    out[:, perm] = u
    return out


@dataclass
class JumpSystemMaps:
    """Pure delay-to-matrix evaluators for one plant, with per-delay caching.

    All evaluators depend on phi only through its first entry, mirroring the
    structure of the jump matrices; objects are immutable apart from the cache
    and safe to share across threads.
    """

    plant: Plant
    _cache: dict = field(default_factory=dict, repr=False)

    def _entry(self, phi):
        tau = _check_tau(self.plant, tau_of(phi))
        hit = self._cache.get(tau)
        if hit is None:
            a, b = assemble_jump_matrices(self.plant, [tau])
            q, w, r = assemble_cost_blocks(self.plant, [tau])
            rinv_wt = la.cho_solve(la.cho_factor(r), w.T)
            abar = a - b @ rinv_wt
            mw = sym(q - w @ rinv_wt)
            hit = {"a": a, "b": b, "q": q, "w": w, "r": r, "abar": abar, "m": mw}
            self._cache[tau] = hit
        return hit

    @property
    def n(self) -> int:
        return self.plant.n

    @property
    def m(self) -> int:
        return self.plant.m

    @property
    def q(self) -> int:
        return self.plant.q

    def a_of(self, phi) -> np.ndarray:
        return self._entry(phi)["a"]

    def b_of(self, phi) -> np.ndarray:
        return self._entry(phi)["b"]

    def q_of(self, phi) -> np.ndarray:
        return self._entry(phi)["q"]

    def w_of(self, phi) -> np.ndarray:
        return self._entry(phi)["w"]

    def r_of(self, phi) -> np.ndarray:
        return self._entry(phi)["r"]

    def qwr_of(self, phi):
        e = self._entry(phi)
        return e["q"], e["w"], e["r"]

    def abar_of(self, phi) -> np.ndarray:
        return self._entry(phi)["abar"]

    def m_of(self, phi) -> np.ndarray:
        return self._entry(phi)["m"]

    def cost_gram_of(self, phi) -> np.ndarray:
        e = self._entry(phi)
        return np.block([[e["q"], e["w"]], [e["w"].T, e["r"]]])
