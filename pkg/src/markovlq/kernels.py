"""Delay models: higher-order Markov chains on the box M = [tau_min, tau_max]^p.

The chain state is the vector of the last p delays; appending a new delay
drops the oldest.  A kernel provides three views of the transition law:

* ``box_mass(phi, box)`` -- probability that the next vector lands in a box.
  This is the primitive: every downstream formula (grid weights, conditional
  expectations) consumes box masses, never raw densities.  Kernels whose
  trailing coordinates move deterministically (all the shift-structured ones
  here) have no joint density w.r.t. Lebesgue on M, but their box masses are
  always well defined.
* ``density(phi, ell)`` -- where meaningful, the transition density of the
  stochastic coordinate (Lebesgue reference measure on that coordinate).
* ``sample_next(phi, rng)`` -- one transition, driven by an explicit
  numpy Generator so parallel simulations can use independent streams.

User-defined kernels plug in by subclassing DelayKernel (or DensityKernel for
fully stochastic laws given by a joint density).
"""
from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.special import ndtr, ndtri

from .errors import DomainError
from .rng import stream

__all__ = [
    "Box",
    "DelayKernel",
    "UniformKernel",
    "TruncNormalAvgKernel",
    "DiracKernel",
    "DensityKernel",
    "box_mass",
    "density",
    "sample_path",
]

_EDGE_TOL = 1e-12


@dataclass(frozen=True)
class Box:
    """Axis-aligned box with per-axis right-edge closedness.

    Grid partitions use half-open boxes [lo, hi) on every axis except the last
    slice of each axis, which is closed; standalone query boxes default to
    closed edges.  Left edges are always closed.
    """

    lower: np.ndarray
    upper: np.ndarray
    right_closed: np.ndarray = None

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lo.shape != hi.shape or lo.ndim != 1:
            raise DomainError("box lower/upper must be equal-length vectors")
        if np.any(hi < lo):
            raise DomainError("box upper bound below lower bound")
        rc = self.right_closed
        rc = np.ones(lo.shape, dtype=bool) if rc is None else np.atleast_1d(np.asarray(rc, dtype=bool))
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        object.__setattr__(self, "right_closed", rc)

    @property
    def p(self) -> int:
        return self.lower.size

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)

    @property
    def volume(self) -> float:
        return float(np.prod(self.upper - self.lower))

    def contains(self, point) -> bool:
        x = np.atleast_1d(np.asarray(point, dtype=float))
        above = x >= self.lower
        below = np.where(self.right_closed, x <= self.upper, x < self.upper)
        return bool(np.all(above & below))

    def axis_interval(self, k: int):
        return self.lower[k], self.upper[k], bool(self.right_closed[k])


def _in_interval(x: float, lo: float, hi: float, closed: bool) -> bool:
    return lo <= x <= hi if closed else lo <= x < hi


class DelayKernel(ABC):
    """Transition law of the delay vector; subclass to plug in custom models."""

    def __init__(self, p: int, tau_min: float, tau_max: float):
        if p < 1:
            raise DomainError("kernel order p must be >= 1")
        if not (0.0 <= tau_min <= tau_max):
            raise DomainError(f"need 0 <= tau_min <= tau_max, got [{tau_min}, {tau_max}]")
        self.p = int(p)
        self.tau_min = float(tau_min)
        self.tau_max = float(tau_max)

    @property
    def state_box(self) -> Box:
        """The full state box M (closed)."""
        return Box(np.full(self.p, self.tau_min), np.full(self.p, self.tau_max))

    def check_state(self, phi) -> np.ndarray:
        phi = np.atleast_1d(np.asarray(phi, dtype=float))
        if phi.shape != (self.p,):
            raise DomainError(f"delay vector must have {self.p} entries, got shape {phi.shape}")
        if np.any(phi < self.tau_min - _EDGE_TOL) or np.any(phi > self.tau_max + _EDGE_TOL):
            raise DomainError(f"delay vector {phi} outside [{self.tau_min}, {self.tau_max}]^{self.p}")
        return phi

    def check_box(self, box: Box) -> Box:
        if box.p != self.p:
            raise DomainError(f"box dimension {box.p} != kernel order {self.p}")
        if np.any(box.lower < self.tau_min - _EDGE_TOL) or np.any(box.upper > self.tau_max + _EDGE_TOL):
            raise DomainError("box is not contained in the delay state box")
        return box

    @abstractmethod
    def box_mass(self, phi, box: Box) -> float:
        """P(next vector in box | current vector = phi)."""

    @abstractmethod
    def density(self, phi, ell) -> float:
        """Transition density g(phi, ell) where defined; see module docstring."""

    @abstractmethod
    def sample_next(self, phi, rng: np.random.Generator) -> np.ndarray:
        """Draw the next delay vector."""

    def sample_path(self, phi0, steps: int, seed: int) -> np.ndarray:
        """Markov path of `steps` vectors starting at phi0 (row 0); seeded, reproducible."""
        phi = self.check_state(phi0)
        if steps < 1:
            raise DomainError("steps must be >= 1")
        rng = stream(seed)
        out = np.empty((steps, self.p))
        out[0] = phi
        for k in range(1, steps):
            out[k] = self.sample_next(out[k - 1], rng)
        return out


class _ShiftKernel(DelayKernel):
    """Kernels where only the newest delay is random and the rest shift down.

    The next vector is (tau_new, phi_1, ..., phi_{p-1}); subclasses define the
    conditional law of tau_new through interval masses, a pdf, and an
    inverse-CDF sampler.
    """

    def _interval_mass(self, phi: np.ndarray, lo: float, hi: float, closed: bool) -> float:
        raise NotImplementedError

    def _new_delay_pdf(self, phi: np.ndarray, x: float) -> float:
        raise NotImplementedError

    def _draw_new_delay(self, phi: np.ndarray, rng: np.random.Generator) -> float:
        raise NotImplementedError

    def box_mass(self, phi, box: Box) -> float:
        phi = self.check_state(phi)
        box = self.check_box(box)
        for k in range(1, self.p):
            lo, hi, closed = box.axis_interval(k)
            if not _in_interval(phi[k - 1], lo, hi, closed):
                return 0.0
        lo, hi, closed = box.axis_interval(0)
        return float(self._interval_mass(phi, lo, hi, closed))

    def density(self, phi, ell) -> float:
        phi = self.check_state(phi)
        ell = self.check_state(ell)
        if self.p > 1 and not np.array_equal(ell[1:], phi[:-1]):
            return 0.0
        return float(self._new_delay_pdf(phi, float(ell[0])))

    def sample_next(self, phi, rng: np.random.Generator) -> np.ndarray:
        phi = self.check_state(phi)
        new = self._draw_new_delay(phi, rng)
        return np.concatenate([[new], phi[:-1]])


class UniformKernel(_ShiftKernel):
    """New delay uniform on [tau_min, tau_max], independent of the history."""

    def __init__(self, tau_min: float, tau_max: float, p: int = 1):
        super().__init__(p, tau_min, tau_max)
        if tau_max <= tau_min:
            raise DomainError("uniform kernel needs tau_max > tau_min")
        self._span = tau_max - tau_min

    def _interval_mass(self, phi, lo, hi, closed):
        return max(hi - lo, 0.0) / self._span

    def _new_delay_pdf(self, phi, x):
        return 1.0 / self._span if self.tau_min <= x <= self.tau_max else 0.0

    def _draw_new_delay(self, phi, rng):
        return self.tau_min + self._span * rng.random()


class TruncNormalAvgKernel(_ShiftKernel):
    """Next delay ~ Normal(mean of the last two delays, sigma) truncated to the range.

    Second-order model: the state is (tau_k, tau_{k-1}) and the new delay is
    centered on their average.  sigma = 0 degenerates to the deterministic
    average (Dirac-at-average), special-cased throughout.
    """

    def __init__(self, sigma: float, tau_min: float, tau_max: float):
        super().__init__(2, tau_min, tau_max)
        if sigma < 0:
            raise DomainError("sigma must be nonnegative")
        self.sigma = float(sigma)

    def _mean(self, phi) -> float:
        return 0.5 * (phi[0] + phi[1])

    def _interval_mass(self, phi, lo, hi, closed):
        mean = self._mean(phi)
        if self.sigma == 0.0:
            x = min(max(mean, self.tau_min), self.tau_max)
            return 1.0 if _in_interval(x, lo, hi, closed) else 0.0
        denom = ndtr((self.tau_max - mean) / self.sigma) - ndtr((self.tau_min - mean) / self.sigma)
        num = ndtr((hi - mean) / self.sigma) - ndtr((lo - mean) / self.sigma)
        return num / denom

    def _new_delay_pdf(self, phi, x):
        if self.sigma == 0.0:
            raise DomainError("sigma = 0 kernel is singular; use box_mass")
        if not (self.tau_min <= x <= self.tau_max):
            return 0.0
        mean = self._mean(phi)
        z = (x - mean) / self.sigma
        denom = ndtr((self.tau_max - mean) / self.sigma) - ndtr((self.tau_min - mean) / self.sigma)
        return np.exp(-0.5 * z * z) / (np.sqrt(2.0 * np.pi) * self.sigma * denom)

    def _draw_new_delay(self, phi, rng):
        mean = self._mean(phi)
        if self.sigma == 0.0:
            return min(max(mean, self.tau_min), self.tau_max)
        # Inverse-CDF on the truncated interval: exact, one uniform per draw.
        lo = ndtr((self.tau_min - mean) / self.sigma)
        hi = ndtr((self.tau_max - mean) / self.sigma)
        u = lo + (hi - lo) * rng.random()
        x = mean + self.sigma * ndtri(u)
        return min(max(x, self.tau_min), self.tau_max)


class DiracKernel(DelayKernel):
    """Point-mass kernel pinned at a fixed vector; enables classical-LQR reductions."""

    def __init__(self, phi_star, tau_min: float = None, tau_max: float = None):
        phi_star = np.atleast_1d(np.asarray(phi_star, dtype=float))
        lo = float(phi_star.min()) if tau_min is None else float(tau_min)
        hi = float(phi_star.max()) if tau_max is None else float(tau_max)
        super().__init__(phi_star.size, lo, hi)
        self.phi_star = self.check_state(phi_star)

    def box_mass(self, phi, box: Box) -> float:
        self.check_state(phi)
        self.check_box(box)
        return 1.0 if box.contains(self.phi_star) else 0.0

    def density(self, phi, ell) -> float:
        raise DomainError("Dirac kernel has no density; box_mass is the primitive")

    def sample_next(self, phi, rng) -> np.ndarray:
        self.check_state(phi)
        return self.phi_star.copy()


class DensityKernel(DelayKernel):
    """Plug-in kernel for fully stochastic laws given by a joint density on M.

    `density_fn(phi, pts)` must accept a (k, p) array of candidate next
    vectors and return the (k,) density values; box masses are integrated by
    tensor-product Gauss-Legendre with `nodes` points per axis.  A sampler
    callable is optional and only needed for path simulation.
    """

    def __init__(self, p, tau_min, tau_max, density_fn, sampler_fn=None, nodes: int = 24):
        super().__init__(p, tau_min, tau_max)
        self._density_fn = density_fn
        self._sampler_fn = sampler_fn
        self._nodes = int(nodes)

    def density(self, phi, ell) -> float:
        phi = self.check_state(phi)
        ell = self.check_state(ell)
        return float(np.asarray(self._density_fn(phi, ell[None, :])).ravel()[0])

    def box_mass(self, phi, box: Box) -> float:
        phi = self.check_state(phi)
        box = self.check_box(box)
        x, w = leggauss(self._nodes)
        grids = []
        weights = []
        for k in range(self.p):
            lo, hi = box.lower[k], box.upper[k]
            grids.append(0.5 * (hi - lo) * x + 0.5 * (hi + lo))
            weights.append(0.5 * (hi - lo) * w)
        mesh = np.meshgrid(*grids, indexing="ij")
        pts = np.stack([g.ravel() for g in mesh], axis=-1)
        wmesh = np.meshgrid(*weights, indexing="ij")
        wts = np.prod(np.stack([g.ravel() for g in wmesh], axis=-1), axis=-1)
        vals = np.asarray(self._density_fn(phi, pts), dtype=float).ravel()
        return float(np.dot(wts, vals))

    def sample_next(self, phi, rng) -> np.ndarray:
        if self._sampler_fn is None:
            raise DomainError("this density kernel has no sampler attached")
        phi = self.check_state(phi)
        nxt = np.atleast_1d(np.asarray(self._sampler_fn(phi, rng), dtype=float))
        return self.check_state(nxt)


def box_mass(kernel: DelayKernel, phi, box: Box) -> float:
    return kernel.box_mass(phi, box)


def density(kernel: DelayKernel, phi, ell) -> float:
    return kernel.density(phi, ell)


def sample_path(kernel: DelayKernel, phi0, steps: int, seed: int) -> np.ndarray:
    return kernel.sample_path(phi0, steps, seed)
