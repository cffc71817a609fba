"""Initial-condition specifications for closed-loop runs and value predictions.

Only specs with finite second moment are representable: the stacked state is
a point mass or a Gaussian, the initial delay vector a point mass or uniform
on the delay box.  That is exactly what the cost predictions need in closed
form and what the simulator can sample.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import DomainError

__all__ = ["InitialSpec"]


@dataclass(frozen=True)
class InitialSpec:
    """Distribution of (xi_0, phi_0) = ((x_0, u_{-1}), initial delay vector)."""

    xi0_mean: np.ndarray
    xi0_cov: Optional[np.ndarray] = None  # None = point mass
    phi0: Optional[np.ndarray] = None  # None = uniform on the delay box

    def __post_init__(self):
        object.__setattr__(self, "xi0_mean", np.asarray(self.xi0_mean, dtype=float).ravel())
        if self.xi0_cov is not None:
            cov = np.atleast_2d(np.asarray(self.xi0_cov, dtype=float))
            d = self.xi0_mean.size
            if cov.shape != (d, d):
                raise DomainError(f"xi0 covariance must be {d}x{d}, got {cov.shape}")
            if np.abs(cov - cov.T).max() > 1e-10 * max(1.0, np.abs(cov).max()):
                raise DomainError("xi0 covariance must be symmetric")
            if np.linalg.eigvalsh(0.5 * (cov + cov.T)).min() < -1e-10:
                raise DomainError("xi0 covariance must be positive semidefinite")
            object.__setattr__(self, "xi0_cov", cov)
        if self.phi0 is not None:
            object.__setattr__(self, "phi0", np.asarray(self.phi0, dtype=float).ravel())

    @staticmethod
    def point(x0, u_prev, phi0=None) -> "InitialSpec":
        xi0 = np.concatenate([np.asarray(x0, dtype=float).ravel(), np.asarray(u_prev, dtype=float).ravel()])
        return InitialSpec(xi0_mean=xi0, phi0=None if phi0 is None else np.asarray(phi0, dtype=float))

    def sample_xi0(self, rng: np.random.Generator) -> np.ndarray:
        if self.xi0_cov is None:
            return self.xi0_mean.copy()
        return rng.multivariate_normal(self.xi0_mean, self.xi0_cov, method="svd")

    def sample_phi0(self, kernel, rng: np.random.Generator) -> np.ndarray:
        if self.phi0 is not None:
            return kernel.check_state(self.phi0)
        lo, hi = kernel.tau_min, kernel.tau_max
        return lo + (hi - lo) * rng.random(kernel.p)

    def phi0_box_probs(self, grid) -> np.ndarray:
        """Probability of phi_0 landing in each grid box (point mass or uniform)."""
        probs = np.zeros(grid.n_boxes)
        if self.phi0 is not None:
            probs[grid.locate(self.phi0)] = 1.0
            return probs
        vols = grid.volumes
        total = vols.sum()
        if total <= 0:
            # Degenerate zero-width delay box: all mass on the single box.
            probs[0] = 1.0
            return probs
        return vols / total

    def xi0_second_moment(self) -> np.ndarray:
        """E[xi0 xi0'] = cov + mean mean'."""
        mm = np.outer(self.xi0_mean, self.xi0_mean)
        return mm if self.xi0_cov is None else self.xi0_cov + mm
