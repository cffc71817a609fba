"""Matrix-exponential utilities: batched evaluation and Van Loan block integrals.

Everything here reduces to `scipy.linalg.expm` (scaling-and-squaring with Pade
approximant); the eigendecomposition fast path is used only when it reproduces
the generator to tight tolerance, so results are exact up to expm accuracy.
"""
from __future__ import annotations

import numpy as np
import scipy.linalg as la

__all__ = ["ExpPropagator", "van_loan_gram", "augmented_generator"]


def augmented_generator(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Block generator [[A, B], [0, 0]] whose exponential carries e^{At} and its B-integral."""
    n, m = b.shape
    return np.block([[a, b], [np.zeros((m, n + m))]])


class ExpPropagator:
    """Evaluates e^{M*t} for many t at once.

    Uses a verified eigendecomposition when M is safely diagonalizable and
    falls back to stacked scipy expm otherwise, so arbitrary (possibly
    defective) generators stay correct.
    """

    def __init__(self, m: np.ndarray, rtol: float = 1e-13):
        self.m = np.asarray(m, dtype=float)
        if self.m.ndim != 2 or self.m.shape[0] != self.m.shape[1]:
            raise ValueError("generator must be square")
        self._eig = None
        try:
            w, v = np.linalg.eig(self.m)
            vinv = np.linalg.inv(v)
            recon = (v * w) @ vinv
            scale = max(1.0, np.abs(self.m).max())
            cond = np.linalg.cond(v)
            if np.abs(recon - self.m).max() <= rtol * scale * 10 and cond < 1e7:
                self._eig = (w, v, vinv)
        except np.linalg.LinAlgError:
            self._eig = None

    def at(self, t) -> np.ndarray:
        """e^{M*t}; t may be a scalar or an array of any shape."""
        t = np.asarray(t, dtype=float)
        scalar = t.ndim == 0
        tt = np.atleast_1d(t).ravel()
        if self._eig is not None:
            w, v, vinv = self._eig
            ew = np.exp(np.multiply.outer(tt, w))
            out = np.einsum("ij,tj,jk->tik", v, ew, vinv)
            out = np.ascontiguousarray(out.real)
        else:
            out = la.expm(self.m[None, :, :] * tt[:, None, None])
        out = out.reshape(t.shape + self.m.shape) if not scalar else out[0]
        return out


def van_loan_gram(m: np.ndarray, w: np.ndarray, t) -> np.ndarray:
    """Gram integral int_0^t e^{M's} W e^{Ms} ds from one block exponential.

    Builds Z = [[-M', W], [0, M]]; the (2,2) block of e^{Zt} is e^{Mt} and the
    integral is e^{Mt}' @ (1,2)-block.  Accepts scalar or array t (batched).
    """
    d = m.shape[0]
    z = np.block([[-m.T, w], [np.zeros((d, d)), m]])
    e = ExpPropagator(z).at(t)
    f2 = e[..., d:, d:]
    g1 = e[..., :d, d:]
    return np.swapaxes(f2, -1, -2) @ g1
