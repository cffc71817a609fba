"""Partition of the delay box into sub-boxes, transition weights, and variation bounds.

The delay box M is split uniformly into N = r^p half-open boxes (the last
slice of each axis is closed so the union is exactly M).  The grid carries

* the N x N weight table with entry (j, i) = w_i(c_j), the mass the kernel
  moves from center c_j into box i -- each row is a probability vector;
* sampled bounds kappa on how much the weighted system stacks can deviate
  from their box-center values inside each box.  These are estimated, not
  certified: a deterministic low-discrepancy sample plus inward-nudged
  corners, inflated by a safety factor, with a validation resample available
  to audit the miss rate.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np
from scipy.stats import qmc

from .errors import DomainError, ResourceLimitError
from .kernels import Box, DelayKernel

__all__ = [
    "GridModel",
    "KappaEstimate",
    "build_grid",
    "estimate_kappa_stab",
    "estimate_kappa_det",
    "validate_kappa",
    "refine",
    "grid_summary",
]

DEFAULT_BOX_CAP = 4096
_CORNER_NUDGE = 1e-9


class KappaEstimate(NamedTuple):
    values: np.ndarray
    argmax_points: np.ndarray


@dataclass
class GridModel:
    """Finite scaffold on which the coupled Riccati recursion and the LMIs live."""

    kernel: DelayKernel
    splits: np.ndarray
    boxes: list
    centers: np.ndarray
    weight_table: np.ndarray
    kappa_stab: Optional[np.ndarray] = None
    kappa_det_a: Optional[np.ndarray] = None
    kappa_det_w: Optional[np.ndarray] = None
    kappa_argmax: dict = field(default_factory=dict, repr=False)

    @property
    def p(self) -> int:
        return self.kernel.p

    @property
    def r(self) -> int:
        return self.splits.size - 1

    @property
    def n_boxes(self) -> int:
        return len(self.boxes)

    @property
    def volumes(self) -> np.ndarray:
        return np.asarray([b.volume for b in self.boxes])

    def locate(self, phi) -> int:
        """Index of the unique box containing phi (half-open faces, last closed)."""
        phi = self.kernel.check_state(phi)
        r = self.r
        idx = 0
        for k in range(self.p):
            j = int(np.searchsorted(self.splits, phi[k], side="right")) - 1
            j = min(max(j, 0), r - 1)
            idx = idx * r + j
        return idx

    def weights_at(self, phi) -> np.ndarray:
        """Row vector (w_1(phi), ..., w_N(phi)) of box masses from phi."""
        return np.asarray([self.kernel.box_mass(phi, b) for b in self.boxes])


def _make_boxes(kernel: DelayKernel, r: int):
    splits = np.linspace(kernel.tau_min, kernel.tau_max, r + 1)
    boxes = []
    centers = []
    for multi in np.ndindex(*([r] * kernel.p)):
        lo = splits[np.asarray(multi)]
        hi = splits[np.asarray(multi) + 1]
        right_closed = np.asarray(multi) == r - 1
        box = Box(lo, hi, right_closed)
        boxes.append(box)
        centers.append(box.center)
    return splits, boxes, np.asarray(centers)


def build_grid(kernel: DelayKernel, splits_per_axis: int, max_boxes: int = DEFAULT_BOX_CAP) -> GridModel:
    """Uniform r-per-axis partition with the full center-to-box weight table."""
    r = int(splits_per_axis)
    if r < 1:
        raise DomainError("splits_per_axis must be >= 1")
    n = r**kernel.p
    if n > max_boxes:
        raise ResourceLimitError(f"grid would have {n} boxes, exceeding the cap of {max_boxes}")
    splits, boxes, centers = _make_boxes(kernel, r)
    table = np.empty((n, n))
    for j in range(n):
        table[j] = [kernel.box_mass(centers[j], b) for b in boxes]
    return GridModel(kernel=kernel, splits=splits, boxes=boxes, centers=centers, weight_table=table)


def _box_sample_points(box: Box, count: int, extra: np.ndarray = None) -> np.ndarray:
    """Deterministic probe points: Halton sequence, inward-nudged corners, center.

    Corners are pulled inside by a relative nudge so probes respect the
    half-open faces (the a.e. bound never needs the face itself).
    """
    p = box.p
    width = box.upper - box.lower
    halton = qmc.Halton(d=p, scramble=False)
    halton.fast_forward(1)  # skip the all-zero point
    pts = [box.lower + halton.random(count) * width]
    nudge = _CORNER_NUDGE * np.where(width > 0, width, 1.0)
    for corner in np.ndindex(*([2] * p)):
        c = np.where(np.asarray(corner) == 0, box.lower + nudge, box.upper - nudge)
        pts.append(np.clip(c, box.lower, box.upper)[None, :])
    pts.append(box.center[None, :])
    if extra is not None:
        pts.append(extra)
    return np.vstack(pts)


def _stab_stack(maps, grid: GridModel, phi) -> np.ndarray:
    """Stacked matrix [sqrt(w_j(phi)) * [A(phi) B(phi)]]_j used by the design bound."""
    ab = np.hstack([maps.a_of(phi), maps.b_of(phi)])
    w = np.sqrt(np.clip(grid.weights_at(phi), 0.0, None))
    return (w[:, None, None] * ab[None, :, :]).reshape(-1, ab.shape[1])


def estimate_kappa_stab(maps, grid: GridModel, samples_per_box: int = 32, safety: float = 1.1) -> KappaEstimate:
    """Per-box bound on the deviation of the weighted [A B] stack from its center value.

    kappa_i = safety * max over probe points of the spectral-norm deviation;
    the maximizing probe is kept for diagnostics.  Zero is legal (constant
    maps and weights).  The result is stored on the grid.
    """
    if samples_per_box < 8:
        raise DomainError("samples_per_box must be >= 8")
    if safety < 1.0:
        raise DomainError("safety factor must be >= 1")
    n = grid.n_boxes
    values = np.zeros(n)
    argmax = np.array(grid.centers, copy=True)
    for i, box in enumerate(grid.boxes):
        ref = _stab_stack(maps, grid, grid.centers[i])
        best = 0.0
        for phi in _box_sample_points(box, samples_per_box):
            dev = np.linalg.norm(_stab_stack(maps, grid, phi) - ref, 2)
            if dev > best:
                best = dev
                argmax[i] = phi
        values[i] = safety * best
    grid.kappa_stab = values
    grid.kappa_argmax["stab"] = argmax
    return KappaEstimate(values, argmax)


def _det_stack(maps, phi) -> np.ndarray:
    return np.vstack([maps.abar_of(phi), maps.m_of(phi)])


def estimate_kappa_det(maps, grid: GridModel, samples_per_box: int = 32, safety: float = 1.1):
    """Per-box deviation bounds for the observer-side data.

    kappa_a bounds the [Abar; M] stack (M plays the output-matrix slot), and
    kappa_w bounds the Euclidean deviation of the sqrt-weight row, whose
    Kronecker-stacked form has exactly that spectral norm.
    """
    if samples_per_box < 8:
        raise DomainError("samples_per_box must be >= 8")
    if safety < 1.0:
        raise DomainError("safety factor must be >= 1")
    n = grid.n_boxes
    val_a = np.zeros(n)
    val_w = np.zeros(n)
    arg_a = np.array(grid.centers, copy=True)
    arg_w = np.array(grid.centers, copy=True)
    for i, box in enumerate(grid.boxes):
        ref = _det_stack(maps, grid.centers[i])
        ref_w = np.sqrt(np.clip(grid.weight_table[i], 0.0, None))
        best_a = best_w = 0.0
        for phi in _box_sample_points(box, samples_per_box):
            dev_a = np.linalg.norm(_det_stack(maps, phi) - ref, 2)
            w = np.sqrt(np.clip(grid.weights_at(phi), 0.0, None))
            dev_w = float(np.linalg.norm(w - ref_w))
            if dev_a > best_a:
                best_a, arg_a[i] = dev_a, phi
            if dev_w > best_w:
                best_w, arg_w[i] = dev_w, phi
        val_a[i] = safety * best_a
        val_w[i] = safety * best_w
    grid.kappa_det_a = val_a
    grid.kappa_det_w = val_w
    grid.kappa_argmax["det_a"] = arg_a
    grid.kappa_argmax["det_w"] = arg_w
    return KappaEstimate(val_a, arg_a), KappaEstimate(val_w, arg_w)


def validate_kappa(maps, grid: GridModel, draws_per_box: int = 256, seed: int = 0) -> dict:
    """Audits the sampled kappa bounds on a fresh random sample.

    Returns per-box violation fractions for every bound present on the grid;
    violations are reported, never clipped into the bounds.
    """
    rng = np.random.default_rng(seed)
    report = {}
    kinds = [k for k, v in (("stab", grid.kappa_stab), ("det", grid.kappa_det_a)) if v is not None]
    frac_stab = np.zeros(grid.n_boxes)
    frac_det_a = np.zeros(grid.n_boxes)
    frac_det_w = np.zeros(grid.n_boxes)
    for i, box in enumerate(grid.boxes):
        width = box.upper - box.lower
        pts = box.lower + rng.random((draws_per_box, grid.p)) * width * (1 - 1e-12)
        if "stab" in kinds:
            ref = _stab_stack(maps, grid, grid.centers[i])
            devs = np.asarray([np.linalg.norm(_stab_stack(maps, grid, phi) - ref, 2) for phi in pts])
            frac_stab[i] = np.mean(devs > grid.kappa_stab[i] + 1e-15)
        if "det" in kinds:
            ref = _det_stack(maps, grid.centers[i])
            ref_w = np.sqrt(np.clip(grid.weight_table[i], 0.0, None))
            dev_a = np.asarray([np.linalg.norm(_det_stack(maps, phi) - ref, 2) for phi in pts])
            dev_w = np.asarray(
                [np.linalg.norm(np.sqrt(np.clip(grid.weights_at(phi), 0.0, None)) - ref_w) for phi in pts]
            )
            frac_det_a[i] = np.mean(dev_a > grid.kappa_det_a[i] + 1e-15)
            frac_det_w[i] = np.mean(dev_w > grid.kappa_det_w[i] + 1e-15)
    if "stab" in kinds:
        report["stab"] = frac_stab
    if "det" in kinds:
        report["det_a"] = frac_det_a
        report["det_w"] = frac_det_w
    return report


def refine(
    grid: GridModel,
    factor: int,
    maps=None,
    samples_per_box: int = 32,
    safety: float = 1.1,
    max_boxes: int = DEFAULT_BOX_CAP,
) -> GridModel:
    """Multiply the per-axis split count; weights always recomputed, kappas when maps given."""
    if factor < 2:
        raise DomainError("refinement factor must be >= 2")
    new_r = grid.r * factor
    if new_r**grid.p > max_boxes:
        raise ResourceLimitError(
            f"refined grid would have {new_r ** grid.p} boxes, exceeding the cap of {max_boxes}"
        )
    fine = build_grid(grid.kernel, new_r, max_boxes=max_boxes)
    if maps is not None:
        if grid.kappa_stab is not None:
            estimate_kappa_stab(maps, fine, samples_per_box, safety)
        if grid.kappa_det_a is not None:
            estimate_kappa_det(maps, fine, samples_per_box, safety)
    return fine


def parent_box_index(coarse: GridModel, fine: GridModel, fine_index: int) -> int:
    """Index of the coarse box containing the given fine box (nested uniform grids)."""
    return coarse.locate(fine.centers[fine_index])


def grid_summary(grid: GridModel) -> dict:
    """JSON-ready audit view: boxes, centers, row sums, kappa arrays."""
    out = {
        "p": grid.p,
        "splits_per_axis": grid.r,
        "n_boxes": grid.n_boxes,
        "tau_min": grid.kernel.tau_min,
        "tau_max": grid.kernel.tau_max,
        "splits": grid.splits.tolist(),
        "boxes": [{"lower": b.lower.tolist(), "upper": b.upper.tolist()} for b in grid.boxes],
        "centers": grid.centers.tolist(),
        "weight_row_sums": grid.weight_table.sum(axis=1).tolist(),
    }
    for name, arr in (
        ("kappa_stab", grid.kappa_stab),
        ("kappa_det_a", grid.kappa_det_a),
        ("kappa_det_w", grid.kappa_det_w),
    ):
        if arr is not None:
            out[name] = arr.tolist()
    return out


def save_grid_summary(grid: GridModel, path) -> None:
    with open(path, "w") as fh:
        json.dump(grid_summary(grid), fh, indent=2)
