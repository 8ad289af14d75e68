"""Image and velocity containers and their multilinear interpolation."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .grid import Grid, cell_centers, interp_stencil

# tolerance when checking t in [0, 1]
_T_EPS = 1e-12


@dataclass
class ImageField:
    """Scalar samples at the cell centers of ``grid``."""

    grid: Grid
    data: np.ndarray

    def __post_init__(self):
        self.data = np.ascontiguousarray(self.data, dtype=np.float64).ravel(order="F")
        if self.data.size != self.grid.ncells:
            raise ValueError(f"image has {self.data.size} samples, grid has {self.grid.ncells} cells")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("image contains non-finite values")

    def as_array(self) -> np.ndarray:
        return self.grid.reshape(self.data)


@dataclass
class VelocityField:
    """Velocity samples of shape ``(d, nt + 1, ncells)``.

    ``nt = 0`` is a stationary field with a single time node; otherwise the
    nodes sit at ``l / nt`` for ``l = 0..nt``.
    """

    grid: Grid
    nt: int
    data: np.ndarray

    def __post_init__(self):
        self.nt = int(self.nt)
        if self.nt < 0:
            raise ValueError(f"nt must be >= 0, got {self.nt}")
        shape = (self.grid.d, self.nt + 1, self.grid.ncells)
        self.data = np.asarray(self.data, dtype=np.float64).reshape(shape)

    @classmethod
    def zeros(cls, grid: Grid, nt: int = 0) -> "VelocityField":
        return cls(grid, nt, np.zeros((grid.d, nt + 1, grid.ncells)))

    @classmethod
    def from_function(cls, grid: Grid, fn, nt: int = 0) -> "VelocityField":
        """Sample ``fn(x, t) -> (npts, d)`` at the centers and time nodes."""
        x = cell_centers(grid)
        times = [0.0] if nt == 0 else np.linspace(0.0, 1.0, nt + 1)
        data = np.stack([np.asarray(fn(x, t), dtype=float).T for t in times], axis=1)
        return cls(grid, nt, data)

    @property
    def stationary(self) -> bool:
        return self.nt == 0

    @property
    def n(self) -> int:
        return self.data.size

    @property
    def vector(self) -> np.ndarray:
        return self.data.ravel()

    def with_vector(self, vec: np.ndarray) -> "VelocityField":
        return VelocityField(self.grid, self.nt, np.array(vec, dtype=float))


def interp_image(f: ImageField, points: np.ndarray, want_gradient: bool = False):
    """Evaluate the zero-extended multilinear interpolant of ``f``.

    Returns values of shape ``(n,)`` and, if requested, the gradient of the
    interpolant with shape ``(n, d)``.
    """
    idx, w, dw = interp_stencil(f.grid, points, "zero", want_gradient)
    vals = f.data[idx]
    u = np.einsum("pc,pc->p", w, vals)
    if not want_gradient:
        return u
    return u, np.einsum("pck,pc->pk", dw, vals)


def _time_weights(nt: int, t: float):
    if not (-_T_EPS <= t <= 1.0 + _T_EPS):
        raise ValueError(f"time {t} outside [0, 1]")
    if nt == 0:
        return [(0, 1.0)]
    u = min(max(t, 0.0), 1.0) * nt
    l = min(int(np.floor(u)), nt - 1)
    tau = u - l
    return [(l, 1.0 - tau), (l + 1, tau)]


def interp_velocity(v: VelocityField, points: np.ndarray, t: float = 0.0, want_derivatives: bool = False):
    """Interpolate ``v`` at ``points`` and time ``t``.

    Returns ``vals`` of shape ``(n, d)``. With ``want_derivatives`` also returns
    ``dvI``, a sparse ``(d * n) x v.n`` matrix (rows ordered component-major,
    ``c * n + p``), and ``dyI`` of shape ``(n, d, d)`` with
    ``dyI[p, c, k] = d vals[p, c] / d points[p, k]``.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    npts, d = points.shape
    tw = _time_weights(v.nt, t)
    idx, w, dw = interp_stencil(v.grid, points, "zero", want_derivatives)
    M = v.grid.ncells
    ntn = v.nt + 1

    vals = np.zeros((npts, d))
    dyI = np.zeros((npts, d, d)) if want_derivatives else None
    for l, wt in tw:
        if wt == 0.0 and not want_derivatives:
            continue
        for c in range(d):
            samples = v.data[c, l][idx]
            vals[:, c] += wt * np.einsum("pq,pq->p", w, samples)
            if want_derivatives:
                dyI[:, c, :] += wt * np.einsum("pqk,pq->pk", dw, samples)
    if not want_derivatives:
        return vals

    # one block of (2**d * len(tw)) entries per row
    cols = np.concatenate([idx + l * M for l, _ in tw], axis=1)
    wts = np.concatenate([wt * w for _, wt in tw], axis=1)
    per_row = cols.shape[1]
    indptr = np.arange(0, d * npts * per_row + 1, per_row, dtype=np.int64)
    all_cols = np.concatenate([cols + c * ntn * M for c in range(d)], axis=0).ravel()
    all_vals = np.tile(wts, (d, 1)).ravel()
    dvI = sp.csr_matrix((all_vals, all_cols, indptr), shape=(d * npts, v.n))
    dvI.sum_duplicates()
    dvI.eliminate_zeros()
    return vals, dvI, dyI
