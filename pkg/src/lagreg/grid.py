"""Regular cell-centered grids on axis-aligned boxes.

All flat arrays over a grid use lexicographic ordering with the first axis
running fastest, i.e. a field stored as an ndarray of shape ``m`` is
flattened with ``order="F"``.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp


@dataclass(frozen=True)
class Grid:
    """Box ``omega = (lo_1, hi_1, ..., lo_d, hi_d)`` split into ``m`` cells."""

    omega: tuple[float, ...]
    m: tuple[int, ...]

    def __post_init__(self):
        omega = tuple(float(w) for w in self.omega)
        m = tuple(int(k) for k in np.atleast_1d(self.m))
        object.__setattr__(self, "omega", omega)
        object.__setattr__(self, "m", m)
        if len(omega) != 2 * len(m):
            raise ValueError(f"omega has {len(omega)} bounds, expected {2 * len(m)}")
        if not 1 <= len(m) <= 3:
            raise ValueError(f"dimension must be 1, 2 or 3, got {len(m)}")
        if any(k < 1 for k in m):
            raise ValueError(f"cell counts must be positive, got {m}")
        if any(hi <= lo for lo, hi in zip(omega[::2], omega[1::2])):
            raise ValueError(f"empty interval in omega={omega}")

    @property
    def d(self) -> int:
        return len(self.m)

    @property
    def lo(self) -> np.ndarray:
        return np.array(self.omega[::2])

    @property
    def hi(self) -> np.ndarray:
        return np.array(self.omega[1::2])

    @property
    def h(self) -> np.ndarray:
        return (self.hi - self.lo) / np.array(self.m)

    @property
    def cellvol(self) -> float:
        return float(np.prod(self.h))

    @property
    def ncells(self) -> int:
        return int(np.prod(self.m))

    @property
    def strides(self) -> np.ndarray:
        return np.concatenate([[1], np.cumprod(self.m[:-1])]).astype(np.int64)

    def centers_1d(self, axis: int) -> np.ndarray:
        return self.lo[axis] + (np.arange(self.m[axis]) + 0.5) * self.h[axis]

    def coarsen(self) -> "Grid":
        if any(k % 2 for k in self.m):
            raise ValueError(f"cannot coarsen grid with odd cell counts {self.m}")
        return Grid(self.omega, tuple(k // 2 for k in self.m))

    def refine(self) -> "Grid":
        return Grid(self.omega, tuple(2 * k for k in self.m))

    def reshape(self, data: np.ndarray) -> np.ndarray:
        """View a flat per-cell array as an ndarray of shape ``m``."""
        return np.reshape(data, self.m, order="F")

    def flatten(self, arr: np.ndarray) -> np.ndarray:
        return np.ravel(arr, order="F")

    @cached_property
    def _centers(self) -> np.ndarray:
        axes = np.meshgrid(*[self.centers_1d(i) for i in range(self.d)], indexing="ij")
        pts = np.stack([a.ravel(order="F") for a in axes], axis=1)
        pts.setflags(write=False)
        return pts


def cell_centers(g: Grid) -> np.ndarray:
    """Cell-centered points, shape ``(ncells, d)``, first axis fastest."""
    return g._centers.copy()


def interp_stencil(g: Grid, points: np.ndarray, boundary: str = "zero", want_gradient: bool = False):
    """Multilinear interpolation weights of cell-center samples.

    Returns ``(idx, w, dw)`` with ``idx`` and ``w`` of shape ``(n, 2**d)`` and
    ``dw`` of shape ``(n, 2**d, d)`` (or ``None``). With ``boundary="zero"``
    the samples are extended by zeros outside the grid: neighbors outside get
    weight zero (their ``idx`` is set to 0). With ``boundary="clamp"`` the
    query is clamped to the hull of the cell centers.

    On a cell face the stencil of the lower cell is used, which fixes the
    one-sided gradient there.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    n, d = points.shape
    if d != g.d:
        raise ValueError(f"points have dimension {d}, grid has {g.d}")
    h, lo, m = g.h, g.lo, np.array(g.m)
    s = (points - lo) / h - 0.5
    # snap rounding noise so queries at centers reproduce samples exactly
    r = np.rint(s)
    s = np.where(np.abs(s - r) <= 8 * np.finfo(float).eps * np.maximum(1.0, np.abs(s)), r, s)
    if boundary == "clamp":
        s = np.clip(s, 0.0, m - 1.0)
    elif boundary != "zero":
        raise ValueError(f"unknown boundary mode {boundary!r}")
    j = np.ceil(s).astype(np.int64) - 1
    frac = s - j
    # per-axis weights for the lower (0) and upper (1) neighbor
    wax = np.stack([1.0 - frac, frac], axis=-1)  # (n, d, 2)
    dax = np.stack([-1.0 / h * np.ones_like(frac), 1.0 / h * np.ones_like(frac)], axis=-1)

    ncorner = 2**d
    idx = np.zeros((n, ncorner), dtype=np.int64)
    w = np.ones((n, ncorner))
    dw = np.ones((n, ncorner, d)) if want_gradient else None
    strides = g.strides
    for c in range(ncorner):
        ok = np.ones(n, dtype=bool)
        for a in range(d):
            b = (c >> a) & 1
            ja = j[:, a] + b
            if boundary == "clamp":
                ja = np.clip(ja, 0, m[a] - 1)
            else:
                ok &= (ja >= 0) & (ja < m[a])
            idx[:, c] += ja * strides[a]
            w[:, c] *= wax[:, a, b]
            if want_gradient:
                for k in range(d):
                    dw[:, c, k] *= dax[:, a, b] if k == a else wax[:, a, b]
        if boundary == "zero":
            idx[~ok, c] = 0
            w[~ok, c] = 0.0
            if want_gradient:
                dw[~ok, c, :] = 0.0
    return idx, w, dw


def interp_matrix(g: Grid, points: np.ndarray, boundary: str = "zero") -> sp.csr_matrix:
    """Sparse matrix mapping cell-center samples to values at ``points``."""
    idx, w, _ = interp_stencil(g, points, boundary)
    n = idx.shape[0]
    rows = np.repeat(np.arange(n), idx.shape[1])
    Q = sp.csr_matrix((w.ravel(), (rows, idx.ravel())), shape=(n, g.ncells))
    Q.eliminate_zeros()
    return Q


def restrict_array(data: np.ndarray, g: Grid) -> np.ndarray:
    """Average each block of ``2**d`` fine cells."""
    coarse = g.coarsen()
    arr = g.reshape(np.asarray(data, dtype=float))
    split = []
    for k in coarse.m:
        split += [k, 2]
    arr = arr.reshape(split, order="C")
    arr = arr.mean(axis=tuple(range(1, 2 * g.d, 2)))
    return coarse.flatten(arr)


def restrict_image(f):
    """Restrict an image field to the coarsened grid by averaging children."""
    return dataclasses.replace(f, grid=f.grid.coarsen(), data=restrict_array(f.data, f.grid))


def prolong_array(data: np.ndarray, coarse: Grid, fine: Grid) -> np.ndarray:
    """Multilinear interpolation (clamped at the hull) onto fine centers."""
    P = interp_matrix(coarse, cell_centers(fine), boundary="clamp")
    return P @ np.asarray(data, dtype=float)


def prolong_velocity(v, fine: Grid):
    """Interpolate every component and time node of ``v`` onto ``fine``."""
    if fine != v.grid.refine():
        raise ValueError(f"{fine} is not the refinement of {v.grid}")
    P = interp_matrix(v.grid, cell_centers(fine), boundary="clamp")
    d, ntn, M = v.data.shape
    data = (P @ v.data.reshape(d * ntn, M).T).T.reshape(d, ntn, fine.ncells)
    return dataclasses.replace(v, grid=fine, data=data)
