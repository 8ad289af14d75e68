"""Synthetic benchmark pairs and registration quality measures."""
from __future__ import annotations

import numpy as np

from .field import ImageField
from .grid import Grid, cell_centers, prolong_array, restrict_array
from .objective import RegistrationProblem, evaluate

__all__ = [
    "RegistrationProblem",
    "make_cshape",
    "make_gaussian_mp",
    "jacobian_field",
    "dice",
    "transform_labels",
    "threshold_mask",
    "distance_reduction",
]

# C-shape geometry on (0, 1)^2, centered at (0.5, 0.5)
DISC_RADIUS = 0.25
C_OUTER = 0.3
C_INNER = 0.15
C_GAP = np.pi / 3  # opening angle, facing +x1


def _smooth(mask: np.ndarray, g: Grid) -> np.ndarray:
    """One restriction-prolongation pass over a binary mask."""
    return np.clip(prolong_array(restrict_array(mask, g), g.coarsen(), g), 0.0, 1.0)


def make_cshape(m: int = 128, intensity: float = 1.0):
    """Disc template and C-shaped reference on the unit square.

    Both are binary masks smoothed once and scaled to ``[0, intensity]``;
    ``intensity=255`` gives the 8-bit gray-value range the benchmark weights
    are quoted for.
    """
    if m < 32 or m % 2:
        raise ValueError(f"C-shape needs an even m >= 32, got {m}")
    g = Grid((0.0, 1.0, 0.0, 1.0), (m, m))
    x = cell_centers(g) - 0.5
    r = np.hypot(x[:, 0], x[:, 1])
    theta = np.abs(np.arctan2(x[:, 1], x[:, 0]))
    disc = (r <= DISC_RADIUS).astype(float)
    cshape = ((r <= C_OUTER) & (r >= C_INNER) & (theta >= C_GAP / 2)).astype(float)
    return ImageField(g, intensity * _smooth(disc, g)), ImageField(g, intensity * _smooth(cshape, g))


def _ring(x: np.ndarray, scale: float) -> np.ndarray:
    """Difference of two centered Gaussians; mass 2*pi*(1.5^2 - 0.75^2)."""
    r2 = np.sum(x**2, axis=1) / scale**2
    return (np.exp(-r2 / (2 * 1.5**2)) - np.exp(-r2 / (2 * 0.75**2))) / scale**2


def make_gaussian_mp(m: int = 256, contraction: float = 0.75, intensity: float = 1.0):
    """Equal-mass template/reference pair on ``(-5, 5)^2``.

    The template peaks at ``intensity``. The reference is the template
    contracted towards the origin by ``contraction``, rescaled so both
    discrete masses agree exactly.
    """
    if m < 32:
        raise ValueError(f"Gaussian problem needs m >= 32, got {m}")
    g = Grid((-5.0, 5.0, -5.0, 5.0), (m, m))
    x = cell_centers(g)
    T = _ring(x, 1.0)
    R = _ring(x, contraction)
    scale = intensity / T.max()
    T, R = scale * T, scale * R
    R *= T.sum() / R.sum()
    return ImageField(g, T), ImageField(g, R)


def jacobian_field(y: np.ndarray, g: Grid, mask=None):
    """Determinant of ``grad y`` per cell with its extrema over ``mask``.

    Central differences inside, one-sided in boundary cells.
    """
    y = np.asarray(y, dtype=float)
    if y.shape != (g.ncells, g.d):
        raise ValueError(f"end points of shape {y.shape} do not match grid with {g.ncells} cells")
    comps = [g.reshape(y[:, c]) for c in range(g.d)]
    jac = np.empty(tuple(g.m) + (g.d, g.d))
    for c, yc in enumerate(comps):
        grads = np.gradient(yc, *g.h, edge_order=1) if g.d > 1 else [np.gradient(yc, g.h[0], edge_order=1)]
        for k in range(g.d):
            jac[..., c, k] = grads[k]
    det = g.flatten(np.linalg.det(jac))
    sel = det if mask is None else det[np.asarray(mask, dtype=bool).ravel()]
    return det, float(sel.min()), float(sel.max())


def transform_labels(labels: ImageField, y: np.ndarray) -> ImageField:
    """Nearest-neighbor resampling of a label map at the points ``y``."""
    g = labels.grid
    idx = np.floor((np.asarray(y) - g.lo) / g.h).astype(np.int64)
    inside = np.all((idx >= 0) & (idx < np.array(g.m)), axis=1)
    flat = np.sum(np.clip(idx, 0, np.array(g.m) - 1) * g.strides, axis=1)
    out = np.where(inside, labels.data[flat], 0.0)
    return ImageField(g, out)


def threshold_mask(f: ImageField, level: float) -> np.ndarray:
    return f.data >= level


def dice(A: ImageField, B: ImageField, label=None) -> float:
    """Dice overlap of ``A == label`` and ``B == label`` (nonzero if ``None``)."""
    if A.grid != B.grid:
        raise ValueError("label maps live on different grids")
    a = A.data != 0 if label is None else A.data == label
    b = B.data != 0 if label is None else B.data == label
    total = int(a.sum()) + int(b.sum())
    if total == 0:
        return 1.0
    return 2.0 * int(np.sum(a & b)) / total


def distance_reduction(problem: RegistrationProblem, v) -> float:
    """Percentage by which ``v`` lowers the distance relative to ``v = 0``."""
    D0 = evaluate(problem.velocity(), problem, want_gradient=False).D
    if D0 == 0.0:
        raise ZeroDivisionError("initial distance is zero")
    D = evaluate(v, problem, want_gradient=False).D
    return 100.0 * (1.0 - D / D0)
