"""Lagrangian solvers for the transport and continuity equations.

Both solvers reduce the PDE to characteristics started at the cell centers of
the image grid. Transport follows them backwards and interpolates the
template; continuity pushes each cell's mass forwards as a particle and
spreads it over the cells its kernel overlaps.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .characteristics import flow
from .field import ImageField, VelocityField, interp_image
from .grid import Grid, cell_centers

KERNELS = ("box", "hat")
DEFAULT_KERNEL = "hat"


def _support_radius(delta: float, shape: str) -> float:
    return 0.5 * delta if shape == "box" else delta


def kernel_cdf(x, yj, delta, shape: str = "hat"):
    """Fraction of a particle's mass at ``yj`` lying below ``x``.

    ``shape="hat"`` is the normalized triangle of half-width ``delta``;
    ``shape="box"`` a uniform cloud of width ``delta``, whose overlap with a
    cell of width ``delta`` is the linear hat in the particle offset.
    """
    if np.any(np.asarray(delta) <= 0):
        raise ValueError(f"kernel width must be positive, got {delta}")
    s = (np.asarray(x, dtype=float) - yj) / delta
    if shape == "box":
        return np.clip(s + 0.5, 0.0, 1.0)
    if shape != "hat":
        raise ValueError(f"unknown kernel shape {shape!r}")
    sc = np.clip(s, -1.0, 1.0)
    return np.where(sc <= 0.0, 0.5 * (1.0 + sc) ** 2, 1.0 - 0.5 * (1.0 - sc) ** 2)


def kernel_pdf(x, yj, delta, shape: str = "hat"):
    """Derivative of :func:`kernel_cdf` with respect to ``x``.

    The box density uses the half-open support ``[-1/2, 1/2)``, so weights of
    particles sitting exactly on a kink get their left derivative, as the
    image-gradient stencil does on cell faces.
    """
    s = (np.asarray(x, dtype=float) - yj) / delta
    if shape == "box":
        return np.where((s >= -0.5) & (s < 0.5), 1.0 / delta, 0.0)
    return np.maximum(1.0 - np.abs(s), 0.0) / delta


@dataclass
class PushForward:
    """Mass-distribution matrix ``F`` (``ncells x n_p``).

    ``exterior[j]`` is the share of particle ``j`` that landed outside the
    grid, so every column sum plus its exterior share is one.
    """

    F: sp.csr_matrix
    delta: tuple[float, ...]
    exterior: np.ndarray
    shape: str = DEFAULT_KERNEL

    @property
    def exterior_mass(self) -> float:
        return float(self.exterior.sum())


def _axis_weights(yk, lo, h, m, delta, shape, want_derivative):
    r = _support_radius(delta, shape)
    K = int(np.floor(2.0 * r / h)) + 2
    first = np.floor((yk - r - lo) / h).astype(np.int64)
    faces = lo + (first[:, None] + np.arange(K + 1)) * h
    cdf = kernel_cdf(faces, yk[:, None], delta, shape)
    w = np.diff(cdf, axis=1)
    dw = None
    if want_derivative:
        pdf = kernel_pdf(faces, yk[:, None], delta, shape)
        dw = -np.diff(pdf, axis=1)
    cells = first[:, None] + np.arange(K)
    valid = (cells >= 0) & (cells < m)
    return np.where(valid, cells, 0), w, dw, valid


def _kernel_entries(y, g: Grid, delta, shape, want_derivative):
    """Tensor-product cell indices, weights and weight gradients."""
    npts, d = y.shape
    per_axis = [
        _axis_weights(y[:, a], g.lo[a], g.h[a], g.m[a], delta[a], shape, want_derivative)
        for a in range(d)
    ]
    idx = np.zeros((npts, 1), dtype=np.int64)
    w = np.ones((npts, 1))
    valid = np.ones((npts, 1), dtype=bool)
    grads = [np.ones((npts, 1)) for _ in range(d)] if want_derivative else None
    for a, (cells, wa, dwa, va) in enumerate(per_axis):
        idx = (idx[:, :, None] + g.strides[a] * cells[:, None, :]).reshape(npts, -1)
        if want_derivative:
            grads = [
                (gk[:, :, None] * (dwa if k == a else wa)[:, None, :]).reshape(npts, -1)
                for k, gk in enumerate(grads)
            ]
        w = (w[:, :, None] * wa[:, None, :]).reshape(npts, -1)
        valid = (valid[:, :, None] & va[:, None, :]).reshape(npts, -1)
    return idx, w, grads, valid


def _resolve_delta(g: Grid, delta) -> tuple[float, ...]:
    if delta is None:
        return tuple(float(h) for h in g.h)
    arr = np.broadcast_to(np.asarray(delta, dtype=float), (g.d,))
    if np.any(arr <= 0):
        raise ValueError(f"kernel width must be positive, got {delta}")
    return tuple(float(x) for x in arr)


def build_pushforward(
    y: np.ndarray,
    g: Grid,
    delta=None,
    shape: str = DEFAULT_KERNEL,
    mass: np.ndarray | None = None,
):
    """Push-forward matrix for particles ending at ``y`` (``n_p x d``).

    ``delta`` defaults to the cell size per axis; a scalar applies to every
    axis. When ``mass`` is given, the sparse derivative of ``F @ mass`` with
    respect to the flattened end points (component-major) is returned too.
    """
    if shape not in KERNELS:
        raise ValueError(f"unknown kernel shape {shape!r}")
    y = np.atleast_2d(np.asarray(y, dtype=float))
    if not np.all(np.isfinite(y)):
        raise ValueError("particle positions must be finite")
    npts = y.shape[0]
    delta = _resolve_delta(g, delta)
    want_derivative = mass is not None
    idx, w, grads, valid = _kernel_entries(y, g, delta, shape, want_derivative)

    exterior = np.where(valid, 0.0, w).sum(axis=1)
    keep = valid & (w != 0.0)
    cols = np.broadcast_to(np.arange(npts)[:, None], idx.shape)
    F = sp.csr_matrix((w[keep], (idx[keep], cols[keep])), shape=(g.ncells, npts))
    pf = PushForward(F, delta, exterior, shape)
    if not want_derivative:
        return pf

    mass = np.asarray(mass, dtype=float)
    rows, cc, vals = [], [], []
    inside = valid
    for k, gk in enumerate(grads):
        nz = inside & (gk != 0.0)
        rows.append(idx[nz])
        cc.append(k * npts + cols[nz])
        vals.append((gk * mass[:, None])[nz])
    dFm = sp.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cc))),
        shape=(g.ncells, g.d * npts),
    )
    return pf, dFm


def advect(T: ImageField, v: VelocityField, N: int = 4, want_derivative: bool = False, method: str = "rk4"):
    """Transport ``T`` by ``v`` preserving intensities.

    Returns ``(u1, dvu1)``; ``dvu1`` is ``ncells x v.n`` or ``None``.
    """
    g = T.grid
    res = flow(v, cell_centers(g), 1.0, 0.0, N, method, want_derivative)
    if not want_derivative:
        return interp_image(T, res.y), None
    u1, grad = interp_image(T, res.y, want_gradient=True)
    M = g.ncells
    p = np.arange(M)
    G = sp.csr_matrix(
        (grad.T.ravel(), (np.tile(p, g.d), np.concatenate([k * M + p for k in range(g.d)]))),
        shape=(M, g.d * M),
    )
    return u1, (G @ res.dvy).tocsr()


def transport_mass(
    T: ImageField,
    v: VelocityField,
    N: int = 4,
    delta=None,
    want_derivative: bool = False,
    shape: str = DEFAULT_KERNEL,
    method: str = "rk4",
):
    """Transport ``T`` by ``v`` preserving mass (particle-in-cell).

    Returns ``(u1, dvu1)``; ``dvu1`` is ``ncells x v.n`` or ``None``.
    """
    g = T.grid
    res = flow(v, cell_centers(g), 0.0, 1.0, N, method, want_derivative)
    if not want_derivative:
        pf = build_pushforward(res.y, g, delta, shape)
        return pf.F @ T.data, None
    pf, dFT = build_pushforward(res.y, g, delta, shape, mass=T.data)
    return pf.F @ T.data, (dFT @ res.dvy).tocsr()
