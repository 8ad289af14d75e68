"""Characteristic curves of a velocity field and their velocity derivative."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from .field import VelocityField, interp_velocity


class FlowError(FloatingPointError):
    """A characteristic produced a non-finite position."""


@dataclass
class FlowResult:
    """End points ``y`` (``n_p x d``) and, on request, ``dvy``.

    ``dvy`` is a sparse ``(d * n_p) x n`` matrix with rows ordered
    component-major (``c * n_p + p``), matching :func:`interp_velocity`.
    """

    y: np.ndarray
    dvy: sp.csr_matrix | None = None


def _block_jacobian(dyI: np.ndarray) -> sp.csr_matrix:
    """Sparse ``(d n) x (d n)`` matrix holding one ``d x d`` block per point."""
    n, d, _ = dyI.shape
    p = np.arange(n)
    rows = np.concatenate([c * n + p for c in range(d) for k in range(d)])
    cols = np.concatenate([k * n + p for c in range(d) for k in range(d)])
    vals = np.concatenate([dyI[:, c, k] for c in range(d) for k in range(d)])
    return sp.csr_matrix((vals, (rows, cols)), shape=(d * n, d * n))


def _stage(v, y, t, want_derivative):
    if want_derivative:
        vals, dvI, dyI = interp_velocity(v, y, t, True)
        return vals, dvI, _block_jacobian(dyI)
    return interp_velocity(v, y, t), None, None


def _check_finite(y: np.ndarray, step: int):
    bad = ~np.all(np.isfinite(y), axis=1)
    if bad.any():
        raise FlowError(f"non-finite characteristic at point {int(np.flatnonzero(bad)[0])} in step {step}")


def _clip_time(t: float) -> float:
    return min(max(t, 0.0), 1.0)


def flow(
    v: VelocityField,
    x: np.ndarray,
    t0: float = 0.0,
    t1: float = 1.0,
    N: int = 4,
    method: str = "rk4",
    want_derivative: bool = False,
) -> FlowResult:
    """Integrate ``dy/dt = v(y, t)`` from ``t0`` to ``t1`` in ``N`` steps.

    The derivative of the end points with respect to the velocity
    coefficients is accumulated alongside the positions, so no per-step
    state is kept.
    """
    if N < 1:
        raise ValueError(f"number of time steps must be >= 1, got {N}")
    if method not in ("rk4", "euler"):
        raise ValueError(f"unknown method {method!r}")
    for t in (t0, t1):
        if not 0.0 <= t <= 1.0:
            raise ValueError(f"time {t} outside [0, 1]")
    y = np.array(x, dtype=float, copy=True)
    y = np.atleast_2d(y)
    npts, d = y.shape
    dt = (t1 - t0) / N
    dvy = sp.csr_matrix((d * npts, v.n)) if want_derivative else None

    for k in range(N):
        tk = _clip_time(t0 + k * dt)
        tk1 = _clip_time(t0 + (k + 1) * dt)
        if method == "euler":
            v1, dvI1, dyI1 = _stage(v, y, tk, want_derivative)
            if want_derivative:
                dvy = dvy + dt * (dvI1 + dyI1 @ dvy)
            y = y + dt * v1
            _check_finite(y, k)
            continue

        th = _clip_time(t0 + (k + 0.5) * dt)
        v1, dvI1, dyI1 = _stage(v, y, tk, want_derivative)
        y1 = y + 0.5 * dt * v1
        _check_finite(y1, k)
        v2, dvI2, dyI2 = _stage(v, y1, th, want_derivative)
        y2 = y + 0.5 * dt * v2
        _check_finite(y2, k)
        v3, dvI3, dyI3 = _stage(v, y2, th, want_derivative)
        y3 = y + dt * v3
        _check_finite(y3, k)
        v4, dvI4, dyI4 = _stage(v, y3, tk1, want_derivative)
        if want_derivative:
            D1 = dvI1 + dyI1 @ dvy
            D2 = dvI2 + dyI2 @ (dvy + (0.5 * dt) * D1)
            D3 = dvI3 + dyI3 @ (dvy + (0.5 * dt) * D2)
            D4 = dvI4 + dyI4 @ (dvy + dt * D3)
            dvy = dvy + (dt / 6.0) * (D1 + 2.0 * D2 + 2.0 * D3 + D4)
        y = y + (dt / 6.0) * (v1 + 2.0 * v2 + 2.0 * v3 + v4)
        _check_finite(y, k)
    return FlowResult(y, dvy.tocsr() if want_derivative else None)


def flow_inverse_check(v: VelocityField, x: np.ndarray, N: int, method: str = "rk4") -> float:
    """Max-norm error of following the flow forward and then backward."""
    fwd = flow(v, x, 0.0, 1.0, N, method).y
    back = flow(v, fwd, 1.0, 0.0, N, method).y
    return float(np.max(np.abs(back - np.asarray(x, dtype=float))))
