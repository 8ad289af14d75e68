"""Reduced objective ``J(v) = D(u1(v), R) + alpha * S(v)`` and its derivatives."""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .field import ImageField, VelocityField
from .grid import Grid
from .pde_solve import DEFAULT_KERNEL, advect, transport_mass

REGULARIZERS = ("diffusion", "curvature")
TIME_RULES = ("uniform", "trapezoid")
MODELS = ("advect", "mass")


def _neumann_diff(m: int, h: float) -> sp.csr_matrix:
    """Short differences between neighboring centers, ``(m - 1) x m``."""
    return sp.diags([-np.ones(m - 1), np.ones(m - 1)], [0, 1], shape=(m - 1, m), format="csr") / h


def _axis_op(op: sp.spmatrix, axis: int, m: tuple[int, ...]) -> sp.csr_matrix:
    # first axis fastest: the rightmost Kronecker factor acts on axis 0
    mats = [sp.identity(k, format="csr") for k in m]
    mats[axis] = op
    out = mats[-1]
    for M in reversed(mats[:-1]):
        out = sp.kron(out, M, format="csr")
    return out


def gradient_operator(g: Grid) -> sp.csr_matrix:
    """Stacked face differences of a cell-centered scalar (Neumann closure)."""
    return sp.vstack([_axis_op(_neumann_diff(g.m[a], g.h[a]), a, g.m) for a in range(g.d)]).tocsr()


def laplacian_operator(g: Grid) -> sp.csr_matrix:
    """Standard ``2d+1``-point Laplacian with mirror boundary closure."""
    L = sp.csr_matrix((g.ncells, g.ncells))
    for a in range(g.d):
        Da = _neumann_diff(g.m[a], g.h[a])
        L = L - _axis_op((Da.T @ Da).tocsr(), a, g.m)
    return L.tocsr()


@dataclass
class RegOperator:
    """Quadratic regularizer ``S(v) = cellvol / 2 * sum_b w_b |B v_b|^2``.

    ``B`` acts on every component and time node ``b`` separately. The time
    weights ``w_b`` come from ``time_rule``: ``"uniform"`` gives every node
    ``dt_weight``; ``"trapezoid"`` halves the weight of the end nodes so that
    a time-constant field has the energy of its stationary counterpart.
    Stationary fields always use weight one.
    """

    grid: Grid
    nt: int = 0
    model: str = "diffusion"
    time_rule: str = "trapezoid"

    def __post_init__(self):
        if self.model not in REGULARIZERS:
            raise ValueError(f"unknown regularizer {self.model!r}")
        if self.time_rule not in TIME_RULES:
            raise ValueError(f"unknown time rule {self.time_rule!r}")

    @property
    def dt_weight(self) -> float:
        return 1.0 / self.nt if self.nt > 0 else 1.0

    @property
    def cellvol(self) -> float:
        return self.grid.cellvol

    @property
    def nblocks(self) -> int:
        return self.grid.d * (self.nt + 1)

    @property
    def n(self) -> int:
        return self.nblocks * self.grid.ncells

    @property
    def node_weights(self) -> np.ndarray:
        w = np.full(self.nt + 1, self.dt_weight)
        if self.nt > 0 and self.time_rule == "trapezoid":
            w[[0, -1]] *= 0.5
        return w

    @cached_property
    def block_scale(self) -> np.ndarray:
        """``cellvol * w_b`` per block, components outermost."""
        return self.cellvol * np.tile(self.node_weights, self.grid.d)

    @cached_property
    def B(self) -> sp.csr_matrix:
        """Per-block operator (gradient or Laplacian) on one scalar field."""
        if self.model == "diffusion":
            return gradient_operator(self.grid)
        return laplacian_operator(self.grid)

    @cached_property
    def A(self) -> sp.csr_matrix:
        """Per-block ``B^T B``."""
        return (self.B.T @ self.B).tocsr()

    def _blocks(self, vec: np.ndarray) -> np.ndarray:
        vec = np.asarray(vec, dtype=float)
        if vec.size != self.n:
            raise ValueError(f"vector of length {vec.size} does not match regularizer size {self.n}")
        return vec.reshape(self.nblocks, self.grid.ncells)

    def apply_B(self, vec: np.ndarray) -> np.ndarray:
        return (self.B @ self._blocks(vec).T).T

    def apply_A(self, vec: np.ndarray) -> np.ndarray:
        return (self.A @ self._blocks(vec).T).T.ravel()

    def apply_WA(self, vec: np.ndarray) -> np.ndarray:
        """Weighted ``A``: the Hessian of ``S``."""
        return ((self.A @ self._blocks(vec).T) * self.block_scale).T.ravel()

    def energy(self, vec: np.ndarray) -> float:
        Bv = self.apply_B(vec)
        return 0.5 * float(self.block_scale @ np.sum(Bv * Bv, axis=1))

    def full_matrix(self) -> sp.csr_matrix:
        """Block-diagonal ``A`` over all unknowns."""
        return sp.kron(sp.identity(self.nblocks, format="csr"), self.A, format="csr")

    def weighted_matrix(self) -> sp.csr_matrix:
        """Assembled Hessian of ``S``."""
        return sp.kron(sp.diags(self.block_scale), self.A, format="csr")

    def eigenvalues(self) -> np.ndarray:
        """Eigenvalues of the per-block ``A`` on the DCT-II basis, shape ``m``."""
        g = self.grid
        lam = np.zeros(g.m)
        for a in range(g.d):
            k = np.arange(g.m[a])
            la = (2.0 - 2.0 * np.cos(np.pi * k / g.m[a])) / g.h[a] ** 2
            shape = [1] * g.d
            shape[a] = g.m[a]
            lam = lam + la.reshape(shape)
        return lam if self.model == "diffusion" else lam**2


def regularize(v, R: RegOperator):
    """Return ``(S, dS)`` for a velocity field or coefficient vector."""
    vec = v.vector if isinstance(v, VelocityField) else np.asarray(v, dtype=float)
    return R.energy(vec), R.apply_WA(vec)


def ssd(u1, R: ImageField):
    """Sum of squared differences ``cellvol / 2 * |u1 - R|^2``.

    Returns ``(value, residual, dD, d2D_scale)``.
    """
    if isinstance(u1, ImageField):
        if u1.grid != R.grid:
            raise ValueError("u1 and R live on different grids")
        u1 = u1.data
    u1 = np.asarray(u1, dtype=float)
    if u1.shape != R.data.shape:
        raise ValueError(f"u1 has shape {u1.shape}, R has {R.data.shape}")
    hd = R.grid.cellvol
    res = u1 - R.data
    return 0.5 * hd * float(res @ res), res, hd * res, hd


@dataclass
class RegistrationProblem:
    """Template/reference pair plus transport and regularization settings."""

    T: ImageField
    R: ImageField
    vgrid: Grid
    nt: int = 0
    N: int = 4
    model: str = "advect"
    alpha: float = 1.0
    gamma: float = 1e-2
    regularizer: str = "diffusion"
    time_rule: str = "trapezoid"
    delta: float | tuple[float, ...] | None = None
    kernel: str = DEFAULT_KERNEL

    def __post_init__(self):
        if self.T.grid != self.R.grid:
            raise ValueError("template and reference must share a grid")
        if self.model not in MODELS:
            raise ValueError(f"unknown transport model {self.model!r}")
        if self.vgrid.d != self.T.grid.d:
            raise ValueError("velocity and image grids differ in dimension")

    @property
    def n(self) -> int:
        return self.T.grid.d * (self.nt + 1) * self.vgrid.ncells

    @cached_property
    def reg(self) -> RegOperator:
        return RegOperator(self.vgrid, self.nt, self.regularizer, self.time_rule)

    def velocity(self, vec=None) -> VelocityField:
        if vec is None:
            return VelocityField.zeros(self.vgrid, self.nt)
        if isinstance(vec, VelocityField):
            return vec
        return VelocityField(self.vgrid, self.nt, np.asarray(vec, dtype=float))

    def transport(self, v, want_derivative: bool = False, N: int | None = None):
        v = self.velocity(v)
        N = self.N if N is None else N
        if self.model == "advect":
            return advect(self.T, v, N, want_derivative)
        return transport_mass(self.T, v, N, self.delta, want_derivative, self.kernel)


@dataclass
class HessianOperator:
    """Gauss-Newton Hessian ``cellvol J^T J + alpha d2S + gamma I``."""

    J: sp.csr_matrix
    cellvol: float
    reg: RegOperator
    alpha: float
    gamma: float

    @property
    def shape(self) -> tuple[int, int]:
        return (self.J.shape[1], self.J.shape[1])

    def matvec(self, w: np.ndarray) -> np.ndarray:
        w = np.asarray(w, dtype=float)
        out = self.cellvol * (self.J.T @ (self.J @ w))
        out += self.alpha * self.reg.apply_WA(w)
        if self.gamma:
            out += self.gamma * w
        return out

    def __matmul__(self, w):
        return self.matvec(w)

    def diagonal(self) -> np.ndarray:
        data_diag = self.cellvol * np.asarray(self.J.multiply(self.J).sum(axis=0)).ravel()
        reg_diag = np.kron(self.reg.block_scale, self.reg.A.diagonal())
        return data_diag + self.alpha * reg_diag + self.gamma

    def to_sparse(self) -> sp.csr_matrix:
        H = self.cellvol * (self.J.T @ self.J)
        H = H + self.alpha * self.reg.weighted_matrix()
        if self.gamma:
            H = H + self.gamma * sp.identity(self.shape[0], format="csr")
        return H.tocsr()


@dataclass
class ObjectiveReport:
    J: float
    D: float
    S: float
    residual: np.ndarray
    u1: np.ndarray
    grad: np.ndarray | None = None
    hess: HessianOperator | None = None
    extra: dict = field(default_factory=dict)


def evaluate(v, problem: RegistrationProblem, want_hessian: bool = False, want_gradient: bool = True) -> ObjectiveReport:
    """Objective value and, on request, gradient and Gauss-Newton Hessian."""
    vel = problem.velocity(v)
    vec = vel.vector
    need_jac = want_gradient or want_hessian
    u1, dvu1 = problem.transport(vel, want_derivative=need_jac)
    D, res, dD, d2D = ssd(u1, problem.R)
    S, dS = regularize(vec, problem.reg)
    J = D + problem.alpha * S
    rep = ObjectiveReport(J=J, D=D, S=S, residual=res, u1=u1)
    if need_jac:
        rep.grad = dvu1.T @ dD + problem.alpha * dS
        if not np.all(np.isfinite(rep.grad)):
            raise FloatingPointError("objective gradient is not finite")
    if want_hessian:
        rep.hess = HessianOperator(dvu1, d2D, problem.reg, problem.alpha, problem.gamma)
    return rep
