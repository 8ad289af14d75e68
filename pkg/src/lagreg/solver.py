"""Gauss-Newton-Krylov optimization and the multilevel driver."""
from __future__ import annotations

import csv
import io
import logging
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.fft
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .characteristics import flow
from .field import ImageField, VelocityField
from .grid import Grid, cell_centers, prolong_velocity, restrict_image
from .objective import HessianOperator, RegOperator, RegistrationProblem, evaluate

log = logging.getLogger(__name__)

PRECONDITIONERS = ("none", "jacobi", "sgs", "spectral")


class NegativeCurvatureError(ArithmeticError):
    pass


@dataclass
class PCGResult:
    x: np.ndarray
    relres: list[float]
    energy: list[float]
    iters: int
    converged: bool


def _apply(H, x):
    return H @ x if not callable(H) else H(x)


def pcg(H, rhs: np.ndarray, M=None, tol: float = 1e-1, maxiter: int = 50) -> PCGResult:
    """Preconditioned conjugate gradients from ``x0 = 0``.

    ``H`` supports ``H @ x`` (or is callable); ``M`` applies the inverse of
    the preconditioner. ``relres`` holds ``|rhs - H x_k| / |rhs|`` and
    ``energy`` the quadratic ``x_k^T H x_k / 2 - rhs^T x_k``, which CG
    decreases monotonically.
    """
    b = np.asarray(rhs, dtype=float)
    x = np.zeros_like(b)
    nb = np.linalg.norm(b)
    if nb == 0.0:
        return PCGResult(x, [0.0], [0.0], 0, True)
    r = b.copy()
    z = r.copy() if M is None else M(r)
    p = z.copy()
    rz = float(r @ z)
    relres, energy = [1.0], [0.0]
    converged = False
    k = 0
    for k in range(1, maxiter + 1):
        Hp = _apply(H, p)
        pHp = float(p @ Hp)
        if not np.isfinite(pHp):
            raise FloatingPointError(f"non-finite curvature in PCG iteration {k}")
        if pHp <= 0.0:
            raise NegativeCurvatureError(f"p^T H p = {pHp:.3e} <= 0 in PCG iteration {k}")
        a = rz / pHp
        x += a * p
        r -= a * Hp
        # energy of x_k relative to x_{k-1}: -a^2 p^T H p / 2 per step
        energy.append(energy[-1] - 0.5 * a * a * pHp)
        relres.append(float(np.linalg.norm(r)) / nb)
        if not np.all(np.isfinite(x)):
            raise FloatingPointError(f"non-finite iterate in PCG iteration {k}")
        if relres[-1] <= tol:
            converged = True
            break
        z = r.copy() if M is None else M(r)
        rz_new = float(r @ z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    return PCGResult(x, relres, energy, k, converged)


class SpectralPreconditioner:
    """Inverse of ``alpha d2S + gamma I`` applied with DCT-II per block."""

    def __init__(self, reg: RegOperator, alpha: float, gamma: float, floor: float = 1e-8):
        self.reg = reg
        # transposed because blocks are stored first-axis fastest
        lam = reg.eigenvalues().T
        scale = alpha * reg.block_scale.reshape((-1,) + (1,) * reg.grid.d)
        lam = scale * lam[None]
        self.gamma_eff = max(gamma, floor * float(lam.max()))
        if self.gamma_eff <= 0.0:
            raise ValueError("preconditioner is singular: need alpha > 0 or gamma > 0")
        self.denom = lam + self.gamma_eff

    def __call__(self, r: np.ndarray) -> np.ndarray:
        g = self.reg.grid
        r = np.asarray(r, dtype=float)
        if r.size != self.reg.n:
            raise ValueError(f"vector of length {r.size} does not match operator size {self.reg.n}")
        blocks = r.reshape((self.reg.nblocks,) + tuple(reversed(g.m)))
        axes = tuple(range(1, g.d + 1))
        c = scipy.fft.dctn(blocks, type=2, axes=axes, norm="ortho")
        c /= self.denom
        return scipy.fft.idctn(c, type=2, axes=axes, norm="ortho").ravel()


def spectral_preconditioner(reg: RegOperator, alpha: float, gamma: float) -> SpectralPreconditioner:
    return SpectralPreconditioner(reg, alpha, gamma)


def _diagonal(H) -> np.ndarray:
    if isinstance(H, HessianOperator):
        return H.diagonal()
    return np.asarray(sp.csr_matrix(H).diagonal() if sp.issparse(H) else np.diag(H), dtype=float)


def jacobi_preconditioner(H):
    diag = _diagonal(H)
    if np.any(diag == 0.0):
        raise ZeroDivisionError(f"zero diagonal entry at index {int(np.flatnonzero(diag == 0.0)[0])}")
    inv = 1.0 / diag
    return lambda r: inv * r


def sgs_preconditioner(H):
    """Symmetric Gauss-Seidel ``(D + L) D^-1 (D + U)`` from an assembled ``H``."""
    if isinstance(H, HessianOperator):
        H = H.to_sparse()
    H = sp.csr_matrix(H)
    diag = H.diagonal()
    if np.any(diag == 0.0):
        raise ZeroDivisionError(f"zero diagonal entry at index {int(np.flatnonzero(diag == 0.0)[0])}")
    lower = sp.tril(H, format="csr")
    upper = sp.triu(H, format="csr")

    def apply(r):
        w = spla.spsolve_triangular(lower, r, lower=True)
        return spla.spsolve_triangular(upper, diag * w, lower=False)

    return apply


def make_preconditioner(kind: str, H, problem: RegistrationProblem):
    if kind == "none":
        return None
    if kind == "jacobi":
        return jacobi_preconditioner(H)
    if kind == "sgs":
        return sgs_preconditioner(H)
    if kind == "spectral":
        return spectral_preconditioner(problem.reg, problem.alpha, problem.gamma)
    raise ValueError(f"unknown preconditioner {kind!r}")


@dataclass
class SolverOptions:
    max_gn_iters: int = 50
    tol_J: float = 1e-3
    tol_grad: float = 1e-2
    tol_dv: float = 1e-2
    pcg_maxiter: int = 50
    pcg_tol: float = 0.1
    preconditioner: str = "spectral"
    linear_solver: str = "pcg"  # or "cholesky" for n <= dense_limit
    dense_limit: int = 20000
    armijo_c1: float = 1e-4
    armijo_factor: float = 0.5
    armijo_max: int = 10

    def __post_init__(self):
        for name in ("tol_J", "tol_grad", "tol_dv", "pcg_tol"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.pcg_tol >= 1:
            raise ValueError("pcg_tol must be < 1")
        if self.preconditioner not in PRECONDITIONERS:
            raise ValueError(f"unknown preconditioner {self.preconditioner!r}")
        if self.linear_solver not in ("pcg", "cholesky"):
            raise ValueError(f"unknown linear solver {self.linear_solver!r}")


@dataclass
class IterRecord:
    level: int
    iter: int
    J: float
    D: float
    S: float
    grad_norm: float
    pcg_iters: int
    mu: float


LOG_FIELDS = ("level", "iter", "J", "D", "S", "grad_norm", "pcg_iters", "mu")


def log_to_csv(records) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(LOG_FIELDS)
    for r in records:
        w.writerow([getattr(r, f) if not isinstance(getattr(r, f), float) else repr(getattr(r, f)) for f in LOG_FIELDS])
    return buf.getvalue()


@dataclass
class GNResult:
    v: VelocityField
    log: list[IterRecord]
    stop_reason: str
    linesearch_failed: bool = False

    @property
    def iterations(self) -> int:
        return len(self.log) - 1


def _search_direction(rep, problem, opts):
    H = rep.hess
    if opts.linear_solver == "cholesky" and H.shape[0] <= opts.dense_limit:
        Hd = H.to_sparse().toarray()
        dv = scipy.linalg.cho_solve(scipy.linalg.cho_factor(Hd), -rep.grad)
        return dv, 1
    M = make_preconditioner(opts.preconditioner, H, problem)
    res = pcg(H, -rep.grad, M, opts.pcg_tol, opts.pcg_maxiter)
    return res.x, res.iters


def gauss_newton(
    problem: RegistrationProblem,
    v0=None,
    opts: SolverOptions | None = None,
    level: int = 0,
    objective=evaluate,
) -> GNResult:
    """Inexact Gauss-Newton with Armijo backtracking.

    ``objective(v, problem, want_hessian=..., want_gradient=...)`` must return
    an :class:`ObjectiveReport`; it defaults to :func:`evaluate`.
    """
    opts = opts or SolverOptions()
    v = problem.velocity(v0).vector.copy()
    tol_dv = opts.tol_dv * (1.0 + np.linalg.norm(v))
    rep = objective(v, problem, want_hessian=True)
    gnorm = float(np.linalg.norm(rep.grad))
    records = [IterRecord(level, 0, rep.J, rep.D, rep.S, gnorm, 0, 0.0)]
    log.info("level %d iter 0: J=%.6e D=%.6e S=%.6e |g|=%.3e", level, rep.J, rep.D, rep.S, gnorm)
    if gnorm <= opts.tol_grad * (1.0 + abs(rep.J)) or gnorm == 0.0:
        return GNResult(problem.velocity(v), records, "gradient")

    reason = "max_iters"
    failed = False
    for it in range(1, opts.max_gn_iters + 1):
        dv, npcg = _search_direction(rep, problem, opts)
        slope = float(rep.grad @ dv)
        if slope >= 0.0:
            reason, failed = "not_descent", True
            break
        mu = 1.0
        trial = None
        for _ in range(opts.armijo_max):
            try:
                trial = objective(v + mu * dv, problem, want_gradient=False)
                if trial.J <= rep.J + opts.armijo_c1 * mu * slope:
                    break
            except FloatingPointError:
                pass
            trial = None
            mu *= opts.armijo_factor
        if trial is None:
            reason, failed = "linesearch", True
            log.warning("level %d iter %d: line search failed", level, it)
            break
        step = mu * dv
        v = v + step
        J_old = rep.J
        rep = objective(v, problem, want_hessian=True)
        gnorm = float(np.linalg.norm(rep.grad))
        records.append(IterRecord(level, it, rep.J, rep.D, rep.S, gnorm, npcg, mu))
        log.info(
            "level %d iter %d: J=%.6e D=%.6e S=%.6e |g|=%.3e pcg=%d mu=%.3g",
            level, it, rep.J, rep.D, rep.S, gnorm, npcg, mu,
        )
        if abs(J_old - rep.J) <= opts.tol_J * abs(J_old):
            reason = "tol_J"
            break
        if gnorm <= opts.tol_grad * (1.0 + abs(rep.J)):
            reason = "gradient"
            break
        if np.linalg.norm(step) <= tol_dv:
            reason = "tol_dv"
            break
    return GNResult(problem.velocity(v), records, reason, failed)


@dataclass
class Level:
    image_m: tuple[int, ...]
    velocity_m: tuple[int, ...]


@dataclass
class MultilevelSchedule:
    levels: list[Level]

    def __post_init__(self):
        if not self.levels:
            raise ValueError("schedule has no levels")
        for a, b in zip(self.levels, self.levels[1:]):
            if tuple(b.velocity_m) != tuple(2 * k for k in a.velocity_m):
                raise ValueError(f"velocity grid {b.velocity_m} does not refine {a.velocity_m}")

    @classmethod
    def uniform(cls, image_m, velocity_m, nlevels: int) -> "MultilevelSchedule":
        """``nlevels`` levels ending at the given finest sizes, halving each step."""
        levels = []
        for k in range(nlevels - 1, -1, -1):
            levels.append(Level(tuple(s >> k for s in image_m), tuple(s >> k for s in velocity_m)))
        return cls(levels)


@dataclass
class RegistrationConfig:
    """Everything needed for a multilevel registration run."""

    T: ImageField
    R: ImageField
    omega_v: tuple[float, ...]
    schedule: MultilevelSchedule
    model: str = "advect"
    regularizer: str = "diffusion"
    time_rule: str = "trapezoid"
    alpha: float = 1.0
    gamma: float = 1e-2
    nt: int = 0
    N: int = 4
    N_final: int = 20
    delta_factor: float = 1.0
    kernel: str = "hat"
    options: SolverOptions = field(default_factory=SolverOptions)


@dataclass
class RegistrationResult:
    v: VelocityField | None
    problem: RegistrationProblem | None
    y: np.ndarray | None
    u1: np.ndarray | None
    levels: list[GNResult]
    wall_time: float
    failed_level: int | None = None
    error: str | None = None

    @property
    def log(self) -> list[IterRecord]:
        return [r for lev in self.levels for r in lev.log]


def _image_pyramid(f: ImageField, sizes):
    """``f`` and all its successive restrictions, keyed by cell counts."""
    out = {tuple(f.grid.m): f}
    cur = f
    while all(k % 2 == 0 for k in cur.grid.m):
        cur = restrict_image(cur)
        out[tuple(cur.grid.m)] = cur
    missing = [tuple(s) for s in sizes if tuple(s) not in out]
    if missing:
        raise ValueError(f"cannot restrict image of size {f.grid.m} to {missing}")
    return out


def level_problem(cfg: RegistrationConfig, lev: Level, Tpyr, Rpyr) -> RegistrationProblem:
    T, R = Tpyr[tuple(lev.image_m)], Rpyr[tuple(lev.image_m)]
    vgrid = Grid(cfg.omega_v, tuple(lev.velocity_m))
    delta = tuple(cfg.delta_factor * h for h in T.grid.h)
    return RegistrationProblem(
        T, R, vgrid, nt=cfg.nt, N=cfg.N, model=cfg.model, alpha=cfg.alpha, gamma=cfg.gamma,
        regularizer=cfg.regularizer, time_rule=cfg.time_rule, delta=delta, kernel=cfg.kernel,
    )


def multilevel_register(cfg: RegistrationConfig) -> RegistrationResult:
    """Solve coarse to fine, prolonging the velocity between levels.

    The returned end points follow the backward flow ``y(v, x, 1, 0)`` from
    the cell centers with ``N_final`` steps, for either transport model.
    """
    t_start = time.perf_counter()
    sizes = [lev.image_m for lev in cfg.schedule.levels]
    Tpyr = _image_pyramid(cfg.T, sizes)
    Rpyr = _image_pyramid(cfg.R, sizes)
    results: list[GNResult] = []
    v = None
    problem = None
    for i, lev in enumerate(cfg.schedule.levels):
        try:
            problem = level_problem(cfg, lev, Tpyr, Rpyr)
            if v is not None:
                v = prolong_velocity(v, problem.vgrid)
            res = gauss_newton(problem, v, cfg.options, level=i)
        except (FloatingPointError, ArithmeticError, ValueError) as exc:
            log.error("level %d failed: %s", i, exc)
            return RegistrationResult(v, problem, None, None, results, time.perf_counter() - t_start, i, str(exc))
        results.append(res)
        v = res.v
    y = flow(v, cell_centers(problem.T.grid), 1.0, 0.0, cfg.N_final).y
    u1, _ = problem.transport(v, N=cfg.N_final)
    return RegistrationResult(v, problem, y, u1, results, time.perf_counter() - t_start)
