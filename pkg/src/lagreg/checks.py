"""Self-test suites: derivative checks, integrator order, mass accounting.

Every check returns a :class:`CheckResult`. The command line ``check``
subcommand runs them and exits nonzero if any fails.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .characteristics import flow
from .field import ImageField, VelocityField
from .grid import Grid, cell_centers, interp_matrix
from .objective import RegistrationProblem, evaluate
from .pde_solve import advect, build_pushforward, transport_mass


@dataclass
class CheckResult:
    suite: str
    name: str
    value: float
    threshold: float
    passed: bool

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.suite}/{self.name}: {self.value:.3e} (limit {self.threshold:.1e})"


def rotation_velocity(grid: Grid, omega: float = 1.0, center=(0.5, 0.5)) -> VelocityField:
    """Stationary rigid rotation ``omega * (-(x2 - c2), x1 - c1)``."""
    c = np.asarray(center, dtype=float)

    def fn(x, t):
        r = x - c
        return omega * np.stack([-r[:, 1], r[:, 0]], axis=1)

    return VelocityField.from_function(grid, fn)


def rotate(x: np.ndarray, angle: float, center=(0.5, 0.5)) -> np.ndarray:
    c = np.asarray(center, dtype=float)
    r = np.asarray(x, dtype=float) - c
    cs, sn = np.cos(angle), np.sin(angle)
    return c + np.stack([cs * r[:, 0] - sn * r[:, 1], sn * r[:, 0] + cs * r[:, 1]], axis=1)


def rotation_errors(Ns=(4, 8, 16, 32), method: str = "rk4", omega: float = 1.0):
    """Max endpoint error of the rotation flow over ``[0, 1]`` for each ``N``."""
    g = Grid((-1.0, 2.0, -1.0, 2.0), (24, 24))
    v = rotation_velocity(g, omega)
    phi = np.linspace(0.0, 2 * np.pi, 16, endpoint=False)
    x = 0.5 + 0.3 * np.stack([np.cos(phi), np.sin(phi)], axis=1)
    exact = rotate(x, omega)
    return np.array([np.max(np.abs(flow(v, x, 0.0, 1.0, N, method).y - exact)) for N in Ns])


def smooth_velocity(grid: Grid, nt: int = 0, amplitude: float = 0.05, seed: int = 0) -> VelocityField:
    """Random combination of low-frequency cosines, one per component and node."""
    rng = np.random.default_rng(seed)
    x = (cell_centers(grid) - grid.lo) / (grid.hi - grid.lo)
    blocks = []
    for _ in range(grid.d * (nt + 1)):
        f = np.zeros(grid.ncells)
        for _ in range(3):
            k = rng.integers(0, 3, size=grid.d)
            ph = rng.uniform(0, 2 * np.pi, size=grid.d)
            f += rng.normal() * np.prod(np.cos(np.pi * k * x + ph), axis=1)
        blocks.append(f)
    data = np.concatenate(blocks)
    data *= amplitude / max(np.max(np.abs(data)), 1e-300)
    return VelocityField(grid, nt, data)


def smooth_image(g: Grid, width: float = 0.15) -> ImageField:
    """Off-center Gaussian blob on a grid over the unit box."""
    x = cell_centers(g)
    c = np.array([0.45, 0.55, 0.5][: g.d])
    return ImageField(g, np.exp(-np.sum((x - c) ** 2, axis=1) / (2 * width**2)))


def smooth_directions(grid: Grid, nt: int = 0, k: int = 20, seed: int = 100) -> list[np.ndarray]:
    """``k`` unit-norm perturbations drawn like :func:`smooth_velocity`."""
    out = []
    for i in range(k):
        d = smooth_velocity(grid, nt, seed=seed + i).vector
        out.append(d / np.linalg.norm(d))
    return out


def fd_relative_error(fun, x0: np.ndarray, jac, directions, eps: float = 1e-5) -> float:
    """Stacked directional finite-difference error.

    Compares ``(f(x0 + eps d) - f(x0)) / eps`` with ``J d`` for all
    ``directions`` at once and returns ``|fd - lin| / |lin|`` over the
    concatenated vectors. For a scalar ``f`` this avoids dividing by
    directional derivatives that happen to be near zero.
    """
    f0 = np.atleast_1d(fun(x0))
    fd, lin = [], []
    for d in directions:
        lin.append(np.atleast_1d(jac @ d))
        fd.append((np.atleast_1d(fun(x0 + eps * d)) - f0) / eps)
    fd, lin = np.concatenate(fd), np.concatenate(lin)
    return float(np.linalg.norm(fd - lin) / max(np.linalg.norm(lin), 1e-300))


def derivative_problem(m: int = 32, model: str = "advect", nt: int = 1, seed: int = 0):
    """Offset Gaussian blobs on the unit square and a random smooth velocity."""
    g = Grid((0.0, 1.0, 0.0, 1.0), (m, m))
    T = smooth_image(g)
    x = cell_centers(g)
    R = ImageField(g, np.exp(-np.sum((x - np.array([0.55, 0.55])) ** 2, axis=1) / (2 * 0.12**2)))
    vg = Grid((-0.25, 1.25, -0.25, 1.25), (m // 2, m // 2))
    prob = RegistrationProblem(T, R, vg, nt=nt, N=4, model=model, alpha=1e-2, gamma=0.0)
    v = smooth_velocity(vg, nt, seed=seed)
    return prob, v


def derivative_suite(m: int = 32, eps: float = 1e-5, tol: float = 1e-4) -> list[CheckResult]:
    out = []
    prob, v = derivative_problem(m)
    dirs = smooth_directions(v.grid, v.nt)
    x = cell_centers(prob.T.grid)
    base = v.vector

    res = flow(v, x, 0.0, 1.0, 4, want_derivative=True)

    def endpoints(vec):
        return flow(v.with_vector(vec), x, 0.0, 1.0, 4).y.T.ravel()

    out.append(CheckResult("derivatives", "dvy", fd_relative_error(endpoints, base, res.dvy, dirs, eps), tol, False))

    T = prob.T
    _, J_adv = advect(T, v, 4, want_derivative=True)
    err = fd_relative_error(lambda w: advect(T, v.with_vector(w), 4)[0], base, J_adv, dirs, eps)
    out.append(CheckResult("derivatives", "dvu1_advect", err, tol, False))

    _, J_mass = transport_mass(T, v, 4, want_derivative=True)
    err = fd_relative_error(lambda w: transport_mass(T, v.with_vector(w), 4)[0], base, J_mass, dirs, eps)
    out.append(CheckResult("derivatives", "dvu1_mass", err, tol, False))

    for model in ("advect", "mass"):
        pm, vm = derivative_problem(m, model)
        grad = evaluate(vm, pm).grad
        err = fd_relative_error(
            lambda w: evaluate(w, pm, want_gradient=False).J, vm.vector, grad[None, :], dirs, eps
        )
        out.append(CheckResult("derivatives", f"dvJ_{model}", err, tol, False))
    for r in out:
        r.passed = bool(r.value <= r.threshold)
    return out


def order_suite() -> list[CheckResult]:
    out = []
    for method, lo, hi in (("rk4", 12.0, 20.0), ("euler", 1.8, 2.2)):
        e = rotation_errors(method=method)
        ratios = e[:-1] / e[1:]
        ok = bool(np.all((ratios >= lo) & (ratios <= hi)))
        worst = float(ratios.min() if ratios.min() < lo else ratios.max())
        out.append(CheckResult("order", f"{method}_ratio", worst, lo if worst < lo else hi, ok))
    return out


def mass_suite(m: int = 16, seed: int = 0) -> list[CheckResult]:
    out = []
    g = Grid((0.0, 1.0, 0.0, 1.0), (m, m))
    rng = np.random.default_rng(seed)
    T = ImageField(g, rng.uniform(0.0, 1.0, g.ncells) * _interior_mask(g, 3))
    vg = Grid((0.0, 1.0, 0.0, 1.0), (m, m))
    v = smooth_velocity(vg, amplitude=0.5 / m, seed=seed)
    for shape in ("hat", "box"):
        for factor in (0.5, 1.0, 2.0):
            u1, _ = transport_mass(T, v, 4, delta=factor * g.h[0], shape=shape)
            rel = abs(u1.sum() - T.data.sum()) / T.data.sum()
            out.append(CheckResult("mass", f"{shape}_delta{factor:g}h", rel, 1e-12, bool(rel <= 1e-12)))

    g8 = Grid((0.0, 1.0, 0.0, 1.0), (8, 8))
    y = cell_centers(g8) + rng.uniform(-0.5, 0.5, (g8.ncells, 2)) * g8.h
    F = build_pushforward(y, g8, shape="box").F
    P = interp_matrix(g8, y)
    diff = float(abs(F - P.T).max()) if (F - P.T).nnz else 0.0
    out.append(CheckResult("mass", "transpose_identity", diff, 1e-14, bool(diff <= 1e-14)))
    return out


def _interior_mask(g: Grid, margin: int) -> np.ndarray:
    idx = np.stack(np.unravel_index(np.arange(g.ncells), g.m, order="F"), axis=1)
    return np.all((idx >= margin) & (idx < np.array(g.m) - margin), axis=1).astype(float)


SUITES = {"derivatives": derivative_suite, "order": order_suite, "mass": mass_suite}


def run_checks(names=None) -> list[CheckResult]:
    names = list(SUITES) if names is None else list(names)
    results = []
    for name in names:
        if name not in SUITES:
            raise ValueError(f"unknown check suite {name!r}")
        results.extend(SUITES[name]())
    return results
