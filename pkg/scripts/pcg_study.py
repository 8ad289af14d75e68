"""PCG iteration counts per preconditioner on the coarse C-shape GN system.

Reports two intensity scales: images in [0, 1] and 8-bit gray values
(the scale the benchmark weights are tuned for). The Hessian is taken at
v = 0 and at the coarse-level solution.
"""
import argparse

from lagreg.grid import Grid, restrict_image
from lagreg.objective import RegistrationProblem, evaluate
from lagreg.problems import make_cshape
from lagreg.solver import gauss_newton, make_preconditioner, pcg

KINDS = ("none", "jacobi", "sgs", "spectral")


def main():
    p = argparse.ArgumentParser(description=__doc__)
    p.add_argument("--alpha", type=float, default=400.0)
    p.add_argument("--gamma", type=float, default=0.0)
    p.add_argument("--tols", type=float, nargs="+", default=[1e-1, 1e-2, 1e-4])
    args = p.parse_args()

    for intensity in (1.0, 255.0):
        T, R = make_cshape(128, intensity=intensity)
        T, R = restrict_image(restrict_image(T)), restrict_image(restrict_image(R))
        prob = RegistrationProblem(T, R, Grid((-0.5, 1.5, -0.5, 1.5), (32, 32)),
                                   alpha=args.alpha, gamma=args.gamma, N=3)
        points = {"v=0": prob.velocity(), "solution": gauss_newton(prob).v}
        for where, v in points.items():
            rep = evaluate(v, prob, want_hessian=True)
            Hs = rep.hess.to_sparse()
            for tol in args.tols:
                its = {}
                for kind in KINDS:
                    M = make_preconditioner(kind, Hs if kind == "sgs" else rep.hess, prob)
                    res = pcg(rep.hess, -rep.grad, M, tol=tol, maxiter=2000)
                    its[kind] = res.iters if res.converged else f">{res.iters}"
                cells = "  ".join(f"{k} {its[k]:>5}" for k in KINDS)
                print(f"intensity {intensity:5g}  {where:>8}  tol {tol:7.0e}  {cells}")


if __name__ == "__main__":
    main()
