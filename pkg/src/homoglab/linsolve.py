"""Linear solver kernels: fast constant-coefficient solves and conjugate gradient.

The Dirichlet stencil Laplacian on the unit box is diagonalized exactly by
the type-I discrete sine transform, which gives an O(N log N) direct solver
for (-Delta_h + kappa) with constant kappa.  Variable-coefficient systems
(-Delta_h + d(x)) are solved by conjugate gradient; the DST solve with
kappa = mean(d) serves as preconditioner, which keeps iteration counts flat
in the mesh size because d varies in a bounded band around its mean.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np
import scipy.fft

from .errors import EllipticityError, NonconvergenceError
from .grid import Grid


@lru_cache(maxsize=32)
def dirichlet_laplacian_eigenvalues(dim: int, m: int, h: float) -> np.ndarray:
    """Eigenvalues of -Delta_h on the (m,)*dim interior lattice, DST-I ordering.

    Per-axis spectrum is (4/h^2) sin^2(pi k h / 2), k = 1..m.
    """
    k = np.arange(1, m + 1)
    lam1d = (4.0 / h**2) * np.sin(0.5 * np.pi * k * h) ** 2
    lam = lam1d
    for _ in range(dim - 1):
        lam = lam[..., None] + lam1d
    return lam


def shifted_poisson_solve(grid: Grid, shift: float, rhs: np.ndarray) -> np.ndarray:
    """Solve (-Delta_h + shift) w = rhs exactly via DST-I; rhs shape grid.shape."""
    lam = dirichlet_laplacian_eigenvalues(grid.dim, grid.m, grid.h)
    coef = scipy.fft.dstn(rhs, type=1)
    coef /= lam + shift
    return scipy.fft.idstn(coef, type=1)


def pcg(apply_a, b: np.ndarray, rtol: float, maxiter: int, apply_m=None):
    """Preconditioned conjugate gradient for SPD apply_a.

    Stops when ||b - A x||_2 <= rtol * ||b||_2 (plain residual, not the
    preconditioned one).  Returns (x, iterations).  Raises EllipticityError
    if a non-positive curvature direction shows up, NonconvergenceError on
    iteration budget exhaustion.
    """
    b = np.asarray(b, dtype=float)
    bnorm = np.linalg.norm(b)
    x = np.zeros_like(b)
    if bnorm == 0.0:
        return x, 0
    r = b.copy()
    z = apply_m(r) if apply_m is not None else r
    p = z.copy()
    rz = float(np.dot(r.ravel(), z.ravel()))
    for it in range(1, maxiter + 1):
        ap = apply_a(p)
        pap = float(np.dot(p.ravel(), ap.ravel()))
        if pap <= 0.0:
            raise EllipticityError(
                f"conjugate gradient found non-positive curvature ({pap:.3e}); "
                "system is not positive definite"
            )
        alpha = rz / pap
        x += alpha * p
        r -= alpha * ap
        if np.linalg.norm(r) <= rtol * bnorm:
            return x, it
        z = apply_m(r) if apply_m is not None else r
        rz_new = float(np.dot(r.ravel(), z.ravel()))
        p = z + (rz_new / rz) * p
        rz = rz_new
    raise NonconvergenceError(
        f"conjugate gradient did not reach rtol={rtol} in {maxiter} iterations "
        f"(residual {np.linalg.norm(r) / bnorm:.3e} relative)"
    )
