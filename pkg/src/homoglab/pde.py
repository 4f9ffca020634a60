"""Semilinear elliptic solves on the unit box.

Solves -Delta_h u + q(x) u + f(u) = g with zero Dirichlet data by damped
Newton iteration on the convex discrete energy

    I[v] = sum_edges h^dim/2 |grad_h v|^2
         + sum_nodes h^dim (q v^2 / 2 + F(v) - v g),

plus the linearized solves (-Delta_h + q_mean + f'(u)) w = rhs that define
the Green's operator of the problem linearized around a given state, and
the smallest Dirichlet eigenvalue by inverse power iteration.

Convexity (hence a unique minimizer and guaranteed Newton descent) holds
whenever lambda_1 + min q + min f' is bounded below by a positive margin;
``Nonlinearity.validate`` checks exactly that before a solve is attempted.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable

import numpy as np

from .errors import (
    ConfigurationError,
    EllipticityError,
    GridMismatchError,
    NonconvergenceError,
    SolverError,
    ValidationError,
)
from .grid import (
    Grid,
    GridFunction,
    check_same_grid,
    inner_product,
    l2_norm,
    laplacian_apply,
    laplacian_stencil_apply,
)
from .linsolve import pcg, shifted_poisson_solve

NEWTON_TOL = 1e-10
NEWTON_MAX_ITER = 50
NEWTON_MAX_HALVINGS = 30
CG_RTOL = 1e-12


@dataclass(frozen=True)
class Nonlinearity:
    """Reaction term f with derivatives, antiderivative, and ellipticity data.

    fprime_min is the global minimum of f' over the real line (closed form
    for the built-ins); margin_c is the required lower bound on
    lambda_1 + min q + min f'.
    """

    name: str
    gamma: float
    margin_c: float
    fprime_min: float
    f: Callable[[np.ndarray], np.ndarray]
    fprime: Callable[[np.ndarray], np.ndarray]
    fsecond: Callable[[np.ndarray], np.ndarray]
    antiderivative: Callable[[np.ndarray], np.ndarray]

    def validate(self, lambda1: float, q_min: float) -> float:
        """Check the ellipticity margin; return the effective constant c.

        Raises ValidationError when lambda_1 + q_min + min f' < margin_c.
        """
        c_eff = lambda1 + q_min + self.fprime_min
        if c_eff < self.margin_c:
            raise ValidationError(
                f"ellipticity margin violated: lambda1 + q_min + min f' = "
                f"{c_eff:.6g} < required margin {self.margin_c:.6g} "
                f"(nonlinearity '{self.name}', q_min={q_min:.6g})"
            )
        return c_eff

    def zero_order_margin(self, q_min: float) -> float:
        """q_min + min f', the constant in the discrete maximum principle."""
        return q_min + self.fprime_min


def bistable_cubic(theta: float = 0.3, margin_c: float = 0.5) -> Nonlinearity:
    """f(s) = s(s-1)(s-theta); min f' = theta - (1+theta)^2/3 in closed form."""
    if not 0.0 < theta < 1.0:
        raise ConfigurationError(f"theta must be in (0,1), got {theta}")
    a2 = 1.0 + theta

    def f(s):
        return s * (s - 1.0) * (s - theta)

    def fprime(s):
        return 3.0 * s**2 - 2.0 * a2 * s + theta

    def fsecond(s):
        return 6.0 * s - 2.0 * a2

    def antiderivative(s):
        return 0.25 * s**4 - (a2 / 3.0) * s**3 + 0.5 * theta * s**2

    return Nonlinearity(
        name=f"bistable(theta={theta:g})",
        gamma=3.0,
        margin_c=margin_c,
        fprime_min=theta - a2**2 / 3.0,
        f=f,
        fprime=fprime,
        fsecond=fsecond,
        antiderivative=antiderivative,
    )


def linear_reaction(margin_c: float = 0.5) -> Nonlinearity:
    """f identically zero: the purely linear problem."""
    zero = lambda s: np.zeros_like(np.asarray(s, dtype=float))
    return Nonlinearity(
        name="linear",
        gamma=1.0,
        margin_c=margin_c,
        fprime_min=0.0,
        f=zero,
        fprime=zero,
        fsecond=zero,
        antiderivative=zero,
    )


@dataclass
class SolveReport:
    newton_iterations: int = 0
    final_residual_l2: float = np.inf
    cg_iterations_total: int = 0
    converged: bool = False
    residual_history: list = field(default_factory=list)
    energy_history: list = field(default_factory=list)


@lru_cache(maxsize=32)
def smallest_eigenvalue(grid: Grid) -> float:
    """lambda_1 of -Delta_h by inverse power iteration.

    Iterates v <- (-Delta_h)^(-1) v (exact DST solve), Rayleigh quotient
    until the relative change drops below 1e-12.
    """
    arr = np.ones(grid.shape)
    lam_prev = np.inf
    for _ in range(1000):
        arr = shifted_poisson_solve(grid, 0.0, arr)
        arr /= np.linalg.norm(arr)
        av = laplacian_stencil_apply(grid, arr)
        lam = float(np.vdot(av, arr).real)
        if abs(lam - lam_prev) <= 1e-12 * abs(lam):
            return lam
        lam_prev = lam
    raise NonconvergenceError("inverse power iteration stalled")


def energy(
    grid: Grid,
    q_field: GridFunction,
    nl: Nonlinearity,
    g: GridFunction,
    v: GridFunction,
) -> float:
    """Discrete energy whose gradient is h^dim (-Delta_h v + q v + f(v) - g).

    The gradient part sums forward differences over all cell edges,
    including the edges that touch the (zero) boundary.
    """
    check_same_grid(q_field, g, v)
    if v.grid != grid:
        raise GridMismatchError("grid mismatch in energy")
    arr = v.reshaped()
    padded = np.pad(arr, 1)
    grad_sq = 0.0
    for axis in range(grid.dim):
        d = np.diff(padded, axis=axis)
        grad_sq += float(np.sum(d * d))
    grad_term = 0.5 * grid.h ** (grid.dim - 2) * grad_sq
    w = grid.h**grid.dim
    node_term = w * float(
        np.sum(
            0.5 * q_field.values * v.values**2
            + nl.antiderivative(v.values)
            - v.values * g.values
        )
    )
    return grad_term + node_term


def _residual(grid, q_values, nl, g_values, u_arr):
    """-Delta_h u + q u + f(u) - g as an interior array."""
    out = laplacian_stencil_apply(grid, u_arr)
    flat = u_arr.ravel()
    out += ((q_values * flat + nl.f(flat) - g_values)).reshape(grid.shape)
    return out


def _linearized_solve(grid, diag_values, rhs_values, rtol=CG_RTOL, precondition=True):
    """Solve (-Delta_h + diag) w = rhs by (preconditioned) CG; flat in, flat out.

    The default preconditioner is the exact DST solve with the mean of the
    diagonal as constant shift; pass precondition=False for plain CG.
    """
    diag_arr = diag_values.reshape(grid.shape)

    def apply_a(p):
        return laplacian_stencil_apply(grid, p) + diag_arr * p

    apply_m = None
    if precondition:
        shift = float(np.mean(diag_values))

        def apply_m(r):
            return shifted_poisson_solve(grid, shift, r)

    x, iters = pcg(
        apply_a,
        rhs_values.reshape(grid.shape),
        rtol=rtol,
        maxiter=10 * grid.interior_count,
        apply_m=apply_m,
    )
    return x.ravel(), iters


def solve_semilinear(
    grid: Grid,
    q_field: GridFunction,
    nl: Nonlinearity,
    g: GridFunction,
    newton_tol: float = NEWTON_TOL,
    precondition: bool = True,
) -> tuple[GridFunction, SolveReport]:
    """Solve -Delta_h u + q u + f(u) = g by damped Newton iteration.

    Starts from u = 0; each step solves the SPD linearized system by CG and
    halves the step until the energy does not increase.  Converged means
    the discrete-L2 residual norm dropped below newton_tol.
    """
    check_same_grid(q_field, g)
    if q_field.grid != grid:
        raise GridMismatchError("grid mismatch in solve_semilinear")
    q_values = q_field.values
    nl.validate(smallest_eigenvalue(grid), float(np.min(q_values)))

    report = SolveReport()
    w_sqrt = np.sqrt(grid.h**grid.dim)
    u_arr = np.zeros(grid.shape)
    e_curr = energy(grid, q_field, nl, g, GridFunction(grid, u_arr.ravel()))
    report.energy_history.append(e_curr)

    for _ in range(NEWTON_MAX_ITER):
        res = _residual(grid, q_values, nl, g.values, u_arr)
        res_l2 = w_sqrt * float(np.linalg.norm(res))
        report.residual_history.append(res_l2)
        report.final_residual_l2 = res_l2
        if res_l2 <= newton_tol:
            report.converged = True
            return GridFunction(grid, u_arr.ravel()), report

        diag = q_values + nl.fprime(u_arr.ravel())
        try:
            step, cg_iters = _linearized_solve(
                grid, diag, res.ravel(), precondition=precondition
            )
        except SolverError as exc:
            raise NonconvergenceError(
                f"linear solve failed inside Newton: {exc}", report
            ) from exc
        report.cg_iterations_total += cg_iters
        report.newton_iterations += 1
        step_arr = step.reshape(grid.shape)

        # near convergence the true decrement drops below rounding noise in
        # the energy; accept within that noise so full steps go through
        slack = 1e-13 * (1.0 + abs(e_curr))
        t = 1.0
        for _ in range(NEWTON_MAX_HALVINGS + 1):
            trial = u_arr - t * step_arr
            e_trial = energy(grid, q_field, nl, g, GridFunction(grid, trial.ravel()))
            if e_trial <= e_curr + slack:
                break
            t *= 0.5
        else:
            raise NonconvergenceError(
                "Newton line search could not decrease the energy", report
            )
        u_arr = trial
        e_curr = e_trial
        report.energy_history.append(e_curr)

    raise NonconvergenceError(
        f"Newton did not converge in {NEWTON_MAX_ITER} iterations "
        f"(residual {report.final_residual_l2:.3e})",
        report,
    )


def solve_homogenized(
    grid: Grid,
    q_mean: float,
    nl: Nonlinearity,
    g: GridFunction,
    precondition: bool = True,
) -> tuple[GridFunction, SolveReport]:
    """Solve the effective problem: same system with constant potential q_mean."""
    q_field = GridFunction.constant(grid, q_mean)
    return solve_semilinear(grid, q_field, nl, g, precondition=precondition)


def apply_linearized_inverse(
    grid: Grid,
    q_mean: float,
    fprime_u: GridFunction,
    rhs: GridFunction,
    rtol: float = CG_RTOL,
    precondition: bool = True,
) -> GridFunction:
    """w = (-Delta_h + q_mean + f'(u))^(-1) rhs, the linearized Green's operator."""
    check_same_grid(fprime_u, rhs)
    if fprime_u.grid != grid:
        raise GridMismatchError("grid mismatch in apply_linearized_inverse")
    diag = q_mean + fprime_u.values
    lam1 = smallest_eigenvalue(grid)
    if lam1 + float(np.min(diag)) <= 0.0:
        raise EllipticityError(
            f"linearized operator not elliptic: lambda1 + min(q_mean + f'(u)) = "
            f"{lam1 + float(np.min(diag)):.6g} <= 0"
        )
    try:
        x, _ = _linearized_solve(
            grid, diag, rhs.values, rtol=rtol, precondition=precondition
        )
    except NonconvergenceError as exc:
        raise EllipticityError(f"linearized solve did not converge: {exc}") from exc
    return GridFunction(grid, x)


def green_column(
    grid: Grid,
    q_mean: float,
    fprime_u: GridFunction,
    y_index,
) -> GridFunction:
    """One column G(., y) of the linearized Green's function.

    y_index addresses an interior node, either as a flat index into the
    lexicographic interior ordering or as a tuple of per-axis interior
    indices (each in 0..m-1).  The right-hand side is the discrete delta
    with mass 1/h^dim at that node.
    """
    if isinstance(y_index, (tuple, list)):
        if len(y_index) != grid.dim:
            raise ConfigurationError(
                f"y_index must have {grid.dim} components, got {len(y_index)}"
            )
        if any(not 0 <= i < grid.m for i in y_index):
            raise ConfigurationError(
                f"y_index {tuple(y_index)} is not an interior node "
                f"(valid range 0..{grid.m - 1} per axis)"
            )
        flat = int(np.ravel_multi_index(tuple(y_index), grid.shape))
    else:
        flat = int(y_index)
        if not 0 <= flat < grid.interior_count:
            raise ConfigurationError(f"flat y_index {flat} out of range")
    rhs = np.zeros(grid.interior_count)
    rhs[flat] = 1.0 / grid.h**grid.dim
    return apply_linearized_inverse(grid, q_mean, fprime_u, GridFunction(grid, rhs))
