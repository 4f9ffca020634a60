"""Corrector, error expansion, and predicted limit variances.

With G the inverse of the operator linearized around the homogenized
solution u (see pde.apply_linearized_inverse), the error u_eps - u splits
into five terms

    t1 = -G(nu u)                 the corrector, carries the limit law
    t2 =  G(nu G(nu u))
    t3 =  G(nu G(nu (u_eps - u)))
    t4 = -G(r)                    r = f(u_eps) - f(u) - f'(u)(u_eps - u)
    t5 =  G(nu G(r))

whose sum reproduces u_eps - u exactly (up to linear-solver tolerance).
The predicted variance of inner products with a test function phi is
sigma2 * integral (G phi)^2 u^2 for short-range potentials and the
kappa-weighted double integral against |y - z|^(-alpha) for long-range.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import gamma as gamma_function

import numpy as np
import scipy.signal

from .errors import ConfigurationError
from .grid import Grid, GridFunction, check_same_grid
from .pde import Nonlinearity, apply_linearized_inverse


@dataclass
class ExpansionTerms:
    """The five expansion terms plus the fields they are built from."""

    t1: GridFunction
    t2: GridFunction
    t3: GridFunction
    t4: GridFunction
    t5: GridFunction
    xi: GridFunction      # u_eps - u
    z: GridFunction       # xi - t1
    r_eps: GridFunction   # Taylor remainder of f
    h_eps: GridFunction   # difference quotient of f, f'(u) where xi == 0


@dataclass
class VariancePrediction:
    sigma2_phi: float
    kind: str
    m_field: GridFunction


def corrector(
    grid: Grid,
    q_mean: float,
    fprime_u: GridFunction,
    nu_eps: GridFunction,
    u: GridFunction,
) -> GridFunction:
    """chi = -G(nu_eps * u), the leading fluctuation term."""
    check_same_grid(fprime_u, nu_eps, u)
    rhs = GridFunction(grid, nu_eps.values * u.values)
    chi = apply_linearized_inverse(grid, q_mean, fprime_u, rhs)
    chi.values *= -1.0
    return chi


def expansion_terms(
    grid: Grid,
    q_eps: GridFunction,
    q_mean: float,
    nl: Nonlinearity,
    g: GridFunction,
    u_eps: GridFunction,
    u: GridFunction,
) -> ExpansionTerms:
    """All five terms of the error expansion for one realization.

    u_eps and u must be converged solves of the heterogeneous and
    homogenized systems for this realization; g is only part of the
    signature for symmetry with the solvers (the terms depend on it through
    u_eps and u).
    """
    check_same_grid(q_eps, g, u_eps, u)
    nu = q_eps.values - q_mean
    xi = u_eps.values - u.values
    fprime_u = GridFunction(grid, nl.fprime(u.values))

    def green(values):
        return apply_linearized_inverse(
            grid, q_mean, fprime_u, GridFunction(grid, values)
        )

    g_nu_u = green(nu * u.values)
    t1 = GridFunction(grid, -g_nu_u.values)
    t2 = green(nu * g_nu_u.values)
    g_nu_xi = green(nu * xi)
    t3 = green(nu * g_nu_xi.values)
    r = nl.f(u_eps.values) - nl.f(u.values) - nl.fprime(u.values) * xi
    g_r = green(r)
    t4 = GridFunction(grid, -g_r.values)
    t5 = green(nu * g_r.values)

    h = np.array(nl.fprime(u.values))
    nonzero = xi != 0.0
    h[nonzero] = (nl.f(u_eps.values[nonzero]) - nl.f(u.values[nonzero])) / xi[nonzero]

    return ExpansionTerms(
        t1=t1,
        t2=t2,
        t3=t3,
        t4=t4,
        t5=t5,
        xi=GridFunction(grid, xi),
        z=GridFunction(grid, xi - t1.values),
        r_eps=GridFunction(grid, r),
        h_eps=GridFunction(grid, h),
    )


def predicted_variance_short(
    grid: Grid,
    u: GridFunction,
    phi: GridFunction,
    sigma2: float,
    q_mean: float,
    fprime_u: GridFunction,
) -> VariancePrediction:
    """sigma2 * h^dim * sum((G phi)^2 u^2), the short-range limit variance."""
    if sigma2 <= 0.0:
        raise ConfigurationError(f"sigma2 must be > 0, got {sigma2}")
    check_same_grid(u, phi, fprime_u)
    m = apply_linearized_inverse(grid, q_mean, fprime_u, phi)
    val = sigma2 * grid.h**grid.dim * float(np.sum((m.values * u.values) ** 2))
    return VariancePrediction(sigma2_phi=val, kind="short_range", m_field=m)


def _ball_average_kernel(dim: int, alpha: float, h: float) -> float:
    """Average of |x|^(-alpha) over the ball of the same volume as an h-cell."""
    omega = np.pi ** (dim / 2.0) / gamma_function(dim / 2.0 + 1.0)
    return dim / (dim - alpha) * omega ** (alpha / dim) * h ** (-alpha)


def predicted_variance_long(
    grid: Grid,
    u: GridFunction,
    phi: GridFunction,
    kappa: float,
    alpha: float,
    q_mean: float,
    fprime_u: GridFunction,
) -> VariancePrediction:
    """kappa-weighted double integral of (u G phi) against |y - z|^(-alpha).

    Off-diagonal node pairs use the node-distance kernel; the (integrable)
    diagonal singularity is handled by a closed-form ball-equivalent cell
    average.  The double sum is evaluated as a lattice convolution by FFT.
    """
    if not 0.0 < alpha < grid.dim:
        raise ConfigurationError(f"alpha must be in (0, {grid.dim}), got {alpha}")
    if kappa <= 0.0:
        raise ConfigurationError(f"kappa must be > 0, got {kappa}")
    check_same_grid(u, phi, fprime_u)
    m = apply_linearized_inverse(grid, q_mean, fprime_u, phi)
    w = (m.values * u.values).reshape(grid.shape)

    offsets = np.arange(-(grid.m - 1), grid.m, dtype=float) * grid.h
    off2 = offsets**2
    r2 = off2
    for _ in range(grid.dim - 1):
        r2 = r2[..., None] + off2
    center = (grid.m - 1,) * grid.dim
    r2[center] = 1.0  # placeholder, overwritten below
    kernel = r2 ** (-alpha / 2.0)
    kernel[center] = _ball_average_kernel(grid.dim, alpha, grid.h)

    conv = scipy.signal.fftconvolve(w, kernel, mode="valid")
    val = kappa * grid.h ** (2 * grid.dim) * float(np.sum(w * conv))
    return VariancePrediction(sigma2_phi=val, kind="long_range", m_field=m)
