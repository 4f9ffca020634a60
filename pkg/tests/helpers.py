"""Shared test utilities: independent dense constructions used as oracles.

Everything here is deliberately built from scratch (kron products, dense
linear algebra) rather than through the package's operator code, so tests
compare two independent routes to the same quantity.
"""

import numpy as np


def dense_dirichlet_laplacian(dim, n):
    """Dense -Delta_h on the interior lattice, lexicographic C order."""
    m = n - 2
    h = 1.0 / (n - 1)
    main = 2.0 * np.ones(m)
    off = -np.ones(m - 1)
    t_matrix = (np.diag(main) + np.diag(off, 1) + np.diag(off, -1)) / h**2
    eye = np.eye(m)
    if dim == 2:
        return np.kron(t_matrix, eye) + np.kron(eye, t_matrix)
    return (
        np.kron(np.kron(t_matrix, eye), eye)
        + np.kron(np.kron(eye, t_matrix), eye)
        + np.kron(np.kron(eye, eye), t_matrix)
    )


def dense_operator(dim, n, diag_values):
    """Dense -Delta_h + diag(d)."""
    return dense_dirichlet_laplacian(dim, n) + np.diag(np.asarray(diag_values))


def picard_solve(dim, n, q_values, nl, g_values, tol=1e-12, max_iter=4000):
    """Damped fixed-point iteration u <- u + w ((-Delta+q)^{-1}(g - f(u)) - u).

    Dense solves throughout; independent of the package's Newton path.
    """
    a_matrix = dense_operator(dim, n, q_values)
    u = np.zeros_like(g_values)
    damping = 0.5
    for _ in range(max_iter):
        rhs = g_values - nl.f(u)
        u_new = np.linalg.solve(a_matrix, rhs)
        step = u_new - u
        u = u + damping * step
        if np.max(np.abs(step)) < tol:
            return u
    raise RuntimeError("Picard iteration did not converge")
