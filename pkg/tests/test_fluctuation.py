import numpy as np
import pytest

import helpers
from homoglab import (
    GridFunction,
    bistable_cubic,
    build_grid,
    build_short_range,
    corrector,
    expansion_terms,
    fit_loglog_slope,
    inner_product,
    l2_norm,
    linear_reaction,
    predicted_variance_long,
    predicted_variance_short,
    realization_seed,
    sample_potential,
    solve_homogenized,
    solve_semilinear,
)
from homoglab.errors import ConfigurationError
from homoglab.pde import apply_linearized_inverse

Q_MEAN, AMPLITUDE, THETA = 5.0, 0.5, 0.3


def default_setup(n=17, dim=2):
    grid = build_grid(dim, n)
    nl = bistable_cubic(THETA)
    g = GridFunction.constant(grid, 1.0)
    u, _ = solve_homogenized(grid, Q_MEAN, nl, g)
    fprime_u = GridFunction(grid, nl.fprime(u.values))
    return grid, nl, g, u, fprime_u


class TestCorrector:
    def test_zero_fluctuation(self):
        grid, _, _, u, fprime_u = default_setup()
        chi = corrector(grid, Q_MEAN, fprime_u, GridFunction.zeros(grid), u)
        assert np.all(chi.values == 0.0)

    def test_zero_state(self):
        grid, _, _, _, fprime_u = default_setup()
        nu = GridFunction.constant(grid, 0.3)
        chi = corrector(grid, Q_MEAN, fprime_u, nu, GridFunction.zeros(grid))
        assert np.all(chi.values == 0.0)

    def test_matches_dense_oracle(self):
        grid = build_grid(2, 9)
        nl = bistable_cubic(THETA)
        g = GridFunction.constant(grid, 1.0)
        u, _ = solve_homogenized(grid, Q_MEAN, nl, g)
        fprime_u = GridFunction(grid, nl.fprime(u.values))
        rng = np.random.default_rng(77)
        nu = GridFunction(grid, rng.uniform(-0.5, 0.5, grid.interior_count))
        chi = corrector(grid, Q_MEAN, fprime_u, nu, u)
        dense = -np.linalg.solve(
            helpers.dense_operator(2, 9, Q_MEAN + fprime_u.values),
            nu.values * u.values,
        )
        assert np.abs(chi.values - dense).max() < 1e-9


class TestExpansionTerms:
    def run_instance(self, seed_index, n=17, epsilon=0.5, nl=None):
        grid = build_grid(2, n)
        nl = nl or bistable_cubic(THETA)
        model = build_short_range(Q_MEAN, AMPLITUDE)
        g = GridFunction.constant(grid, 1.0)
        u, _ = solve_homogenized(grid, Q_MEAN, nl, g)
        sample = sample_potential(model, grid, epsilon, realization_seed(101, seed_index))
        u_eps, _ = solve_semilinear(grid, sample.q_eps, nl, g)
        return grid, nl, g, sample, u_eps, u

    def test_zero_fluctuation_gives_zero_terms(self):
        grid, nl, g, _, _, u = self.run_instance(0)
        q_const = GridFunction.constant(grid, Q_MEAN)
        terms = expansion_terms(grid, q_const, Q_MEAN, nl, g, u.copy(), u)
        for t in (terms.t1, terms.t2, terms.t3, terms.t4, terms.t5, terms.xi, terms.z):
            assert np.all(t.values == 0.0)

    def test_linear_reaction_kills_taylor_terms(self):
        grid, nl, g, sample, u_eps, u = self.run_instance(1, nl=linear_reaction())
        terms = expansion_terms(grid, sample.q_eps, Q_MEAN, nl, g, u_eps, u)
        assert np.all(terms.r_eps.values == 0.0)
        assert np.all(terms.t4.values == 0.0)
        assert np.all(terms.t5.values == 0.0)

    def test_identity_on_random_instances(self):
        for k in range(5):
            grid, nl, g, sample, u_eps, u = self.run_instance(k)
            terms = expansion_terms(grid, sample.q_eps, Q_MEAN, nl, g, u_eps, u)
            total = (
                terms.t1.values
                + terms.t2.values
                + terms.t3.values
                + terms.t4.values
                + terms.t5.values
            )
            assert l2_norm(GridFunction(grid, total - terms.xi.values)) <= 1e-8

    def test_taylor_remainder_bound(self):
        grid, nl, g, sample, u_eps, u = self.run_instance(2)
        terms = expansion_terms(grid, sample.q_eps, Q_MEAN, nl, g, u_eps, u)
        lo = min(u_eps.values.min(), u.values.min())
        hi = max(u_eps.values.max(), u.values.max())
        second_bound = np.abs(nl.fsecond(np.linspace(lo, hi, 1001))).max()
        bound = 0.5 * second_bound * terms.xi.values**2
        assert np.all(np.abs(terms.r_eps.values) <= bound * (1 + 1e-9) + 1e-300)

    def test_h_eps_convention(self):
        # difference quotient where xi != 0, f'(u) at nodes with xi == 0
        grid = build_grid(2, 9)
        nl = bistable_cubic(THETA)
        g = GridFunction.constant(grid, 1.0)
        rng = np.random.default_rng(5)
        u = GridFunction(grid, rng.uniform(0.0, 0.2, grid.interior_count))
        u_eps = u.copy()
        u_eps.values[::2] += 0.01  # perturb half the nodes
        q = GridFunction.constant(grid, Q_MEAN)
        terms = expansion_terms(grid, q, Q_MEAN, nl, g, u_eps, u)
        xi = u_eps.values - u.values
        same = xi == 0.0
        assert np.array_equal(terms.h_eps.values[same], nl.fprime(u.values[same]))
        quot = (nl.f(u_eps.values[~same]) - nl.f(u.values[~same])) / xi[~same]
        assert np.allclose(terms.h_eps.values[~same], quot, rtol=1e-12)


class TestPredictedVarianceShort:
    def test_zero_phi(self):
        grid, _, _, u, fprime_u = default_setup()
        pred = predicted_variance_short(
            grid, u, GridFunction.zeros(grid), 0.25, Q_MEAN, fprime_u
        )
        assert pred.sigma2_phi == 0.0

    def test_zero_state(self):
        grid, _, _, _, fprime_u = default_setup()
        phi = GridFunction.constant(grid, 1.0)
        pred = predicted_variance_short(
            grid, GridFunction.zeros(grid), phi, 0.25, Q_MEAN, fprime_u
        )
        assert pred.sigma2_phi == 0.0

    def test_invalid_sigma2(self):
        grid, _, _, u, fprime_u = default_setup()
        with pytest.raises(ConfigurationError):
            predicted_variance_short(grid, u, u, 0.0, Q_MEAN, fprime_u)

    def test_quadrature_converges_under_refinement(self):
        values = []
        for n in (33, 65):
            grid, _, _, u, fprime_u = default_setup(n=n)
            phi = GridFunction.constant(grid, 1.0)
            pred = predicted_variance_short(grid, u, phi, 0.25, Q_MEAN, fprime_u)
            values.append(pred.sigma2_phi)
        assert abs(values[1] - values[0]) <= 0.02 * abs(values[0])

    def test_matches_direct_quadrature(self):
        grid, _, _, u, fprime_u = default_setup(n=33)
        phi = GridFunction.constant(grid, 1.0)
        pred = predicted_variance_short(grid, u, phi, 0.25, Q_MEAN, fprime_u)
        m = apply_linearized_inverse(grid, Q_MEAN, fprime_u, phi)
        direct = 0.25 * inner_product(
            GridFunction(grid, m.values * u.values),
            GridFunction(grid, m.values * u.values),
        )
        assert pred.sigma2_phi == pytest.approx(direct, rel=1e-12)


class TestPredictedVarianceLong:
    def test_zero_phi(self):
        grid, _, _, u, fprime_u = default_setup()
        pred = predicted_variance_long(
            grid, u, GridFunction.zeros(grid), 0.36, 1.0, Q_MEAN, fprime_u
        )
        assert pred.sigma2_phi == pytest.approx(0.0, abs=1e-30)

    def test_positive_for_random_phi(self):
        # |y - z|^(-alpha) is positive definite for 0 < alpha < dim
        grid, _, _, u, fprime_u = default_setup(n=17)
        rng = np.random.default_rng(11)
        for _ in range(20):
            phi = GridFunction(grid, rng.standard_normal(grid.interior_count))
            pred = predicted_variance_long(grid, u, phi, 0.36, 1.0, Q_MEAN, fprime_u)
            assert pred.sigma2_phi >= 0.0

    def test_quadrature_converges_under_refinement(self):
        values = []
        for n in (33, 65):
            grid, _, _, u, fprime_u = default_setup(n=n)
            phi = GridFunction.constant(grid, 1.0)
            pred = predicted_variance_long(grid, u, phi, 0.36, 1.0, Q_MEAN, fprime_u)
            values.append(pred.sigma2_phi)
        assert abs(values[1] - values[0]) <= 0.05 * abs(values[0])

    def test_matches_direct_double_sum(self):
        # brute-force O(N^2) double sum on a tiny grid
        grid, _, _, u, fprime_u = default_setup(n=9)
        phi = GridFunction.constant(grid, 1.0)
        alpha, kappa = 1.0, 0.36
        pred = predicted_variance_long(grid, u, phi, kappa, alpha, Q_MEAN, fprime_u)
        m = apply_linearized_inverse(grid, Q_MEAN, fprime_u, phi)
        w = m.values * u.values
        coords = np.stack([c.ravel() for c in grid.meshgrid()], axis=1)
        total = 0.0
        from homoglab.fluctuation import _ball_average_kernel

        diag_kernel = _ball_average_kernel(grid.dim, alpha, grid.h)
        for i in range(grid.interior_count):
            for j in range(grid.interior_count):
                if i == j:
                    total += w[i] * w[j] * diag_kernel
                else:
                    dist = np.linalg.norm(coords[i] - coords[j])
                    total += w[i] * w[j] / dist**alpha
        total *= kappa * grid.h ** (2 * grid.dim)
        assert pred.sigma2_phi == pytest.approx(total, rel=1e-10)

    def test_invalid_parameters(self):
        grid, _, _, u, fprime_u = default_setup()
        phi = GridFunction.constant(grid, 1.0)
        with pytest.raises(ConfigurationError):
            predicted_variance_long(grid, u, phi, 0.36, 2.5, Q_MEAN, fprime_u)
        with pytest.raises(ConfigurationError):
            predicted_variance_long(grid, u, phi, -1.0, 1.0, Q_MEAN, fprime_u)


class TestScalingInvariants:
    """Statistical behavior of the expansion terms across the epsilon ladder."""

    EPSILONS = (0.25, 0.125, 0.0625)

    def test_corrector_mean_square_scales_like_eps_to_dim(self):
        grid = build_grid(2, 129)
        nl = bistable_cubic(THETA)
        model = build_short_range(Q_MEAN, AMPLITUDE)
        g = GridFunction.constant(grid, 1.0)
        u, _ = solve_homogenized(grid, Q_MEAN, nl, g)
        fprime_u = GridFunction(grid, nl.fprime(u.values))
        means = []
        for eps in self.EPSILONS:
            acc = 0.0
            for k in range(200):
                sample = sample_potential(model, grid, eps, realization_seed(303, k))
                nu = GridFunction(grid, sample.q_eps.values - Q_MEAN)
                chi = corrector(grid, Q_MEAN, fprime_u, nu, u)
                acc += l2_norm(chi) ** 2
            means.append(acc / 200)
        slope, _ = fit_loglog_slope(list(zip(self.EPSILONS, means)))
        assert abs(slope - grid.dim) <= 0.4

    def test_remainder_dominated_by_corrector(self):
        # mean |z|^2 stays a bounded multiple of mean |chi|^2 as eps shrinks
        grid = build_grid(2, 129)
        nl = bistable_cubic(THETA)
        model = build_short_range(Q_MEAN, AMPLITUDE)
        g = GridFunction.constant(grid, 1.0)
        u, _ = solve_homogenized(grid, Q_MEAN, nl, g)
        fprime_u = GridFunction(grid, nl.fprime(u.values))
        ratios = []
        for eps in self.EPSILONS:
            chi_sq, z_sq = 0.0, 0.0
            for k in range(30):
                sample = sample_potential(model, grid, eps, realization_seed(404, k))
                u_eps, _ = solve_semilinear(grid, sample.q_eps, nl, g)
                nu = GridFunction(grid, sample.q_eps.values - Q_MEAN)
                chi = corrector(grid, Q_MEAN, fprime_u, nu, u)
                z = GridFunction(grid, u_eps.values - u.values - chi.values)
                chi_sq += l2_norm(chi) ** 2
                z_sq += l2_norm(z) ** 2
            ratios.append(z_sq / chi_sq)
        assert max(ratios) <= 1.0  # remainder strictly smaller in mean square
        assert ratios[-1] <= 2.0 * ratios[0] + 1e-12  # no blow-up as eps drops

    def test_sandwiched_operator_norm_shrinks(self):
        # mean of (|G nu G w| / |w|)^2 over random unit w drops like eps^dim
        grid = build_grid(2, 129)
        nl = bistable_cubic(THETA)
        model = build_short_range(Q_MEAN, AMPLITUDE)
        g = GridFunction.constant(grid, 1.0)
        u, _ = solve_homogenized(grid, Q_MEAN, nl, g)
        fprime_u = GridFunction(grid, nl.fprime(u.values))
        rng = np.random.default_rng(99)
        means = []
        for eps in self.EPSILONS:
            acc = 0.0
            for k in range(50):
                sample = sample_potential(model, grid, eps, realization_seed(505, k))
                nu = sample.q_eps.values - Q_MEAN
                w = rng.standard_normal(grid.interior_count)
                w_fn = GridFunction(grid, w)
                inner = apply_linearized_inverse(grid, Q_MEAN, fprime_u, w_fn)
                outer = apply_linearized_inverse(
                    grid, Q_MEAN, fprime_u, GridFunction(grid, nu * inner.values)
                )
                acc += (l2_norm(outer) / l2_norm(w_fn)) ** 2
            means.append(acc / 50)
        slope, _ = fit_loglog_slope(list(zip(self.EPSILONS, means)))
        assert abs(slope - grid.dim) <= 0.5
