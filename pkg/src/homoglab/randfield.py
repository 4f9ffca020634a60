"""Stationary random potentials q(x/eps, omega) = q_mean + nu(x/eps, omega).

Two built-in models:

* short_range -- shifted checkerboard: independent coins b_k, uniform on
  {-a, +a}, attached to unit lattice cells, plus one global uniform shift
  that makes the field strictly stationary.  Correlation in closed form:
  R(x) = a^2 prod_i max(0, 1 - |x_i|), so its integral is exactly a^2.

* long_range -- nu = a_Phi * tanh(gaussian), where the Gaussian lattice
  field has unit variance and covariance (1 + |x|^2)^(-alpha/2) with
  0 < alpha < dim, sampled by FFT circulant embedding.  tanh is odd and
  bounded, so nu is centered and |nu| <= a_Phi; its first Hermite
  coefficient c1 = E[g * Phi(g)] is computed by Gauss-Hermite quadrature
  and the covariance tail constant of nu is kappa = c1^2 * kappa_g.

Sampling is a pure function of (model, grid, epsilon, seed); per-realization
seeds come from a splittable mix of (base_seed, index) so parallel
scheduling never changes results.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.fft

from .errors import ConfigurationError, EmbeddingError, ValidationError
from .grid import Grid, GridFunction

SHORT_RANGE = "short_range"
LONG_RANGE = "long_range"

# Approximate-embedding guard: the clipped negative eigenvalue mass, as a
# fraction of the total absolute mass, must stay below these thresholds.
EMBED_NEG_FRAC_ACCEPT = 1e-3
EMBED_NEG_FRAC_LIMIT = 1e-2
EMBED_MAX_POINTS = 40_000_000

RESOLUTION_FACTOR = 8  # grid must resolve epsilon: h <= epsilon / 8


@dataclass(frozen=True)
class PotentialModel:
    """Random potential specification with exact correlation data.

    For short_range, `amplitude` is the coin value a and sigma^2 = a^2.
    For long_range, `alpha` is the covariance tail exponent, `phi_scale`
    the bound of Phi = phi_scale * tanh, `kappa_g` the Gaussian tail
    constant (1 for the built-in covariance), and `hermite_c1` the cached
    first Hermite coefficient of Phi.  `dim` is only meaningful for
    long_range, where alpha < dim is required.
    """

    kind: str
    q_mean: float
    bound: float
    amplitude: float = 0.0
    alpha: float = 0.0
    kappa_g: float = 1.0
    phi_scale: float = 0.0
    hermite_c1: float = 0.0
    dim: int = 0

    @property
    def kappa(self) -> float:
        """Tail constant of the covariance of nu: c1^2 * kappa_g."""
        return self.hermite_c1**2 * self.kappa_g

    def nu_bound(self) -> float:
        """Almost-sure bound on |nu|."""
        return self.amplitude if self.kind == SHORT_RANGE else self.phi_scale


@dataclass
class FieldSample:
    """One realization of the scaled potential on the grid's interior nodes."""

    q_eps: GridFunction
    epsilon: float
    seed: int


def build_short_range(q_mean: float, amplitude: float) -> PotentialModel:
    if amplitude <= 0.0:
        raise ConfigurationError(f"amplitude must be > 0, got {amplitude}")
    return PotentialModel(
        kind=SHORT_RANGE,
        q_mean=float(q_mean),
        bound=max(1.0, abs(q_mean) + amplitude),
        amplitude=float(amplitude),
    )


def gauss_hermite_c1(phi_scale: float, points: int = 64) -> float:
    """E[g * Phi(g)] for Phi = phi_scale * tanh, standard normal g."""
    x, w = np.polynomial.hermite_e.hermegauss(points)
    return float(np.sum(w * x * phi_scale * np.tanh(x)) / np.sqrt(2.0 * np.pi))


def build_long_range(
    q_mean: float, alpha: float, phi_scale: float, dim: int
) -> PotentialModel:
    if not 0.0 < alpha < dim:
        raise ConfigurationError(f"alpha must be in (0, dim={dim}), got {alpha}")
    if phi_scale <= 0.0:
        raise ConfigurationError(f"phi_scale must be > 0, got {phi_scale}")
    return PotentialModel(
        kind=LONG_RANGE,
        q_mean=float(q_mean),
        bound=max(1.0, abs(q_mean) + phi_scale),
        alpha=float(alpha),
        kappa_g=1.0,
        phi_scale=float(phi_scale),
        hermite_c1=gauss_hermite_c1(phi_scale),
        dim=int(dim),
    )


def exact_sigma2(model: PotentialModel) -> float:
    """Integral of the correlation function; closed form a^2 for short range."""
    if model.kind != SHORT_RANGE:
        raise ConfigurationError(
            "sigma2 undefined for long-range (the correlation integral diverges)"
        )
    return model.amplitude**2


def gauss_covariance(model: PotentialModel, r: np.ndarray) -> np.ndarray:
    """Covariance of the underlying Gaussian field at distance r."""
    return (1.0 + np.asarray(r, dtype=float) ** 2) ** (-model.alpha / 2.0)


def phi_covariance(model: PotentialModel, r, terms: int = 15) -> np.ndarray:
    """Covariance of nu = Phi(g) at distance r via the Hermite expansion.

    E[Phi(g_0) Phi(g_r)] = sum_k c_k^2 rho^k / k! with rho the Gaussian
    covariance and c_k = E[Phi(g) He_k(g)]; even coefficients vanish for the
    odd built-in Phi.  Truncated after `terms` coefficients.
    """
    if model.kind != LONG_RANGE:
        raise ConfigurationError("phi_covariance requires a long-range model")
    x, w = np.polynomial.hermite_e.hermegauss(128)
    w = w / np.sqrt(2.0 * np.pi)
    phi_vals = model.phi_scale * np.tanh(x)
    rho = gauss_covariance(model, r)
    total = np.zeros_like(np.asarray(rho, dtype=float))
    he_prev, he = np.ones_like(x), x.copy()
    kfac = 1.0
    for k in range(1, terms + 1):
        kfac *= k
        ck = float(np.sum(w * phi_vals * he))
        total += ck**2 / kfac * rho**k
        he_prev, he = he, x * he - k * he_prev
    return total


def realization_seed(base_seed: int, index: int) -> int:
    """64-bit seed for one realization, a splittable mix of (base_seed, index)."""
    ss = np.random.SeedSequence(entropy=int(base_seed), spawn_key=(int(index),))
    return int(ss.generate_state(1, np.uint64)[0])


def check_resolution(grid: Grid, epsilon: float) -> None:
    if epsilon <= 0.0:
        raise ConfigurationError(f"epsilon must be > 0, got {epsilon}")
    if grid.h > epsilon / RESOLUTION_FACTOR * (1.0 + 1e-12):
        raise ValidationError(
            f"resolution rule violated: h = {grid.h:.6g} > epsilon/"
            f"{RESOLUTION_FACTOR} = {epsilon / RESOLUTION_FACTOR:.6g}"
        )


def _short_range_lattice(model, grid, epsilon, rng):
    """Checkerboard values nu(x/eps) on the interior lattice, shape grid.shape."""
    shift = rng.random(grid.dim)
    n_cells = int(np.floor(1.0 / epsilon)) + 2
    coins = model.amplitude * (
        2.0 * rng.integers(0, 2, size=(n_cells,) * grid.dim) - 1.0
    )
    x = grid.axis_coordinates()
    axis_cells = [
        np.floor(x / epsilon + shift[axis]).astype(int) for axis in range(grid.dim)
    ]
    return coins[np.ix_(*axis_cells)]


@lru_cache(maxsize=4)
def _circulant_sqrt_spectrum(dim, m, delta, alpha):
    """sqrt of the (clipped, rescaled) circulant spectrum for the Gaussian field.

    Embeds the covariance on a torus of at least 4x the requested extent.
    Power-law tails never give an exactly nonnegative circulant, so the
    standard approximate embedding is used: negative eigenvalues are clipped
    to zero and the rest rescaled to preserve the variance, provided the
    clipped mass is a negligible fraction of the total; otherwise the torus
    is enlarged once more, and failing that an EmbeddingError is raised.
    """
    pads = (4, 8) if dim == 2 else (4,)
    best = None
    for pad in pads:
        n_embed = scipy.fft.next_fast_len(pad * m, real=True)
        if n_embed**dim > EMBED_MAX_POINTS:
            break
        k = np.arange(n_embed, dtype=float)
        lag = np.minimum(k, n_embed - k) * delta
        lag2 = lag**2
        r2 = lag2
        for _ in range(dim - 1):
            r2 = r2[..., None] + lag2
        cov = (1.0 + r2) ** (-alpha / 2.0)
        lam = scipy.fft.fftn(cov).real
        neg_frac = -lam[lam < 0.0].sum() / np.abs(lam).sum()
        if best is None or neg_frac < best[0]:
            best = (neg_frac, n_embed, lam)
        if neg_frac <= EMBED_NEG_FRAC_ACCEPT:
            break
    if best is None:
        raise EmbeddingError(
            f"embedding lattice exceeds {EMBED_MAX_POINTS} points for m={m}, "
            f"dim={dim}"
        )
    neg_frac, n_embed, lam = best
    if neg_frac > EMBED_NEG_FRAC_LIMIT:
        raise EmbeddingError(
            f"circulant embedding too indefinite: clipped eigenvalue mass "
            f"fraction {neg_frac:.3e} exceeds {EMBED_NEG_FRAC_LIMIT:.0e} "
            f"(m={m}, delta={delta:.4g}, alpha={alpha})"
        )
    clipped = np.maximum(lam, 0.0)
    clipped *= lam.sum() / clipped.sum()
    return n_embed, np.sqrt(clipped)


def sample_gaussian_lattice(
    model: PotentialModel, grid: Grid, epsilon: float, seed: int
) -> np.ndarray:
    """One realization of the unit-variance Gaussian field g(x/eps) at
    interior nodes, shape grid.shape.  Deterministic in (model, grid,
    epsilon, seed)."""
    if model.kind != LONG_RANGE:
        raise ConfigurationError("Gaussian lattice requires a long-range model")
    check_resolution(grid, epsilon)
    delta = grid.h / epsilon
    n_embed, sqrt_lam = _circulant_sqrt_spectrum(grid.dim, grid.m, delta, model.alpha)
    rng = np.random.default_rng(seed)
    shape = (n_embed,) * grid.dim
    noise = rng.standard_normal((2,) + shape)
    spectral = sqrt_lam * (noise[0] + 1j * noise[1])
    z = scipy.fft.fftn(spectral) / np.sqrt(float(n_embed**grid.dim))
    block = tuple(slice(0, grid.m) for _ in range(grid.dim))
    return np.ascontiguousarray(z.real[block])


def sample_potential(
    model: PotentialModel, grid: Grid, epsilon: float, seed: int
) -> FieldSample:
    """Nodewise q_mean + nu(x/eps) for one seeded realization."""
    check_resolution(grid, epsilon)
    if model.kind == SHORT_RANGE:
        rng = np.random.default_rng(seed)
        nu = _short_range_lattice(model, grid, epsilon, rng)
    elif model.kind == LONG_RANGE:
        nu = model.phi_scale * np.tanh(
            sample_gaussian_lattice(model, grid, epsilon, seed)
        )
    else:
        raise ConfigurationError(f"unknown model kind {model.kind!r}")
    q = GridFunction(grid, (model.q_mean + nu).ravel())
    return FieldSample(q_eps=q, epsilon=float(epsilon), seed=int(seed))


def _normalize_lag(grid: Grid, lag) -> tuple[int, ...]:
    if isinstance(lag, (int, np.integer)):
        lag = (int(lag),) + (0,) * (grid.dim - 1)
    lag = tuple(int(c) for c in lag)
    if len(lag) != grid.dim:
        raise ConfigurationError(f"lag {lag} must have {grid.dim} components")
    if any(abs(c) >= grid.m for c in lag):
        raise ConfigurationError(f"lag {lag} falls outside the interior lattice")
    return lag


def _lag_slices(grid: Grid, lag):
    """Slices (base, shifted) so that shifted = base + lag stays interior."""
    base, shifted = [], []
    for c in lag:
        lo, hi = max(0, -c), grid.m - max(0, c)
        base.append(slice(lo, hi))
        shifted.append(slice(lo + c, hi + c))
    return tuple(base), tuple(shifted)


def empirical_correlation(
    model: PotentialModel,
    grid: Grid,
    epsilon: float,
    lags,
    n_samples: int,
    seed: int,
) -> list[tuple[tuple[int, ...], float, float]]:
    """Monte Carlo estimate of E[nu(x + lag h) nu(x)] at node offsets.

    Averages nu(base + lag) * nu(base) over every admissible interior base
    point, then over n_samples independent realizations; the standard error
    comes from the spread of the per-realization averages.
    """
    if n_samples < 2:
        raise ConfigurationError(f"n_samples must be >= 2, got {n_samples}")
    lags = [_normalize_lag(grid, lag) for lag in lags]
    slices = [_lag_slices(grid, lag) for lag in lags]
    per_sample = np.empty((len(lags), n_samples))
    for i in range(n_samples):
        sample = sample_potential(model, grid, epsilon, realization_seed(seed, i))
        nu = sample.q_eps.reshaped() - model.q_mean
        for j, (base, shifted) in enumerate(slices):
            per_sample[j, i] = float(np.mean(nu[base] * nu[shifted]))
    out = []
    for j, lag in enumerate(lags):
        est = float(np.mean(per_sample[j]))
        se = float(np.std(per_sample[j], ddof=1) / np.sqrt(n_samples))
        out.append((lag, est, se))
    return out


def empirical_fourth_moment(
    model: PotentialModel,
    grid: Grid,
    epsilon: float,
    quadruple,
    n_samples: int,
    seed: int,
) -> tuple[float, float]:
    """Estimate E[nu(x)nu(y)nu(t)nu(s)] - E[nu(x)nu(y)] E[nu(t)nu(s)].

    `quadruple` holds four interior node indices (flat or per-axis tuples);
    repeated points are legal.  Returns (estimate, jackknife standard error).
    """
    if n_samples < 2:
        raise ConfigurationError(f"n_samples must be >= 2, got {n_samples}")
    flat = []
    for node in quadruple:
        if isinstance(node, (tuple, list)):
            flat.append(int(np.ravel_multi_index(tuple(node), grid.shape)))
        else:
            flat.append(int(node))
    if len(flat) != 4:
        raise ConfigurationError("quadruple must contain exactly 4 nodes")
    vals = np.empty((n_samples, 4))
    for i in range(n_samples):
        sample = sample_potential(model, grid, epsilon, realization_seed(seed, i))
        vals[i] = sample.q_eps.values[flat] - model.q_mean
    p = vals[:, 0] * vals[:, 1] * vals[:, 2] * vals[:, 3]
    a = vals[:, 0] * vals[:, 1]
    b = vals[:, 2] * vals[:, 3]
    est = float(np.mean(p) - np.mean(a) * np.mean(b))
    # leave-one-out jackknife for the nonlinear (product of means) part
    n = n_samples
    loo_p = (p.sum() - p) / (n - 1)
    loo_a = (a.sum() - a) / (n - 1)
    loo_b = (b.sum() - b) / (n - 1)
    loo = loo_p - loo_a * loo_b
    se = float(np.sqrt((n - 1) / n * np.sum((loo - np.mean(loo)) ** 2)))
    return est, se
