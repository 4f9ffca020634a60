"""Monte Carlo studies: error scaling in epsilon and limiting distributions.

A study is described by a StudyConfig (plain data, JSON-friendly).  The
scaling study estimates E ||u_eps - u||_L2^2 on a ladder of epsilons and
fits the log-log slope (expected: dim for short-range potentials, alpha for
long-range).  The distribution study collects samples of

    X_k = eps^(-beta/2) <phi, u_eps - u>,   beta = dim or alpha,

at the smallest epsilon and compares their empirical variance and shape
against the predicted Gaussian limit.

Realizations are independent; realization k always draws its seed from
(base_seed, k), and aggregation folds results in index order, so output is
bitwise identical no matter how many workers run the realizations.
"""

from __future__ import annotations

import dataclasses
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr

from . import fluctuation, pde, randfield
from .errors import (
    ConfigurationError,
    DegenerateSamplesError,
    SolverError,
)
from .grid import Grid, GridFunction, build_grid, inner_product, l2_norm, linf_norm
from .randfield import LONG_RANGE, SHORT_RANGE, realization_seed

OBSERVABLE_ERROR = "error"
OBSERVABLE_CORRECTOR = "corrector"

_BOOTSTRAP_TAG = 0xB0075
_N_BOOTSTRAP = 1000


@dataclass(frozen=True)
class ModelSpec:
    kind: str = SHORT_RANGE
    q_mean: float = 5.0
    amplitude: float = 0.5
    alpha: float = 1.0
    phi_scale: float = 1.0


@dataclass(frozen=True)
class NonlinearitySpec:
    name: str = "bistable"
    theta: float = 0.3
    margin_c: float = 0.5


@dataclass(frozen=True)
class FieldSpec:
    """Source / test function spec: constant value, or value * prod sin(pi x_i)."""

    kind: str = "constant"
    value: float = 1.0


@dataclass(frozen=True)
class Bands:
    """Acceptance bands for --assert; overridable from the config."""

    slope_halfwidth: float = 0.4
    variance_ratio_low: float = 0.8
    variance_ratio_high: float = 1.2
    skewness_max: float = 0.25
    excess_kurtosis_max: float = 0.5
    ks_max: float = 0.1


@dataclass(frozen=True)
class StudyConfig:
    dim: int = 2
    n: int = 65
    epsilons: tuple = (0.5, 0.25, 0.125)
    n_realizations: int = 16
    base_seed: int = 1234
    threads: int = 1
    model: ModelSpec = ModelSpec()
    nonlinearity: NonlinearitySpec = NonlinearitySpec()
    g: FieldSpec = FieldSpec()
    phi: FieldSpec = FieldSpec()
    observable: str = OBSERVABLE_ERROR
    bands: Bands = Bands()


def build_model(spec: ModelSpec, dim: int) -> randfield.PotentialModel:
    if spec.kind == SHORT_RANGE:
        if spec.amplitude == 0.0:
            # degenerate escape hatch: nu == 0, studies report degenerate
            return randfield.PotentialModel(
                kind=SHORT_RANGE,
                q_mean=float(spec.q_mean),
                bound=max(1.0, abs(spec.q_mean)),
                amplitude=0.0,
            )
        return randfield.build_short_range(spec.q_mean, spec.amplitude)
    if spec.kind == LONG_RANGE:
        return randfield.build_long_range(spec.q_mean, spec.alpha, spec.phi_scale, dim)
    raise ConfigurationError(f"unknown model kind {spec.kind!r}")


def build_nonlinearity(spec: NonlinearitySpec) -> pde.Nonlinearity:
    if spec.name == "bistable":
        return pde.bistable_cubic(theta=spec.theta, margin_c=spec.margin_c)
    if spec.name == "linear":
        return pde.linear_reaction(margin_c=spec.margin_c)
    raise ConfigurationError(f"unknown nonlinearity {spec.name!r}")


def build_field(spec: FieldSpec, grid: Grid) -> GridFunction:
    if spec.kind == "constant":
        return GridFunction.constant(grid, spec.value)
    if spec.kind == "sine":
        coords = grid.meshgrid()
        vals = np.full(grid.shape, float(spec.value))
        for x in coords:
            vals = vals * np.sin(np.pi * x)
        return GridFunction(grid, vals.ravel())
    raise ConfigurationError(f"unknown field kind {spec.kind!r}")


def validate_config(cfg: StudyConfig) -> None:
    grid = build_grid(cfg.dim, cfg.n)
    if len(cfg.epsilons) == 0:
        raise ConfigurationError("epsilons must not be empty")
    eps = [float(e) for e in cfg.epsilons]
    if any(b >= a for a, b in zip(eps, eps[1:])):
        raise ConfigurationError(
            f"epsilons must be strictly decreasing, got {tuple(eps)}"
        )
    for e in eps:
        randfield.check_resolution(grid, e)
    if cfg.n_realizations < 8:
        raise ConfigurationError(
            f"n_realizations must be >= 8, got {cfg.n_realizations}"
        )
    if cfg.threads < 1:
        raise ConfigurationError(f"threads must be >= 1, got {cfg.threads}")
    if cfg.observable not in (OBSERVABLE_ERROR, OBSERVABLE_CORRECTOR):
        raise ConfigurationError(f"unknown observable {cfg.observable!r}")
    build_model(cfg.model, cfg.dim)
    build_nonlinearity(cfg.nonlinearity)


@dataclass
class EpsilonStats:
    epsilon: float
    mean_sq_error: float
    std_error: float
    mean_linf: float
    n_realizations: int


@dataclass
class DistributionStats:
    epsilon: float
    beta: float
    samples: list = field(default_factory=list)
    seeds: list = field(default_factory=list)
    mean: float = 0.0
    empirical_variance: float = 0.0
    predicted_variance: float = 0.0
    variance_ratio: float = 0.0
    skewness: float = 0.0
    excess_kurtosis: float = 0.0
    ks_statistic_vs_normal: float = 0.0
    degenerate: bool = False


@dataclass
class McSummary:
    kind: str
    per_epsilon: list = field(default_factory=list)
    fitted_slope: float | None = None
    slope_ci: tuple | None = None
    distribution: DistributionStats | None = None
    degenerate: bool = False

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        if self.slope_ci is not None:
            out["slope_ci"] = list(self.slope_ci)
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "McSummary":
        per_eps = [EpsilonStats(**row) for row in d["per_epsilon"]]
        dist = None
        if d.get("distribution") is not None:
            dist = DistributionStats(**d["distribution"])
        ci = d.get("slope_ci")
        return cls(
            kind=d["kind"],
            per_epsilon=per_eps,
            fitted_slope=d.get("fitted_slope"),
            slope_ci=tuple(ci) if ci is not None else None,
            distribution=dist,
            degenerate=d.get("degenerate", False),
        )


def fit_loglog_slope(points) -> tuple[float, float]:
    """Ordinary least squares of log y on log x; returns (slope, intercept)."""
    points = list(points)
    if len(points) < 3:
        raise ConfigurationError(f"need >= 3 points for a slope fit, got {len(points)}")
    xs = np.array([p[0] for p in points], dtype=float)
    ys = np.array([p[1] for p in points], dtype=float)
    if np.any(xs <= 0.0) or np.any(ys <= 0.0):
        raise ConfigurationError("slope fit requires positive x and y")
    if len(np.unique(xs)) != len(xs):
        raise ConfigurationError("slope fit requires distinct x values")
    slope, intercept = np.polyfit(np.log(xs), np.log(ys), 1)
    return float(slope), float(intercept)


def normality_stats(samples, reference_variance: float) -> dict:
    """Moment shape statistics and the KS distance to N(0, reference_variance).

    Uses population moment estimators; the KS statistic standardizes by the
    reference variance only (no recentering), with the normal CDF evaluated
    through the error function.
    """
    x = np.asarray(samples, dtype=float)
    if x.size < 8:
        raise ConfigurationError(f"need >= 8 samples, got {x.size}")
    if reference_variance <= 0.0:
        raise ConfigurationError("reference_variance must be > 0")
    centered = x - x.mean()
    m2 = float(np.mean(centered**2))
    if m2 == 0.0:
        raise DegenerateSamplesError("samples have zero variance")
    m3 = float(np.mean(centered**3))
    m4 = float(np.mean(centered**4))
    z = np.sort(x / np.sqrt(reference_variance))
    cdf = ndtr(z)
    n = x.size
    upper = np.max(np.arange(1, n + 1) / n - cdf)
    lower = np.max(cdf - np.arange(0, n) / n)
    return {
        "skewness": m3 / m2**1.5,
        "excess_kurtosis": m4 / m2**2 - 3.0,
        "ks_statistic": float(max(upper, lower)),
    }


# ---------------------------------------------------------------------------
# worker plumbing: one global context per process, tasks are index tuples
# ---------------------------------------------------------------------------

_CTX = None


def _init_worker(payload):
    global _CTX
    cfg = payload["cfg"]
    grid = build_grid(cfg.dim, cfg.n)
    model = build_model(cfg.model, cfg.dim)
    nl = build_nonlinearity(cfg.nonlinearity)
    _CTX = {
        "cfg": cfg,
        "grid": grid,
        "model": model,
        "nl": nl,
        "g": GridFunction(grid, payload["g_values"]),
        "u": GridFunction(grid, payload["u_values"]),
        "m_values": payload.get("m_values"),
    }


def _solve_realization(epsilon, index):
    """Sample one potential and solve the heterogeneous problem."""
    ctx = _CTX
    seed = realization_seed(ctx["cfg"].base_seed, index)
    sample = randfield.sample_potential(ctx["model"], ctx["grid"], epsilon, seed)
    try:
        u_eps, _ = pde.solve_semilinear(ctx["grid"], sample.q_eps, ctx["nl"], ctx["g"])
    except SolverError as exc:
        raise SolverError(
            f"realization index {index} (seed {seed}, eps {epsilon}) failed: {exc}"
        ) from exc
    return seed, sample, u_eps


def _scaling_task(task):
    eps_index, index = task
    ctx = _CTX
    epsilon = float(ctx["cfg"].epsilons[eps_index])
    _, _, u_eps = _solve_realization(epsilon, index)
    diff = GridFunction(ctx["grid"], u_eps.values - ctx["u"].values)
    return eps_index, index, l2_norm(diff) ** 2, linf_norm(diff)


def _distribution_task(index):
    ctx = _CTX
    cfg = ctx["cfg"]
    epsilon = float(min(cfg.epsilons))
    beta = float(cfg.dim if ctx["model"].kind == SHORT_RANGE else ctx["model"].alpha)
    scale = epsilon ** (-beta / 2.0)
    grid, u = ctx["grid"], ctx["u"]
    if cfg.observable == OBSERVABLE_CORRECTOR:
        seed = realization_seed(cfg.base_seed, index)
        sample = randfield.sample_potential(ctx["model"], grid, epsilon, seed)
        nu = sample.q_eps.values - ctx["model"].q_mean
        # <phi, -chi> = <G phi, nu u> by self-adjointness of the solve
        x_val = scale * grid.h**grid.dim * float(np.dot(ctx["m_values"], nu * u.values))
        return index, seed, x_val, np.nan, np.nan
    seed, _, u_eps = _solve_realization(epsilon, index)
    diff = GridFunction(grid, u_eps.values - u.values)
    phi = build_field(cfg.phi, grid)
    x_val = scale * inner_product(phi, diff)
    return index, seed, x_val, l2_norm(diff) ** 2, linf_norm(diff)


def _run_tasks(task_fn, tasks, payload, threads):
    global _CTX
    if threads <= 1:
        _init_worker(payload)
        try:
            return [task_fn(t) for t in tasks]
        finally:
            _CTX = None
    chunksize = max(1, len(tasks) // (threads * 8))
    with ProcessPoolExecutor(
        max_workers=threads, initializer=_init_worker, initargs=(payload,)
    ) as pool:
        return list(pool.map(task_fn, tasks, chunksize=chunksize))


def _prepare(cfg: StudyConfig):
    validate_config(cfg)
    grid = build_grid(cfg.dim, cfg.n)
    model = build_model(cfg.model, cfg.dim)
    nl = build_nonlinearity(cfg.nonlinearity)
    g = build_field(cfg.g, grid)
    u, _ = pde.solve_homogenized(grid, model.q_mean, nl, g)
    return grid, model, nl, g, u


def _bootstrap_slope_ci(epsilons, sq_errors, base_seed):
    """Percentile bootstrap CI of the log-log slope over realizations."""
    rng = np.random.default_rng(
        np.random.SeedSequence(entropy=int(base_seed), spawn_key=(_BOOTSTRAP_TAG,))
    )
    n_real = sq_errors.shape[1]
    slopes = np.empty(_N_BOOTSTRAP)
    log_eps = np.log(np.asarray(epsilons, dtype=float))
    for b in range(_N_BOOTSTRAP):
        idx = rng.integers(0, n_real, size=n_real)
        means = sq_errors[:, idx].mean(axis=1)
        slopes[b] = np.polyfit(log_eps, np.log(means), 1)[0]
    lo, hi = np.percentile(slopes, [2.5, 97.5])
    return float(lo), float(hi)


def run_scaling_study(cfg: StudyConfig) -> McSummary:
    """Estimate E ||u_eps - u||^2 on the epsilon ladder and fit its slope."""
    grid, model, nl, g, u = _prepare(cfg)
    payload = {"cfg": cfg, "g_values": g.values, "u_values": u.values}
    tasks = [
        (i, k) for i in range(len(cfg.epsilons)) for k in range(cfg.n_realizations)
    ]
    results = _run_tasks(_scaling_task, tasks, payload, cfg.threads)

    n_eps = len(cfg.epsilons)
    sq = np.zeros((n_eps, cfg.n_realizations))
    linf = np.zeros_like(sq)
    for eps_index, index, sq_err, linf_err in sorted(results):
        sq[eps_index, index] = sq_err
        linf[eps_index, index] = linf_err

    per_eps = []
    for i, eps in enumerate(cfg.epsilons):
        per_eps.append(
            EpsilonStats(
                epsilon=float(eps),
                mean_sq_error=float(sq[i].mean()),
                std_error=float(np.std(sq[i], ddof=1) / np.sqrt(cfg.n_realizations)),
                mean_linf=float(linf[i].mean()),
                n_realizations=cfg.n_realizations,
            )
        )

    summary = McSummary(kind="scaling", per_epsilon=per_eps)
    if any(row.mean_sq_error <= 0.0 for row in per_eps):
        summary.degenerate = True
        return summary
    if len(cfg.epsilons) >= 3:
        slope, _ = fit_loglog_slope(
            [(row.epsilon, row.mean_sq_error) for row in per_eps]
        )
        summary.fitted_slope = slope
        summary.slope_ci = _bootstrap_slope_ci(
            [row.epsilon for row in per_eps], sq, cfg.base_seed
        )
    return summary


def run_distribution_study(cfg: StudyConfig) -> McSummary:
    """Sample X_k = eps^(-beta/2) <phi, u_eps - u> at the smallest epsilon."""
    grid, model, nl, g, u = _prepare(cfg)
    epsilon = float(min(cfg.epsilons))
    beta = float(cfg.dim if model.kind == SHORT_RANGE else model.alpha)
    phi = build_field(cfg.phi, grid)
    fprime_u = GridFunction(grid, nl.fprime(u.values))

    degenerate_model = model.nu_bound() == 0.0
    predicted = 0.0
    m_values = None
    if not degenerate_model:
        if model.kind == SHORT_RANGE:
            pred = fluctuation.predicted_variance_short(
                grid, u, phi, randfield.exact_sigma2(model), model.q_mean, fprime_u
            )
        else:
            pred = fluctuation.predicted_variance_long(
                grid, u, phi, model.kappa, model.alpha, model.q_mean, fprime_u
            )
        predicted = pred.sigma2_phi
        m_values = pred.m_field.values
    elif cfg.observable == OBSERVABLE_CORRECTOR:
        m_values = np.zeros(grid.interior_count)

    payload = {
        "cfg": cfg,
        "g_values": g.values,
        "u_values": u.values,
        "m_values": m_values,
    }
    results = _run_tasks(
        _distribution_task, list(range(cfg.n_realizations)), payload, cfg.threads
    )
    results.sort()
    seeds = [int(r[1]) for r in results]
    samples = np.array([r[2] for r in results])

    dist = DistributionStats(
        epsilon=epsilon,
        beta=beta,
        samples=[float(v) for v in samples],
        seeds=seeds,
        mean=float(samples.mean()),
        predicted_variance=float(predicted),
    )
    summary = McSummary(kind="distribution", distribution=dist)

    if cfg.observable == OBSERVABLE_ERROR:
        sq = np.array([r[3] for r in results])
        linf = np.array([r[4] for r in results])
        summary.per_epsilon = [
            EpsilonStats(
                epsilon=epsilon,
                mean_sq_error=float(sq.mean()),
                std_error=float(np.std(sq, ddof=1) / np.sqrt(cfg.n_realizations)),
                mean_linf=float(linf.mean()),
                n_realizations=cfg.n_realizations,
            )
        ]

    if degenerate_model or float(np.var(samples)) == 0.0:
        dist.degenerate = True
        summary.degenerate = True
        return summary

    dist.empirical_variance = float(np.var(samples, ddof=1))
    dist.variance_ratio = dist.empirical_variance / dist.predicted_variance
    shape = normality_stats(samples, dist.predicted_variance)
    dist.skewness = float(shape["skewness"])
    dist.excess_kurtosis = float(shape["excess_kurtosis"])
    dist.ks_statistic_vs_normal = float(shape["ks_statistic"])
    return summary


def check_bands(summary: McSummary, cfg: StudyConfig) -> list[str]:
    """Return a list of violated acceptance-band descriptions (empty = pass)."""
    bands = cfg.bands
    violations = []
    if summary.degenerate:
        return ["study is degenerate (nu == 0); bands not applicable"]
    if summary.kind == "scaling":
        model = build_model(cfg.model, cfg.dim)
        expected = float(cfg.dim if model.kind == SHORT_RANGE else model.alpha)
        if summary.fitted_slope is None:
            violations.append("no slope fitted (need >= 3 epsilons)")
        elif abs(summary.fitted_slope - expected) > bands.slope_halfwidth:
            violations.append(
                f"fitted slope {summary.fitted_slope:.3f} outside "
                f"{expected} +- {bands.slope_halfwidth}"
            )
    elif summary.kind == "distribution":
        d = summary.distribution
        if not bands.variance_ratio_low <= d.variance_ratio <= bands.variance_ratio_high:
            violations.append(
                f"variance ratio {d.variance_ratio:.3f} outside "
                f"[{bands.variance_ratio_low}, {bands.variance_ratio_high}]"
            )
        if abs(d.skewness) > bands.skewness_max:
            violations.append(f"|skewness| {abs(d.skewness):.3f} > {bands.skewness_max}")
        if abs(d.excess_kurtosis) > bands.excess_kurtosis_max:
            violations.append(
                f"|excess kurtosis| {abs(d.excess_kurtosis):.3f} > "
                f"{bands.excess_kurtosis_max}"
            )
        if d.ks_statistic_vs_normal > bands.ks_max:
            violations.append(
                f"KS statistic {d.ks_statistic_vs_normal:.3f} > {bands.ks_max}"
            )
    return violations
