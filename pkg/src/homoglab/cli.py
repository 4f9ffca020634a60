"""Command-line front end: JSON configs in, JSON/CSV results out.

Subcommands
-----------
solve         one realization at the smallest epsilon: solution fields and
              expansion-term norms
scaling       scaling study -> summary.json + per_epsilon.csv
distribution  distribution study -> summary.json + samples.csv
field-check   correlation / fourth-moment diagnostics -> field_check.csv
green         one Green's-function column -> green.csv

Exit codes: 0 success, 2 configuration error, 3 solver error, 4 acceptance
band violated under --assert.  CSV files use '.' decimals, ',' separators,
and a mandatory header row; all files are UTF-8.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import fluctuation, mc, pde, randfield
from .errors import ConfigurationError, HomoglabError, SolverError
from .grid import GridFunction, build_grid, l2_norm, linf_norm
from .mc import (
    Bands,
    FieldSpec,
    McSummary,
    ModelSpec,
    NonlinearitySpec,
    StudyConfig,
)
from .randfield import SHORT_RANGE, realization_seed

_NESTED = {
    "model": ModelSpec,
    "nonlinearity": NonlinearitySpec,
    "g": FieldSpec,
    "phi": FieldSpec,
    "bands": Bands,
}

_SCALARS = {
    "dim": int,
    "n": int,
    "n_realizations": int,
    "base_seed": int,
    "threads": int,
    "observable": str,
}


def _build_section(cls, doc, path):
    if not isinstance(doc, dict):
        raise ConfigurationError(f"config section '{path}' must be an object")
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(doc) - names)
    if unknown:
        raise ConfigurationError(
            f"unknown config key(s) in '{path}': {', '.join(unknown)}"
        )
    return cls(**doc)


def config_from_dict(doc: dict) -> StudyConfig:
    """Strict conversion of a JSON document into a validated StudyConfig."""
    if not isinstance(doc, dict):
        raise ConfigurationError("config root must be a JSON object")
    known = set(_SCALARS) | set(_NESTED) | {"epsilons"}
    unknown = sorted(set(doc) - known)
    if unknown:
        raise ConfigurationError(f"unknown config key(s): {', '.join(unknown)}")
    kwargs = {}
    for key, caster in _SCALARS.items():
        if key in doc:
            kwargs[key] = caster(doc[key])
    if "epsilons" in doc:
        eps = doc["epsilons"]
        if not isinstance(eps, (list, tuple)):
            raise ConfigurationError("'epsilons' must be a list")
        kwargs["epsilons"] = tuple(float(e) for e in eps)
    for key, cls in _NESTED.items():
        if key in doc:
            kwargs[key] = _build_section(cls, doc[key], key)
    cfg = StudyConfig(**kwargs)
    mc.validate_config(cfg)
    return cfg


def _apply_override(doc: dict, assignment: str) -> None:
    if "=" not in assignment:
        raise ConfigurationError(f"override '{assignment}' is not of form key=value")
    path, raw = assignment.split("=", 1)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    keys = path.strip().split(".")
    target = doc
    for key in keys[:-1]:
        target = target.setdefault(key, {})
        if not isinstance(target, dict):
            raise ConfigurationError(f"override path '{path}' crosses a scalar")
    target[keys[-1]] = value


def parse_config(path, overrides=()) -> StudyConfig:
    """Load, override, and validate a JSON study configuration."""
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"config file not found: {path}")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigurationError(
            f"config parse error at line {exc.lineno}, column {exc.colno}: {exc.msg}"
        ) from exc
    for assignment in overrides:
        _apply_override(doc, assignment)
    return config_from_dict(doc)


def _write_csv(path: Path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([repr(v) if isinstance(v, float) else v for v in row])


def _write_summary(path: Path, summary: McSummary):
    path.write_text(
        json.dumps(summary.to_dict(), indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )


def _coord_header(dim):
    return [f"x{i + 1}" for i in range(dim)]


def cmd_solve(cfg: StudyConfig, out: Path) -> None:
    grid = build_grid(cfg.dim, cfg.n)
    model = mc.build_model(cfg.model, cfg.dim)
    nl = mc.build_nonlinearity(cfg.nonlinearity)
    g = mc.build_field(cfg.g, grid)
    epsilon = float(min(cfg.epsilons))
    seed = realization_seed(cfg.base_seed, 0)
    sample = randfield.sample_potential(model, grid, epsilon, seed)
    u, _ = pde.solve_homogenized(grid, model.q_mean, nl, g)
    u_eps, report = pde.solve_semilinear(grid, sample.q_eps, nl, g)
    terms = fluctuation.expansion_terms(
        grid, sample.q_eps, model.q_mean, nl, g, u_eps, u
    )
    identity = GridFunction(
        grid,
        terms.t1.values
        + terms.t2.values
        + terms.t3.values
        + terms.t4.values
        + terms.t5.values
        - terms.xi.values,
    )
    doc = {
        "epsilon": epsilon,
        "seed": seed,
        "newton_iterations": report.newton_iterations,
        "final_residual_l2": report.final_residual_l2,
        "cg_iterations_total": report.cg_iterations_total,
        "norms": {
            "u_eps_l2": l2_norm(u_eps),
            "u_l2": l2_norm(u),
            "xi_l2": l2_norm(terms.xi),
            "xi_linf": linf_norm(terms.xi),
            "t1_l2": l2_norm(terms.t1),
            "t2_l2": l2_norm(terms.t2),
            "t3_l2": l2_norm(terms.t3),
            "t4_l2": l2_norm(terms.t4),
            "t5_l2": l2_norm(terms.t5),
            "expansion_identity_l2": l2_norm(identity),
        },
    }
    (out / "solution.json").write_text(
        json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    coords = np.stack([c.ravel() for c in grid.meshgrid()], axis=1)
    rows = (
        [int(i), *(float(c) for c in coords[i]), float(u_eps.values[i]),
         float(u.values[i]), float(terms.xi.values[i])]
        for i in range(grid.interior_count)
    )
    _write_csv(
        out / "fields.csv",
        ["index", *_coord_header(grid.dim), "u_eps", "u", "xi"],
        rows,
    )


def cmd_scaling(cfg: StudyConfig, out: Path, do_assert: bool) -> int:
    summary = mc.run_scaling_study(cfg)
    _write_summary(out / "summary.json", summary)
    _write_csv(
        out / "per_epsilon.csv",
        ["epsilon", "mean_sq_error", "std_error", "mean_linf", "n_realizations"],
        [
            [row.epsilon, row.mean_sq_error, row.std_error, row.mean_linf,
             row.n_realizations]
            for row in summary.per_epsilon
        ],
    )
    return _assert_bands(summary, cfg, do_assert)


def cmd_distribution(cfg: StudyConfig, out: Path, do_assert: bool) -> int:
    summary = mc.run_distribution_study(cfg)
    _write_summary(out / "summary.json", summary)
    dist = summary.distribution
    _write_csv(
        out / "samples.csv",
        ["realization_index", "seed", "x_value"],
        [[i, dist.seeds[i], dist.samples[i]] for i in range(len(dist.samples))],
    )
    return _assert_bands(summary, cfg, do_assert)


def _assert_bands(summary, cfg, do_assert) -> int:
    if not do_assert:
        return 0
    violations = mc.check_bands(summary, cfg)
    if violations:
        for v in violations:
            print(f"band violation: {v}", file=sys.stderr)
        return 4
    return 0


def cmd_field_check(cfg: StudyConfig, out: Path) -> None:
    grid = build_grid(cfg.dim, cfg.n)
    model = mc.build_model(cfg.model, cfg.dim)
    epsilon = float(min(cfg.epsilons))
    corr_len_nodes = max(1, int(round(epsilon / grid.h)))
    lag_sizes = sorted(
        {0, corr_len_nodes // 2, corr_len_nodes, min(2 * corr_len_nodes, grid.m - 1)}
    )
    lags = [(k,) + (0,) * (grid.dim - 1) for k in lag_sizes]
    estimates = randfield.empirical_correlation(
        model, grid, epsilon, lags, cfg.n_realizations, cfg.base_seed
    )
    rows = []
    for lag, est, se in estimates:
        r = np.linalg.norm(np.array(lag) * grid.h / epsilon)
        if model.kind == SHORT_RANGE:
            ref = model.amplitude**2 * float(
                np.prod(np.maximum(0.0, 1.0 - np.abs(np.array(lag) * grid.h / epsilon)))
            )
        else:
            ref = float(randfield.phi_covariance(model, r))
        rows.append(["correlation", "lag=" + "/".join(map(str, lag)), est, se, ref])

    center = grid.m // 2
    sep = min(corr_len_nodes, (grid.m - 1) // 3)
    p0 = (grid.m // 4,) * grid.dim
    p1 = tuple(min(grid.m - 1, c + sep) for c in p0)
    p2 = (3 * grid.m // 4,) * grid.dim
    p3 = tuple(min(grid.m - 1, c + sep) for c in p2)
    quadruples = {
        "far_apart": (p0, p2, (p0[0], p2[0]) + (p0[0],) * (grid.dim - 2), p3),
        "all_equal": ((center,) * grid.dim,) * 4,
        "paired_far": (p0, p0, p2, p2),
    }
    for name, quad in quadruples.items():
        est, se = randfield.empirical_fourth_moment(
            model, grid, epsilon, quad, cfg.n_realizations, cfg.base_seed
        )
        if model.kind == SHORT_RANGE:
            ref = 0.0  # exact for the checkerboard at these configurations
        elif name == "all_equal":
            # E[Phi^4] - (E[Phi^2])^2 by Gauss-Hermite quadrature
            x, w = np.polynomial.hermite_e.hermegauss(128)
            w = w / np.sqrt(2.0 * np.pi)
            phi4 = float(np.sum(w * (model.phi_scale * np.tanh(x)) ** 4))
            phi2 = float(np.sum(w * (model.phi_scale * np.tanh(x)) ** 2))
            ref = phi4 - phi2**2
        else:
            ref = ""  # decays with separation; no closed form at finite range
        rows.append(["fourth_moment", name, est, se, ref])
    _write_csv(
        out / "field_check.csv",
        ["check", "detail", "estimate", "std_error", "reference"],
        rows,
    )


def cmd_green(cfg: StudyConfig, out: Path) -> None:
    grid = build_grid(cfg.dim, cfg.n)
    model = mc.build_model(cfg.model, cfg.dim)
    nl = mc.build_nonlinearity(cfg.nonlinearity)
    g = mc.build_field(cfg.g, grid)
    u, _ = pde.solve_homogenized(grid, model.q_mean, nl, g)
    fprime_u = GridFunction(grid, nl.fprime(u.values))
    y_index = (grid.m // 2,) * grid.dim
    col = pde.green_column(grid, model.q_mean, fprime_u, y_index)
    coords = np.stack([c.ravel() for c in grid.meshgrid()], axis=1)
    rows = (
        [int(i), *(float(c) for c in coords[i]), float(col.values[i])]
        for i in range(grid.interior_count)
    )
    _write_csv(out / "green.csv", ["index", *_coord_header(grid.dim), "value"], rows)


def _make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="homoglab",
        description="Monte Carlo laboratory for semilinear elliptic equations "
        "with rapidly oscillating random potentials",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name in ("solve", "scaling", "distribution", "field-check", "green"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="path to JSON config")
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--threads", type=int, default=None,
                       help="worker count (default: HOMOG_THREADS or config)")
        p.add_argument("--seed", type=int, default=None, help="override base_seed")
        p.add_argument("--assert", dest="do_assert", action="store_true",
                       help="exit 4 when acceptance bands are violated")
        p.add_argument("--set", dest="overrides", action="append", default=[],
                       metavar="KEY=VALUE", help="dot-path config override")
    return parser


def run(argv) -> int:
    args = _make_parser().parse_args(argv)
    try:
        overrides = list(args.overrides)
        if args.seed is not None:
            overrides.append(f"base_seed={args.seed}")
        threads = args.threads
        if threads is None and os.environ.get("HOMOG_THREADS"):
            threads = int(os.environ["HOMOG_THREADS"])
        if threads is not None:
            overrides.append(f"threads={threads}")
        cfg = parse_config(args.config, overrides)
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        if args.subcommand == "solve":
            cmd_solve(cfg, out)
        elif args.subcommand == "scaling":
            return cmd_scaling(cfg, out, args.do_assert)
        elif args.subcommand == "distribution":
            return cmd_distribution(cfg, out, args.do_assert)
        elif args.subcommand == "field-check":
            cmd_field_check(cfg, out)
        elif args.subcommand == "green":
            cmd_green(cfg, out)
        return 0
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except SolverError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return 3
    except HomoglabError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


def main() -> None:
    sys.exit(run(sys.argv[1:]))
