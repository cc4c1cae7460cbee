"""Configuration-driven experiment runner.

Subcommands: gauss-cdf, edgeworth, deltan, conc, rate-fit, lattice-count,
minima, gm-probe, theta-check, sym-check, suite. Common flags: --config,
--seed, --out, --threads (QFCLT_THREADS as fallback), --tol. Exit codes:
0 success, 2 validation error, 3 budget/cap failure, 1 suite failure.
"""

from __future__ import annotations

import argparse
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import edgeworth as edg
from . import empirics, gaussianqf, lattice, theta
from .config import (ExperimentConfig, covariance_from_config,
                     distribution_from_config, form_from_config,
                     lattice_from_config, load_config_file)
from .errors import BudgetError, CapExceededError, QfcltError, ValidationError
from .model import SourceDistribution, build_quadratic_form, identity_form
from .reporting import config_hash, render_figure, write_plotdata, write_table
from .rng import child_stream


def parallel_map(fn, items, threads: int):
    """Map with a fixed reduction order, so worker count never changes output."""
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _out_paths(cfg: ExperimentConfig, stem: str):
    cfg.out_dir.mkdir(parents=True, exist_ok=True)
    return (cfg.out_dir / f"{stem}.csv", cfg.out_dir / f"{stem}.plotdata.csv",
            cfg.out_dir / f"{stem}.png")


def _emit(cfg: ExperimentConfig, stem, columns, rows, xs=None, ys=None, errs=None,
          figure_kwargs=None):
    chash = config_hash(cfg.resolved)
    table, plot, png = _out_paths(cfg, stem)
    write_table(table, cfg.command, chash, cfg.seed, columns, rows)
    if xs is not None:
        write_plotdata(plot, cfg.command, chash, cfg.seed, xs, ys, errs)
        if cfg.extras.get("figures", True):
            render_figure(png, xs, ys, errs, **(figure_kwargs or {}))
    return table


# ---------------------------------------------------------------------------
# subcommands


def cmd_gauss_cdf(cfg: ExperimentConfig) -> int:
    form = form_from_config(cfg.raw)
    cov = covariance_from_config(cfg.raw)
    shift = np.asarray(cfg.raw.get("shift", [0.0] * form.dim), dtype=float)
    xs = np.asarray(cfg.raw.get("x_grid", np.linspace(0.0, 4.0 * cov.trace, 33)), dtype=float)
    results = gaussianqf.cdf_gaussian_qf_grid(xs, form, cov, shift=shift, tol=cfg.tol)
    rows = [(float(x), r.value, r.error_bound, r.cutoff) for x, r in zip(xs, results)]
    _emit(cfg, "gauss_cdf", ["x", "cdf", "error_bound", "cutoff"], rows,
          xs=[r[0] for r in rows], ys=[r[1] for r in rows], errs=[r[2] for r in rows],
          figure_kwargs=dict(xlabel="x", ylabel="CDF", title="limit CDF of the form"))
    return 0


def cmd_edgeworth(cfg: ExperimentConfig) -> int:
    dist = distribution_from_config(cfg.raw)
    form = form_from_config(cfg.raw)
    cov = covariance_from_config(cfg.raw)
    shift = np.asarray(cfg.raw.get("shift", [0.0] * form.dim), dtype=float)
    n_samples = int(cfg.raw.get("n_samples", 100))
    xs = np.asarray(cfg.raw.get("x_grid", np.linspace(0.5, 12.0, 20)), dtype=float)
    spec = edg.make_edgeworth_spec(form, cov, dist, shift, n_samples)
    cross = edg.cross_validate_edgeworth(
        spec, xs,
        measure_draws=int(cfg.raw.get("measure_draws", 1 << 15)),
        fourier_draws=int(cfg.raw.get("fourier_draws", 1 << 14)),
        measure_stream=child_stream(cfg.seed, "edgeworth-measure"),
        fourier_stream=child_stream(cfg.seed, "edgeworth-fourier"))
    rows = [(float(x), m, f, sm, sf, b) for x, m, f, sm, sf, b in
            zip(cross.xs, cross.measure_values, cross.inverted_values,
                cross.measure_se, cross.inverted_se, cross.budget)]
    _emit(cfg, "edgeworth",
          ["x", "measure_form", "fourier_form", "se_measure", "se_fourier", "budget"],
          rows, xs=cross.xs, ys=cross.measure_values, errs=cross.measure_se,
          figure_kwargs=dict(xlabel="x", ylabel="correction", title="first-order correction"))
    return 0


def cmd_deltan(cfg: ExperimentConfig) -> int:
    dist = distribution_from_config(cfg.raw)
    form = form_from_config(cfg.raw)
    cov = covariance_from_config(cfg.raw)
    shift = np.asarray(cfg.raw.get("shift", [0.0] * form.dim), dtype=float)
    n_grid = [int(n) for n in cfg.raw.get("n_grid", [16, 32, 64, 128, 256])]
    mode = cfg.raw.get("mode", "exact")
    reps = int(cfg.raw.get("replicates", 20000))
    rows = []
    for i, n in enumerate(n_grid):
        est = empirics.estimate_delta(
            dist, form, shift, n, mode=mode, reps=reps,
            stream=child_stream(cfg.seed, "deltan", i), h_tol=cfg.tol, cov=cov)
        rows.append((n, est.estimate, est.mc_se, est.budget, est.mode, cfg.seed))
    _emit(cfg, "deltan", ["N", "estimate", "std_error", "budget", "mode", "seed"],
          rows, xs=[r[0] for r in rows], ys=[r[1] for r in rows],
          errs=[r[2] for r in rows],
          figure_kwargs=dict(xlabel="N", ylabel="sup distance", loglog=True,
                             title="distance to the limit law"))
    return 0


def cmd_conc(cfg: ExperimentConfig) -> int:
    dist = distribution_from_config(cfg.raw)
    form = form_from_config(cfg.raw)
    lam_grid = [float(v) for v in cfg.raw.get("lam_grid", [0.0, 1.0])]
    n_grid = [int(n) for n in cfg.raw.get("n_grid", [16, 32, 64, 128])]
    mode = cfg.raw.get("mode", "exact")
    reps = int(cfg.raw.get("replicates", 20000))
    rows = []
    for lam in lam_grid:
        for i, n in enumerate(n_grid):
            est = empirics.concentration(
                dist, form, lam, n, mode=mode, reps=reps,
                stream=child_stream(cfg.seed, f"conc-{lam}", i))
            rows.append((n, lam, est.value, 0.0, mode, cfg.seed))
    _emit(cfg, "conc", ["N", "lambda", "estimate", "std_error", "mode", "seed"],
          rows, xs=[r[0] for r in rows], ys=[r[2] for r in rows],
          figure_kwargs=dict(xlabel="N", ylabel="concentration", loglog=True,
                             title="concentration of the form of sums"))
    return 0


def _read_rate_csv(path: str):
    rows = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line or line.startswith("#"):
            continue
        parts = line.split(",")
        try:
            rows.append((float(parts[0]), float(parts[1])))
        except ValueError:
            continue  # header line
    if not rows:
        raise ValidationError(f"no (N, value) rows found in {path!r}")
    return rows


def cmd_rate_fit(cfg: ExperimentConfig) -> int:
    source = cfg.extras.get("input") or cfg.raw.get("input")
    if not source:
        raise ValidationError("config is missing required key 'input'")
    fit = empirics.rate_fit(_read_rate_csv(source))
    rows = [(fit.slope, fit.intercept, fit.slope_se)]
    _emit(cfg, "rate_fit", ["slope", "intercept", "slope_se"], rows)
    print(f"slope {fit.slope:+.4f} +- {fit.slope_se:.4f} (intercept {fit.intercept:+.4f})")
    return 0


def _halton(index: int, base: int) -> float:
    out, f = 0.0, 1.0
    while index > 0:
        f /= base
        out += f * (index % base)
        index //= base
    return out


def halton_points(count: int, dim: int) -> np.ndarray:
    """Low-discrepancy shift set in the unit cube (first ``dim`` prime bases)."""
    primes = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29][:dim]
    return np.array([[_halton(i + 1, b) for b in primes] for i in range(count)])


def cmd_lattice_count(cfg: ExperimentConfig) -> int:
    form = form_from_config(cfg.raw)
    radii = [float(r) for r in cfg.raw.get("radii", [4.0, 6.0, 9.0, 12.0])]
    shifts = halton_points(int(cfg.raw.get("shifts_count", 64)), form.dim)
    rows = []
    for r in radii:
        def one(shift):
            return abs(lattice.count_ellipsoid(form, r, shift).relative_error)
        errs = parallel_map(one, list(shifts), cfg.threads)
        rows.append((r, max(errs), min(errs)))
    _emit(cfg, "lattice_count", ["r", "sup_rel_error", "min_rel_error"], rows,
          xs=[r[0] for r in rows], ys=[r[1] for r in rows],
          figure_kwargs=dict(xlabel="r", ylabel="sup relative error", loglog=True,
                             title="ellipsoid count vs volume"))
    return 0


def cmd_minima(cfg: ExperimentConfig) -> int:
    lat = lattice_from_config(cfg.raw)
    mode = cfg.raw.get("mode", "exact")
    minima = lattice.successive_minima(lat, lattice.EUCLIDEAN, mode=mode)
    profile = lattice.alpha_characteristic(lat, minima_mode=mode)
    rows = [(i + 1, float(m), float(al), minima.method)
            for i, (m, al) in enumerate(zip(minima.values, profile.values))]
    _emit(cfg, "minima", ["l", "minimum", "alpha_l", "method"], rows)
    return 0


def cmd_gm_probe(cfg: ExperimentConfig) -> int:
    pair_dim = int(cfg.raw.get("pair_dim", 5))
    beta = float(cfg.raw.get("beta", 0.5))
    grid = int(cfg.raw.get("grid", 128))
    h_values = [float(h) for h in cfg.raw.get("h_values", [2.0, 4.0, 8.0])]
    if "lattice" in cfg.raw:
        lat = lattice_from_config(cfg.raw)
    else:
        lat = lattice.integer_lattice(2 * pair_dim)
    rows = []
    for h in h_values:
        probe = lattice.gm_integral_probe(lattice.pair_dilation(h), lat, beta, grid=grid)
        rows.append((h, probe.integral, probe.ratio))
    _emit(cfg, "gm_probe", ["h", "integral", "ratio"], rows,
          xs=[r[0] for r in rows], ys=[r[1] for r in rows],
          figure_kwargs=dict(xlabel="dilation", ylabel="integral", loglog=True,
                             title="rotation-averaged alpha integral"))
    return 0


def _random_pd(stream: np.random.Generator, s: int) -> np.ndarray:
    a = stream.normal(size=(s, s))
    return np.eye(s) + 0.25 * (a + a.T) + a @ a.T * 0.1


def cmd_theta_check(cfg: ExperimentConfig) -> int:
    count = int(cfg.extras.get("random") or cfg.raw.get("instances", 20))
    rows = []
    worst = 0.0
    for i in range(count):
        stream = child_stream(cfg.seed, "theta-check", i)
        s = int(stream.integers(1, 4))
        params = theta.ThetaParams(
            s_matrix=_random_pd(stream, s),
            z=1.0 if i % 2 == 0 else 0.7 + 0.4j,
            a=stream.random(s), b=stream.random(s))
        chk = theta.poisson_check(params, tol=1e-12)
        worst = max(worst, chk.difference)
        rows.append((i, s, params.z.real, params.z.imag, chk.lhs.real, chk.lhs.imag,
                     chk.rhs.real, chk.rhs.imag, chk.difference))
    _emit(cfg, "theta_check",
          ["instance", "s", "z_re", "z_im", "lhs_re", "lhs_im", "rhs_re", "rhs_im",
           "abs_diff"], rows)
    print(f"max |lhs-rhs| over {count} instances: {worst:.3e}")
    return 0


def _random_tiny_law(stream: np.random.Generator, dim: int) -> SourceDistribution:
    atoms = stream.uniform(-1.0, 1.0, size=(2, dim))
    p = stream.uniform(0.2, 0.8)
    return SourceDistribution.finite_discrete(atoms, [p, 1.0 - p])


def cmd_sym_check(cfg: ExperimentConfig) -> int:
    count = int(cfg.extras.get("random") or cfg.raw.get("instances", 50))
    t_count = int(cfg.raw.get("t_count", 16))
    rows = []
    failures = 0
    for i in range(count):
        stream = child_stream(cfg.seed, "sym-check", i)
        dim = int(stream.integers(1, 3))
        laws = [_random_tiny_law(stream, dim) for _ in range(4)]
        q = stream.normal(size=(dim, dim))
        form = build_quadratic_form(q + q.T + 3.0 * np.eye(dim))
        lin = stream.normal(size=dim)
        const = float(stream.normal())
        for t in stream.uniform(-4.0, 4.0, size=t_count):
            res = theta.symmetrization_check(float(t), laws, form, lin, const)
            failures += 0 if res.holds else 1
            rows.append((i, float(t), res.lhs, res.rhs, int(res.holds)))
    _emit(cfg, "sym_check", ["instance", "t", "lhs", "rhs", "holds"], rows)
    print(f"{len(rows)} checks, {failures} violations")
    return 0 if failures == 0 else 1


# ---------------------------------------------------------------------------
# suite


def _suite_identities(cfg: ExperimentConfig):
    rows = []
    worst = 0.0
    for i in range(20):
        stream = child_stream(cfg.seed, "suite-theta", i)
        s = int(stream.integers(1, 4))
        params = theta.ThetaParams(_random_pd(stream, s),
                                   1.0 if i % 2 == 0 else 0.7 + 0.4j,
                                   stream.random(s), stream.random(s))
        worst = max(worst, theta.poisson_check(params, tol=1e-12).difference)
    rows.append(("identities", "poisson-summation", worst <= 1e-9, worst))

    ok = True
    worst_ratio = 0.0
    for n in (20, 50, 100):
        dom = theta.weight_domination_check(n, 0.25)
        worst_ratio = max(worst_ratio, dom.sup_ratio)
        ok = ok and dom.sup_ratio <= 2.0 and dom.tail_mass <= math.exp(-n / 16.0)
    rows.append(("identities", "weight-domination", ok, worst_ratio))

    violations = 0
    for i in range(40):
        stream = child_stream(cfg.seed, "suite-sym", i)
        dim = int(stream.integers(1, 3))
        laws = [_random_tiny_law(stream, dim) for _ in range(4)]
        q = stream.normal(size=(dim, dim))
        form = build_quadratic_form(q + q.T + 3.0 * np.eye(dim))
        for t in stream.uniform(-4.0, 4.0, size=8):
            res = theta.symmetrization_check(float(t), laws, form,
                                             stream.normal(size=dim), 0.0)
            violations += 0 if res.holds else 1
    rows.append(("identities", "symmetrization", violations == 0, float(violations)))

    flow = lattice.build_flow(3, 2.0, 0.7)
    d_ab = lattice.dilation_matrix(3, 6.0)
    gap = max(
        float(np.max(np.abs(lattice.dilation_matrix(3, 2.0) @ lattice.dilation_matrix(3, 3.0) - d_ab))),
        float(np.max(np.abs(lattice.shear_matrix(3, 0.3) @ lattice.shear_matrix(3, 0.7)
                            - lattice.shear_matrix(3, 1.0)))),
        abs(np.linalg.det(flow.dilation) - 1.0))
    rows.append(("identities", "flow-relations", gap <= 1e-12, gap))
    return rows


def _suite_rates(cfg: ExperimentConfig):
    from scipy.special import gammainc

    rows = []
    dist = SourceDistribution.rademacher(5)
    form = identity_form(5)

    def chi5(xs):
        xs = np.asarray(xs, dtype=float)
        return np.where(xs > 0.0, gammainc(2.5, np.maximum(xs, 0.0) / 2.0), 0.0)

    deltas = []
    jumps_ok = True
    for n in (16, 32, 64, 128, 256, 512):
        est = empirics.estimate_delta(dist, form, None, n, mode="exact",
                                      reference_cdf=chi5)
        deltas.append((n, est.estimate))
        table = empirics.exact_cdf_product(dist, form, n)
        jumps_ok = jumps_ok and 0.05 <= table.max_prob * n <= 20.0
    fit = empirics.rate_fit(deltas)
    rows.append(("rates", "deltan-slope", -1.15 <= fit.slope <= -0.85, fit.slope))
    rows.append(("rates", "jump-heights", jumps_ok, float(jumps_ok)))

    for lam in (0.0, 1.0):
        pts = [(n, empirics.concentration(dist, form, lam, n, candidate_shifts=[np.zeros(5, dtype=int)]).value)
               for n in (16, 32, 64, 128, 256)]
        fit = empirics.rate_fit(pts)
        rows.append(("rates", f"concentration-slope-lam{lam:g}",
                     -1.2 <= fit.slope <= -0.8, fit.slope))
    return rows


def _suite_lattice(cfg: ExperimentConfig):
    rows = []
    form = identity_form(5)
    shifts = halton_points(16, 5)
    sup_errs = []
    for r in (4.0, 6.0, 9.0, 12.0):
        errs = parallel_map(lambda a: abs(lattice.count_ellipsoid(form, r, a).relative_error),
                            list(shifts), cfg.threads)
        sup_errs.append((r, max(errs)))
    fit = empirics.rate_fit(sup_errs)
    rows.append(("lattice", "ellipsoid-slope", fit.slope <= -1.2, fit.slope))

    ratios: dict[int, list[float]] = {}
    idx = 0
    for rank in (2, 3, 4):
        for _ in range(8):
            stream = child_stream(cfg.seed, "suite-dav", idx)
            idx += 1
            basis = np.eye(rank) + 0.4 * stream.normal(size=(rank, rank))
            lat = lattice.Lattice(basis)
            minima = lattice.successive_minima(lat)
            b = float(np.sqrt(minima.values[0] * minima.values[-1]) * 1.7)
            cnt = lattice.count_norm_ball(lat, lattice.EUCLIDEAN, b)
            if not math.isnan(cnt.davenport_ratio):
                ratios.setdefault(rank, []).append(cnt.davenport_ratio)
    band_ok = all(max(v) / min(v) <= 100.0 for v in ratios.values() if v)
    rows.append(("lattice", "davenport-band", band_ok, float(band_ok)))

    base = lattice.integer_lattice(10)
    pts = []
    for h in (2.0, 4.0, 8.0):
        # the integrand peaks have width ~1/h^2; 256 points resolve h = 8
        probe = lattice.gm_integral_probe(lattice.pair_dilation(h), base, 0.5, grid=256)
        pts.append((probe.h_norm, probe.integral))
    fit = empirics.rate_fit(pts)
    status = fit.slope <= 0.5 * 5 - 2 + 0.5
    rows.append(("lattice", "gm-probe-exponent", "warn" if not status else True, fit.slope))
    return rows


def cmd_suite(cfg: ExperimentConfig) -> int:
    name = cfg.extras.get("suite_name", "all")
    bundles = {"identities": _suite_identities, "rates": _suite_rates,
               "lattice": _suite_lattice}
    if name == "all":
        selected = list(bundles)
    elif name in bundles:
        selected = [name]
    else:
        raise ValidationError(f"unknown suite {name!r}; choose from "
                              f"{sorted(bundles)} or 'all'")
    rows = []
    failed = 0
    for key in selected:
        for bundle, check, status, value in bundles[key](cfg):
            if status == "warn":
                word = "WARN"
            elif status:
                word = "PASS"
            else:
                word = "FAIL"
                failed += 1
            rows.append((bundle, check, word, value))
            print(f"{bundle:12s} {check:28s} {word}  ({value:+.4g})")
    _emit(cfg, f"suite_{name}", ["bundle", "check", "status", "value"], rows)
    return 0 if failed == 0 else 1


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="qfclt",
        description="Quadratic-form limit laws, lattice counts, and rate checks")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", default=None, help="JSON config file")
        p.add_argument("--seed", type=int, default=20240701, help="master seed")
        p.add_argument("--out", default="qfclt-out", help="output directory")
        p.add_argument("--threads", type=int, default=None,
                       help="worker threads (QFCLT_THREADS as fallback)")
        p.add_argument("--tol", type=float, default=1e-4, help="error tolerance")
        p.add_argument("--no-figures", action="store_true",
                       help="skip figure rendering")

    for name in ("gauss-cdf", "edgeworth", "deltan", "conc", "rate-fit",
                 "lattice-count", "minima", "gm-probe"):
        common(sub.add_parser(name))
    p = sub.add_parser("theta-check")
    common(p)
    p.add_argument("--random", type=int, default=None, help="number of random instances")
    p = sub.add_parser("sym-check")
    common(p)
    p.add_argument("--random", type=int, default=None)
    p = sub.add_parser("suite")
    common(p)
    p.add_argument("name", nargs="?", default="all",
                   help="identities | rates | lattice | all")
    return parser


_DISPATCH = {
    "gauss-cdf": cmd_gauss_cdf,
    "edgeworth": cmd_edgeworth,
    "deltan": cmd_deltan,
    "conc": cmd_conc,
    "rate-fit": cmd_rate_fit,
    "lattice-count": cmd_lattice_count,
    "minima": cmd_minima,
    "gm-probe": cmd_gm_probe,
    "theta-check": cmd_theta_check,
    "sym-check": cmd_sym_check,
    "suite": cmd_suite,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    threads = args.threads
    if threads is None:
        threads = int(os.environ.get("QFCLT_THREADS", "1"))
    try:
        raw = load_config_file(args.config)
        cfg = ExperimentConfig(raw=raw, seed=args.seed, out_dir=Path(args.out),
                               tol=args.tol, threads=threads, command=args.command)
        cfg.extras["figures"] = not args.no_figures
        if args.command in ("theta-check", "sym-check"):
            cfg.extras["random"] = args.random
        if args.command == "suite":
            cfg.extras["suite_name"] = args.name
            cfg.extras["figures"] = False
        return _DISPATCH[args.command](cfg)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (BudgetError, CapExceededError) as exc:
        print(f"budget failure: {exc}", file=sys.stderr)
        return 3
    except QfcltError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
