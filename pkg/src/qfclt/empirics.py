"""Sampling, truncation functionals, exact convolution tables, and rate fits.

The exact-convolution path keeps every table key as a scaled integer: the
per-coordinate sums live on an integer grid, squares stay integers, and the
diagonal form weights are cleared to a common denominator. Probabilities are
floats accumulated by dense shifted adds, never hashed by rounded keys.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from .errors import CapExceededError, ValidationError
from .gaussianqf import cdf_gaussian_qf_grid
from .model import CovarianceModel, QuadraticForm, SourceDistribution

TABLE_CAP = 1 << 26


# ---------------------------------------------------------------------------
# truncation


def _split_law(atoms: np.ndarray, probs: np.ndarray, keep: np.ndarray):
    """(kept law, complement law) for X 1{cond} with the indicator off-mass at 0."""
    def with_zero(sel):
        a = atoms[sel]
        p = probs[sel]
        off = 1.0 - p.sum()
        if off > 0.0:
            a = np.vstack([a, np.zeros((1, atoms.shape[1]))])
            p = np.append(p, off)
        return a, p
    return with_zero(keep), with_zero(~keep)


@dataclass(frozen=True)
class TruncationReport:
    """Atom-exact truncation split at the two thresholds, with functionals.

    The "sphere" split cuts at sigma sqrt(N) in the ambient norm; the
    "whitened" split cuts at sqrt(d N) in the C^{-1/2} norm. gauss_cov is
    the covariance of the Gaussian make-up summand W with
    cov(X_kept - mean + W) = C; it is PSD by construction.
    """

    n_samples: int
    sphere_kept: tuple[np.ndarray, np.ndarray]
    sphere_tail: tuple[np.ndarray, np.ndarray]
    whitened_kept: tuple[np.ndarray, np.ndarray]
    whitened_tail: tuple[np.ndarray, np.ndarray]
    lambda4_sphere: float
    lambda4_whitened: float
    mean_kept: np.ndarray          # E of the whitened-kept summand
    cov_kept: np.ndarray
    gauss_cov: np.ndarray
    sigma_sq: float
    dim: int
    _pi_sphere: dict = field(default_factory=dict)
    _pi_whitened: dict = field(default_factory=dict)

    def pi_sphere(self, q: float) -> float:
        return self._pi_sphere[q]

    def pi_whitened(self, q: float) -> float:
        return self._pi_whitened[q]

    @property
    def shifted_kept_atoms(self) -> np.ndarray:
        """Atoms of the recentered kept law (the discrete part of X')."""
        return self.whitened_kept[0] - self.mean_kept


def truncate(dist: SourceDistribution, n_samples: int,
             cov: CovarianceModel | None = None,
             qs: tuple = (1.0, 2.0, 3.0, 4.0)) -> TruncationReport:
    if not dist.is_discrete:
        raise ValidationError("truncation needs a finite discrete law")
    if n_samples < 1:
        raise ValidationError("n_samples must be >= 1")
    cov = dist.covariance_model if cov is None else cov
    atoms, probs = dist.as_atoms()
    d = dist.dim
    sigma_sq = dist.sigma_sq
    norms = np.linalg.norm(atoms, axis=1)
    wnorms = np.linalg.norm(cov.whiten(atoms), axis=1)
    thr_sphere = math.sqrt(sigma_sq * n_samples)
    thr_white = math.sqrt(d * n_samples)
    keep_s = norms <= thr_sphere
    keep_w = wnorms <= thr_white
    sphere_kept, sphere_tail = _split_law(atoms, probs, keep_s)
    white_kept, white_tail = _split_law(atoms, probs, keep_w)

    lam4_s = float(probs[keep_s] @ norms[keep_s] ** 4) / (sigma_sq ** 2 * n_samples)
    lam4_w = float(probs[keep_w] @ wnorms[keep_w] ** 4) / (d ** 2 * n_samples)
    pi_s = {q: n_samples * float(probs[~keep_s] @ norms[~keep_s] ** q) / thr_sphere ** q
            for q in qs}
    pi_w = {q: n_samples * float(probs[~keep_w] @ wnorms[~keep_w] ** q) / thr_white ** q
            for q in qs}

    mean_kept = probs[keep_w] @ atoms[keep_w]
    second_kept = (atoms[keep_w] * probs[keep_w, None]).T @ atoms[keep_w]
    cov_kept = second_kept - np.outer(mean_kept, mean_kept)
    second_tail = (atoms[~keep_w] * probs[~keep_w, None]).T @ atoms[~keep_w]
    gauss_cov = second_tail + np.outer(mean_kept, mean_kept)
    w_eigs = np.linalg.eigvalsh(0.5 * (gauss_cov + gauss_cov.T))
    if w_eigs.size and w_eigs[0] < -1e-10:
        raise ValidationError("make-up covariance has a negative eigenvalue; "
                              "inputs are inconsistent")
    return TruncationReport(
        n_samples=n_samples,
        sphere_kept=sphere_kept, sphere_tail=sphere_tail,
        whitened_kept=white_kept, whitened_tail=white_tail,
        lambda4_sphere=lam4_s, lambda4_whitened=lam4_w,
        mean_kept=mean_kept, cov_kept=cov_kept, gauss_cov=gauss_cov,
        sigma_sq=sigma_sq, dim=d,
        _pi_sphere=pi_s, _pi_whitened=pi_w)


# ---------------------------------------------------------------------------
# sampling


def sample_sn(dist: SourceDistribution, form: QuadraticForm, n_samples: int,
              reps: int, stream: np.random.Generator, shift=None) -> np.ndarray:
    """reps independent draws of Q[S_N - a], S_N = (X_1 + ... + X_N)/sqrt(N).

    Discrete laws draw multinomial atom counts per replicate (the sum only
    depends on counts); gaussian laws use exact stability of the sum.
    """
    if reps < 1:
        raise ValidationError("reps must be >= 1")
    d = dist.dim
    a = np.zeros(d) if shift is None else np.asarray(shift, dtype=float)
    if dist.kind == "gaussian":
        s = dist.sample(reps, stream)
    elif dist.kind == "coordinate-product":
        cols = []
        for values, probs in dist.marginals:
            counts = stream.multinomial(n_samples, probs, size=reps)
            cols.append(counts @ values / math.sqrt(n_samples))
        s = np.column_stack(cols)
    else:
        counts = stream.multinomial(n_samples, dist.probs, size=reps)
        s = counts @ dist.atoms / math.sqrt(n_samples)
    return form.apply(s - a)


# ---------------------------------------------------------------------------
# exact convolution tables


def _fraction_weights(diag: np.ndarray) -> tuple[np.ndarray, int]:
    """Clear diagonal weights to integers over a common denominator."""
    fracs = [Fraction(float(v)).limit_denominator(10 ** 9) for v in diag]
    for f, v in zip(fracs, diag):
        if abs(float(f) - float(v)) > 1e-12 * max(1.0, abs(float(v))):
            raise ValidationError("diagonal form entries must be exact rationals")
    denom = 1
    for f in fracs:
        denom = denom * f.denominator // math.gcd(denom, f.denominator)
    if denom > 1_000_000:
        raise ValidationError("diagonal form denominators too large for exact keys")
    weights = np.array([int(f * denom) for f in fracs], dtype=np.int64)
    return weights, denom


def _integer_marginal(values: np.ndarray, probs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    ints = np.rint(values).astype(np.int64)
    if np.max(np.abs(ints.astype(float) - values)) > 1e-9:
        raise ValidationError("coordinate supports must sit on the integer lattice")
    return ints, probs


def _nfold_integer_law(values: np.ndarray, probs: np.ndarray, n: int):
    """(offset, dense probs) of the n-fold sum on the integer grid."""
    vmin, vmax = int(values.min()), int(values.max())
    base = np.zeros(vmax - vmin + 1)
    for v, p in zip(values, probs):
        base[int(v) - vmin] += p
    acc = np.array([1.0])
    acc_off = 0
    power = base
    pow_off = vmin
    k = n
    while k:
        if k & 1:
            acc = np.convolve(acc, power)
            acc_off += pow_off
        k >>= 1
        if k:
            power = np.convolve(power, power)
            pow_off *= 2
    return acc_off, acc


@dataclass(frozen=True)
class ExactQFTable:
    """Exact law of the diagonal form of an integer-lattice sum.

    keys are integers; the value of the form at key kappa is
    kappa / denominator (divide further by N for the normalized sum).
    """

    keys: np.ndarray
    probs: np.ndarray
    denominator: int
    n_samples: int

    def values(self, scale: str = "sn") -> np.ndarray:
        v = self.keys / self.denominator
        if scale == "sn":
            return v / self.n_samples
        if scale == "zn":
            return v
        raise ValidationError("scale must be 'sn' or 'zn'")

    @property
    def cdf(self) -> np.ndarray:
        return np.cumsum(self.probs)

    @property
    def max_prob(self) -> float:
        return float(np.max(self.probs))

    def sample_values(self, reps: int, stream: np.random.Generator,
                      scale: str = "sn") -> np.ndarray:
        idx = stream.choice(len(self.probs), size=reps, p=self.probs / self.probs.sum())
        return self.values(scale)[idx]

    def cdf_callable(self, scale: str = "sn"):
        vals = self.values(scale)
        cum = self.cdf

        def evaluate(xs):
            pos = np.searchsorted(vals, np.asarray(xs, dtype=float), side="right")
            return np.where(pos > 0, cum[np.maximum(pos - 1, 0)], 0.0)
        return evaluate


def exact_cdf_product(dist: SourceDistribution, form: QuadraticForm,
                      n_samples: int, shift=None,
                      table_cap: int = TABLE_CAP) -> ExactQFTable:
    """Exact distribution of the diagonal form of the N-fold coordinate sums.

    Per coordinate: N-fold integer convolution, then a squared-value
    histogram against the cleared weight, then dense cross-coordinate
    convolution iterating over the sparse side. An optional integer shift
    is subtracted from the unnormalized sum before squaring.
    """
    if dist.kind != "coordinate-product":
        raise ValidationError("exact convolution needs a coordinate-product law")
    diag = np.diag(form.entries)
    if np.max(np.abs(form.entries - np.diag(diag))) > 0.0:
        raise ValidationError("exact convolution needs a diagonal form")
    weights, denom = _fraction_weights(diag)
    if np.any(weights <= 0):
        raise ValidationError("exact convolution needs positive diagonal weights")
    d = dist.dim
    a = np.zeros(d, dtype=np.int64) if shift is None else np.asarray(shift)
    if np.max(np.abs(np.asarray(a, dtype=float) - np.rint(np.asarray(a, dtype=float)))) > 0:
        raise ValidationError("exact mode supports integer shifts only")
    a = np.rint(np.asarray(a, dtype=float)).astype(np.int64)

    squared = []
    for j, (values, probs) in enumerate(dist.marginals):
        ints, p = _integer_marginal(values, probs)
        off, dense = _nfold_integer_law(ints, p, n_samples)
        sums = off + np.arange(len(dense), dtype=np.int64) - a[j]
        keys = weights[j] * sums * sums
        nz = dense > 0.0
        squared.append((keys[nz], dense[nz]))

    all_keys = np.concatenate([k for k, _ in squared])
    step = int(np.gcd.reduce(all_keys)) if np.any(all_keys) else 1
    step = max(step, 1)
    total_len = int(sum(int(k.max()) // step for k, _ in squared)) + 1
    if total_len > table_cap:
        raise CapExceededError(f"table length {total_len} above cap {table_cap}",
                               estimate=total_len)
    acc = np.zeros(int(squared[0][0].max()) // step + 1)
    np.add.at(acc, squared[0][0] // step, squared[0][1])
    for keys, probs in squared[1:]:
        out = np.zeros(len(acc) + int(keys.max()) // step)
        for k, p in zip(keys // step, probs):
            out[k:k + len(acc)] += p * acc
        acc = out
    nz = np.flatnonzero(acc > 0.0)
    return ExactQFTable(keys=nz * step, probs=acc[nz], denominator=denom,
                        n_samples=n_samples)


# ---------------------------------------------------------------------------
# sup-distance estimation


@dataclass(frozen=True)
class DeltaEstimate:
    n_samples: int
    shift: np.ndarray
    estimate: float
    mode: str                 # "exact-convolution" or "monte-carlo"
    budget: float
    mc_se: float
    reference_budget: float   # H (+ correction) evaluation budget


def _left_limits(reference, values):
    """reference just left of each value (handles step-function references)."""
    eps = 1e-9 * (1.0 + np.abs(values))
    return reference(values - eps)


def _two_sided_sup_exact(values, probs, reference):
    ref = reference(values)
    ref_left = _left_limits(reference, values)
    hi = np.cumsum(probs)
    lo = hi - probs
    return float(np.max(np.maximum(np.abs(hi - ref), np.abs(ref_left - lo))))


def _two_sided_sup_samples(sorted_vals, reference):
    n = len(sorted_vals)
    ref = reference(sorted_vals)
    ref_left = _left_limits(reference, sorted_vals)
    hi = np.arange(1, n + 1) / n
    lo = np.arange(0, n) / n
    return float(np.max(np.maximum(hi - ref, ref_left - lo)))


def _grid_reference(form, cov, shift, lo, hi, tol, max_points=2048):
    """Monotone interpolant of the limit CDF on an adaptive grid.

    Returns (callable, budget): the budget is the certified evaluation
    tolerance plus the largest CDF increment across one grid cell, which
    bounds the interpolation error.
    """
    pad = 0.05 * (hi - lo) + 1e-6
    xs = np.linspace(lo - pad, hi + pad, 257)
    res = cdf_gaussian_qf_grid(xs, form, cov, shift=shift, tol=tol)
    vals = np.array([r.value for r in res])
    for _ in range(4):
        gaps = np.diff(vals)
        bad = np.flatnonzero(gaps > 4.0 / max_points)
        if len(bad) == 0 or len(xs) + len(bad) > max_points:
            break
        mids = 0.5 * (xs[bad] + xs[bad + 1])
        mres = cdf_gaussian_qf_grid(mids, form, cov, shift=shift, tol=tol)
        xs = np.concatenate([xs, mids])
        vals = np.concatenate([vals, [r.value for r in mres]])
        order = np.argsort(xs)
        xs, vals = xs[order], vals[order]
    budget = float(np.max(np.diff(vals))) + tol

    def evaluate(points):
        return np.interp(np.asarray(points, dtype=float), xs, vals)
    return evaluate, budget


def estimate_delta(dist: SourceDistribution, form: QuadraticForm, shift, n_samples: int,
                   mode: str = "exact", *, reps: int = 20000,
                   stream: np.random.Generator | None = None,
                   reference_cdf=None, reference_budget: float = 0.0,
                   h_tol: float = 1e-4,
                   cov: CovarianceModel | None = None) -> DeltaEstimate:
    """Two-sided sup distance between the law of Q[S_N - a] and its limit.

    The sup of |step F - continuous G| is attained at the jumps of F, so it
    is evaluated at every jump from both sides. ``reference_cdf`` defaults
    to the certified limit-CDF pipeline on an adaptive grid; pass an exact
    callable (for example a closed-form CDF) to remove that budget.
    """
    cov = dist.covariance_model if cov is None else cov
    a = np.zeros(form.dim) if shift is None else np.asarray(shift, dtype=float)
    if mode == "exact":
        if np.any(a):
            raise ValidationError("exact mode is implemented for zero shift")
        table = exact_cdf_product(dist, form, n_samples)
        vals = table.values("sn")
        if reference_cdf is None:
            reference_cdf, reference_budget = _grid_reference(
                form, cov, a, float(vals[0]), float(vals[-1]), h_tol)
        est = _two_sided_sup_exact(vals, table.probs, reference_cdf)
        return DeltaEstimate(n_samples=n_samples, shift=a, estimate=est,
                             mode="exact-convolution", budget=reference_budget,
                             mc_se=0.0, reference_budget=reference_budget)
    if stream is None:
        raise ValidationError("monte-carlo mode needs a random stream")
    draws = np.sort(sample_sn(dist, form, n_samples, reps, stream, shift=a))
    if reference_cdf is None:
        reference_cdf, reference_budget = _grid_reference(
            form, cov, a, float(draws[0]), float(draws[-1]), h_tol)
    est = _two_sided_sup_samples(draws, reference_cdf)
    mc_se = 0.5 / math.sqrt(reps)
    return DeltaEstimate(n_samples=n_samples, shift=a, estimate=est,
                         mode="monte-carlo", budget=mc_se + reference_budget,
                         mc_se=mc_se, reference_budget=reference_budget)


# ---------------------------------------------------------------------------
# concentration function


@dataclass(frozen=True)
class ConcentrationEstimate:
    lam: float
    value: float
    best_shift: np.ndarray
    best_window_start: float
    search: tuple            # rows (shift, window start, mass)


def _window_max(values: np.ndarray, probs: np.ndarray, lam: float):
    cum = np.concatenate(([0.0], np.cumsum(probs)))
    ends = np.searchsorted(values, values + lam, side="right")
    mass = cum[ends] - cum[np.arange(len(values))]
    best = int(np.argmax(mass))
    return float(mass[best]), float(values[best])


def concentration(dist: SourceDistribution, form: QuadraticForm, lam: float,
                  n_samples: int, *, mode: str = "exact",
                  candidate_shifts=None, reps: int = 20000,
                  stream: np.random.Generator | None = None) -> ConcentrationEstimate:
    """Lower-bound estimate of the concentration function of Q[Z_N - a].

    The shift search runs over a documented candidate set (zero and the unit
    axis directions by default; the true sup ranges over all of R^d, which
    no finite search attains); the window start search is exhaustive over
    the support. Exact tables need integer shifts.
    """
    if lam < 0.0:
        raise ValidationError("window length must be nonnegative")
    d = form.dim
    if candidate_shifts is None:
        candidate_shifts = [np.zeros(d, dtype=int)]
        candidate_shifts += [np.eye(d, dtype=int)[j] for j in range(d)]
    rows = []
    for a in candidate_shifts:
        a = np.asarray(a)
        if mode == "exact":
            table = exact_cdf_product(dist, form, n_samples, shift=a)
            mass, start = _window_max(table.values("zn"), table.probs, lam)
        else:
            if stream is None:
                raise ValidationError("monte-carlo mode needs a random stream")
            # Q[Z_N - a] = N * Q[S_N - a/sqrt(N)]
            scaled_shift = np.asarray(a, dtype=float) / math.sqrt(n_samples)
            vals = np.sort(n_samples * sample_sn(dist, form, n_samples, reps,
                                                 stream, shift=scaled_shift))
            probs = np.full(len(vals), 1.0 / len(vals))
            mass, start = _window_max(vals, probs, lam)
        rows.append((np.asarray(a, dtype=float), start, mass))
    best = max(rows, key=lambda r: r[2])
    return ConcentrationEstimate(lam=lam, value=best[2], best_shift=best[0],
                                 best_window_start=best[1], search=tuple(rows))


# ---------------------------------------------------------------------------
# exact characteristic function of unnormalized sums


def charfn_qf_exact(t: float, x_vec, dist: SourceDistribution,
                    j_count: int, form: QuadraticForm,
                    cap: int = 1 << 21) -> complex:
    """E e{ t Q[Z_j] + <x, Z_j> } by exact enumeration or per-coordinate DP.

    Coordinate-product laws with a diagonal form factorize coordinatewise;
    anything else enumerates the full j-fold product below the cap.
    """
    if not dist.is_discrete:
        raise ValidationError("exact characteristic function needs a discrete law")
    if j_count < 1:
        raise ValidationError("j must be >= 1")
    x = np.asarray(x_vec, dtype=float)
    diag = np.diag(form.entries)
    diagonal = np.max(np.abs(form.entries - np.diag(diag))) == 0.0
    if dist.kind == "coordinate-product" and diagonal:
        out = 1.0 + 0.0j
        for c, (values, probs) in enumerate(dist.marginals):
            # DP over the j-fold sum of one coordinate (values need not be integers)
            sums = {0.0: 1.0}
            for _ in range(j_count):
                nxt: dict[float, float] = {}
                for s, p in sums.items():
                    for v, q in zip(values, probs):
                        key = s + float(v)
                        nxt[key] = nxt.get(key, 0.0) + p * q
                sums = nxt
                if len(sums) > cap:
                    raise CapExceededError("coordinate DP exceeded cap", estimate=len(sums))
            arr = np.array(list(sums.keys()))
            pr = np.array(list(sums.values()))
            out *= complex(pr @ np.exp(1j * (t * diag[c] * arr ** 2 + x[c] * arr)))
        return out
    atoms, probs = dist.as_atoms()
    n_atoms = len(probs)
    if n_atoms ** j_count > cap:
        raise CapExceededError("full enumeration above cap", estimate=n_atoms ** j_count)
    total = np.zeros((1, dist.dim))
    weight = np.array([1.0])
    for _ in range(j_count):
        total = (total[:, None, :] + atoms[None, :, :]).reshape(-1, dist.dim)
        weight = np.outer(weight, probs).ravel()
    vals = form.apply(total) * t + total @ x
    return complex(weight @ np.exp(1j * vals))


def kappa_probe(t: float, dist: SourceDistribution, form: QuadraticForm,
                j_count: int, x_candidates) -> tuple[float, np.ndarray]:
    """Grid sup of |E e{t Q[Z_j] + <x, Z_j>}| over candidate x vectors."""
    best, arg = -1.0, None
    for x in x_candidates:
        mod = abs(charfn_qf_exact(t, x, dist, j_count, form))
        if mod > best:
            best, arg = mod, np.asarray(x, dtype=float)
    return best, arg


# ---------------------------------------------------------------------------
# rate fitting


@dataclass(frozen=True)
class RateFit:
    slope: float
    intercept: float
    slope_se: float
    residuals: np.ndarray


def rate_fit(points) -> RateFit:
    """Least squares on (log N, log value); slope is the fitted exponent."""
    pts = [(float(n), float(v)) for n, v in points]
    if len(pts) < 3:
        raise ValidationError("need at least 3 points to fit a rate")
    if any(v <= 0.0 for _, v in pts):
        raise ValidationError("rate fit needs positive values")
    x = np.log([n for n, _ in pts])
    y = np.log([v for _, v in pts])
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    dof = len(pts) - 2
    s2 = float(resid @ resid) / dof if dof else 0.0
    sxx = float(np.sum((x - x.mean()) ** 2))
    return RateFit(slope=float(slope), intercept=float(intercept),
                   slope_se=math.sqrt(s2 / sxx), residuals=resid)
