"""Core domain types: quadratic forms, covariance models, source laws.

Everything here is immutable after construction and safe for concurrent
reads. Source laws are mean-centered at construction; the applied offset is
kept on the instance so callers can see what was subtracted.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import CapExceededError, ValidationError

SYMMETRY_TOL = 1e-12
ISOMETRY_TOL = 1e-12
PROB_SUM_TOL = 1e-12
DEFAULT_ATOM_CAP = 2_000_000


def _as_square(entries) -> np.ndarray:
    a = np.asarray(entries, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] < 1:
        raise ValidationError(f"expected a square matrix, got shape {a.shape}")
    return a


@dataclass(frozen=True)
class QuadraticForm:
    """Symmetric operator Q together with the form Q[x] = <Qx, x>."""

    entries: np.ndarray
    isometric: bool

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    def apply(self, x) -> np.ndarray | float:
        """Q[x] for a single vector or a batch with vectors in the last axis."""
        x = np.asarray(x, dtype=float)
        qx = x @ self.entries
        val = np.sum(qx * x, axis=-1)
        return float(val) if val.ndim == 0 else val

    __call__ = apply


def build_quadratic_form(entries) -> QuadraticForm:
    """Validate a symmetric non-degenerate matrix and detect the Q^2 = I case.

    Non-degeneracy is checked on the row-rescaled matrix (each row divided by
    its max-abs entry) so the determinant threshold is scale-free.
    """
    q = _as_square(entries)
    scale = np.max(np.abs(q))
    if scale == 0.0:
        raise ValidationError("zero matrix is degenerate")
    if np.max(np.abs(q - q.T)) > SYMMETRY_TOL * scale:
        raise ValidationError("matrix is not symmetric")
    q = 0.5 * (q + q.T)
    row_scale = np.max(np.abs(q), axis=1)
    if np.any(row_scale == 0.0):
        raise ValidationError("matrix has a zero row; kernel is nontrivial")
    if abs(np.linalg.det(q / row_scale[:, None])) <= 1e-12:
        raise ValidationError("matrix is numerically singular; kernel must be trivial")
    iso = bool(np.max(np.abs(q @ q - np.eye(q.shape[0]))) <= ISOMETRY_TOL)
    q.setflags(write=False)
    return QuadraticForm(entries=q, isometric=iso)


def identity_form(dim: int) -> QuadraticForm:
    return build_quadratic_form(np.eye(dim))


@dataclass(frozen=True)
class CovarianceModel:
    """Positive-definite covariance with its spectral data and square roots."""

    entries: np.ndarray
    eigenvalues: np.ndarray          # nonincreasing, all > 0
    eigenvectors: np.ndarray         # columns match eigenvalues
    half_power: np.ndarray           # C^{1/2}
    inv_half_power: np.ndarray       # C^{-1/2}

    @property
    def dim(self) -> int:
        return self.entries.shape[0]

    @property
    def trace(self) -> float:
        """Total variance sigma^2 = sum of eigenvalues."""
        return float(np.sum(self.eigenvalues))

    @property
    def determinant(self) -> float:
        return float(np.prod(self.eigenvalues))

    def whiten(self, x) -> np.ndarray:
        """C^{-1/2} x, batched over the last axis."""
        return np.asarray(x, dtype=float) @ self.inv_half_power.T


def build_covariance(entries) -> CovarianceModel:
    c = _as_square(entries)
    scale = np.max(np.abs(c))
    if scale == 0.0 or np.max(np.abs(c - c.T)) > 1e-10 * scale:
        raise ValidationError("covariance must be symmetric and nonzero")
    c = 0.5 * (c + c.T)
    w, v = np.linalg.eigh(c)
    if w[0] <= 1e-12 * w[-1] or w[0] <= 0.0:
        raise ValidationError("covariance is not positive definite")
    order = np.argsort(w)[::-1]
    w = w[order]
    v = v[:, order]
    half = (v * np.sqrt(w)) @ v.T
    inv_half = (v / np.sqrt(w)) @ v.T
    for a in (c, w, v, half, inv_half):
        a.setflags(write=False)
    return CovarianceModel(entries=c, eigenvalues=w, eigenvectors=v,
                           half_power=half, inv_half_power=inv_half)


def identity_covariance(dim: int) -> CovarianceModel:
    return build_covariance(np.eye(dim))


@dataclass(frozen=True)
class ShiftedInstance:
    """A shift a paired with the sample count N; b = sqrt(N) * a."""

    shift_a: np.ndarray
    n_samples: int
    shift_b: np.ndarray = field(init=False)

    def __post_init__(self):
        a = np.asarray(self.shift_a, dtype=float)
        if self.n_samples < 1:
            raise ValidationError("n_samples must be >= 1")
        b = math.sqrt(self.n_samples) * a
        a.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "shift_a", a)
        object.__setattr__(self, "shift_b", b)


def _normalize_probs(probs) -> np.ndarray:
    p = np.asarray(probs, dtype=float)
    if p.ndim != 1 or np.any(p <= 0.0):
        raise ValidationError("probabilities must be a 1-d array of positive numbers")
    s = float(p.sum())
    if abs(s - 1.0) > PROB_SUM_TOL:
        raise ValidationError(f"probabilities sum to {s!r}, not 1 within {PROB_SUM_TOL}")
    return p / s


def _merge_atoms(atoms: np.ndarray, probs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Merge atoms that are float-identical; keys never rounded."""
    table: dict[tuple, float] = {}
    for x, p in zip(atoms, probs):
        key = tuple(float(v) for v in x)
        table[key] = table.get(key, 0.0) + float(p)
    keys = sorted(table)
    merged = np.array(keys, dtype=float).reshape(len(keys), -1)
    return merged, np.array([table[k] for k in keys])


@dataclass(frozen=True)
class SourceDistribution:
    """Mean-zero law of the summand vector X.

    kind is one of "finite-discrete" (atoms + probs), "coordinate-product"
    (independent finite one-dimensional marginals) or "gaussian" (covariance
    reference). Moments are exact for the discrete kinds.
    """

    dim: int
    kind: str
    atoms: np.ndarray | None = None
    probs: np.ndarray | None = None
    marginals: tuple[tuple[np.ndarray, np.ndarray], ...] | None = None
    gaussian_cov: CovarianceModel | None = None
    center_offset: np.ndarray | None = None  # mean subtracted at construction

    # -- construction -----------------------------------------------------

    @staticmethod
    def finite_discrete(atoms, probs) -> "SourceDistribution":
        a = np.atleast_2d(np.asarray(atoms, dtype=float))
        p = _normalize_probs(probs)
        if a.shape[0] != p.shape[0]:
            raise ValidationError("atom count and probability count differ")
        mean = p @ a
        a = a - mean
        a, p = _merge_atoms(a, p)
        a.setflags(write=False)
        p.setflags(write=False)
        mean.setflags(write=False)
        return SourceDistribution(dim=a.shape[1], kind="finite-discrete",
                                  atoms=a, probs=p, center_offset=mean)

    @staticmethod
    def coordinate_product(marginals) -> "SourceDistribution":
        cleaned = []
        offsets = []
        for values, probs in marginals:
            v = np.asarray(values, dtype=float).ravel()
            p = _normalize_probs(probs)
            if v.shape[0] != p.shape[0]:
                raise ValidationError("marginal value/probability lengths differ")
            m = float(p @ v)
            vv, pp = _merge_atoms((v - m).reshape(-1, 1), p)
            vv = vv.ravel()
            vv.setflags(write=False)
            pp.setflags(write=False)
            cleaned.append((vv, pp))
            offsets.append(m)
        off = np.array(offsets)
        off.setflags(write=False)
        return SourceDistribution(dim=len(cleaned), kind="coordinate-product",
                                  marginals=tuple(cleaned), center_offset=off)

    @staticmethod
    def gaussian(cov: CovarianceModel) -> "SourceDistribution":
        return SourceDistribution(dim=cov.dim, kind="gaussian", gaussian_cov=cov,
                                  center_offset=np.zeros(cov.dim))

    @staticmethod
    def rademacher(dim: int) -> "SourceDistribution":
        """Independent +/-1 coordinates, probability 1/2 each."""
        one = (np.array([-1.0, 1.0]), np.array([0.5, 0.5]))
        return SourceDistribution.coordinate_product([one] * dim)

    # -- representation ---------------------------------------------------

    @property
    def is_discrete(self) -> bool:
        return self.kind in ("finite-discrete", "coordinate-product")

    def as_atoms(self, cap: int = DEFAULT_ATOM_CAP) -> tuple[np.ndarray, np.ndarray]:
        """Materialize the full atom list; fails above ``cap`` atoms."""
        if self.kind == "finite-discrete":
            return self.atoms, self.probs
        if self.kind == "coordinate-product":
            size = 1
            for v, _ in self.marginals:
                size *= len(v)
            if size > cap:
                raise CapExceededError(
                    f"product support has {size} atoms, cap is {cap}", estimate=size)
            grids = [v for v, _ in self.marginals]
            mesh = np.array(list(itertools.product(*grids)), dtype=float)
            prob = np.array([1.0])
            for _, p in self.marginals:
                prob = np.outer(prob, p).ravel()  # same order as itertools.product
            return mesh, prob
        raise ValidationError("gaussian law has no atom representation")

    def linear_transform(self, matrix) -> "SourceDistribution":
        """Law of A X (discrete kinds become finite-discrete)."""
        a = np.asarray(matrix, dtype=float)
        if self.kind == "gaussian":
            return SourceDistribution.gaussian(
                build_covariance(a @ self.gaussian_cov.entries @ a.T))
        atoms, probs = self.as_atoms()
        return SourceDistribution.finite_discrete(atoms @ a.T, probs)

    # -- exact moments ----------------------------------------------------

    @cached_property
    def mean(self) -> np.ndarray:
        return np.zeros(self.dim)

    @cached_property
    def covariance(self) -> np.ndarray:
        if self.kind == "finite-discrete":
            c = (self.atoms * self.probs[:, None]).T @ self.atoms
            return 0.5 * (c + c.T)
        if self.kind == "coordinate-product":
            return np.diag([float(p @ v ** 2) for v, p in self.marginals])
        return np.array(self.gaussian_cov.entries)

    @cached_property
    def covariance_model(self) -> CovarianceModel:
        if self.kind == "gaussian":
            return self.gaussian_cov
        return build_covariance(self.covariance)

    @property
    def sigma_sq(self) -> float:
        """E ||X||^2, the trace of the covariance."""
        return float(np.trace(self.covariance))

    def beta(self, q: int) -> float:
        """E ||X||^q; exact for discrete kinds, even q only for gaussian."""
        if self.is_discrete:
            atoms, probs = self.as_atoms()
            norms = np.linalg.norm(atoms, axis=1)
            return float(probs @ norms ** q)
        w = self.gaussian_cov.eigenvalues
        if q == 2:
            return float(np.sum(w))
        if q == 4:
            return float(np.sum(w) ** 2 + 2.0 * np.sum(w ** 2))
        raise ValidationError("gaussian beta(q) implemented for q in {2, 4} only")

    @cached_property
    def beta4(self) -> float:
        return self.beta(4)

    @cached_property
    def third_moment(self) -> np.ndarray:
        """E[X_i X_j X_k] as a (d, d, d) tensor (zeros for gaussian)."""
        if self.kind == "gaussian":
            return np.zeros((self.dim,) * 3)
        if self.kind == "coordinate-product":
            t = np.zeros((self.dim,) * 3)
            for j, (v, p) in enumerate(self.marginals):
                t[j, j, j] = float(p @ v ** 3)
            return t
        return np.einsum("n,ni,nj,nk->ijk", self.probs, self.atoms, self.atoms, self.atoms)

    @property
    def has_symmetric_third_moments(self) -> bool:
        return bool(np.max(np.abs(self.third_moment)) <= 1e-12)

    # -- sampling ----------------------------------------------------------

    def sample(self, count: int, stream: np.random.Generator) -> np.ndarray:
        if self.kind == "finite-discrete":
            idx = stream.choice(len(self.probs), size=count, p=self.probs)
            return self.atoms[idx]
        if self.kind == "coordinate-product":
            cols = [v[stream.choice(len(p), size=count, p=p)] for v, p in self.marginals]
            return np.column_stack(cols)
        z = stream.standard_normal((count, self.dim))
        return z @ self.gaussian_cov.half_power.T


def _convolve_difference(values: np.ndarray, probs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Exact law of V1 - V2 for independent copies of a 1-d discrete law."""
    diff = values[:, None] - values[None, :]
    pp = np.outer(probs, probs)
    merged, mp = _merge_atoms(diff.reshape(-1, 1), pp.ravel())
    return merged.ravel(), mp


def symmetrize(dist: SourceDistribution) -> SourceDistribution:
    """Law of X1 - X2 for independent copies; exact convolution for atoms.

    The result is mean-zero by symmetry, so it is constructed without the
    usual re-centering pass: subtracting the ~1e-17 numerical mean would
    break the exact +/- pairing of the atoms. A gaussian input stays
    gaussian with covariance doubled.
    """
    if dist.kind == "gaussian":
        return SourceDistribution.gaussian(
            build_covariance(2.0 * dist.gaussian_cov.entries))
    if dist.kind == "coordinate-product":
        sym = []
        for values, probs in dist.marginals:
            v, p = _convolve_difference(values, probs)
            v.setflags(write=False)
            p.setflags(write=False)
            sym.append((v, p))
        return SourceDistribution(dim=dist.dim, kind="coordinate-product",
                                  marginals=tuple(sym),
                                  center_offset=np.zeros(dist.dim))
    atoms, probs = dist.atoms, dist.probs
    diff = atoms[:, None, :] - atoms[None, :, :]
    pp = np.outer(probs, probs)
    merged, mp = _merge_atoms(diff.reshape(-1, atoms.shape[1]), pp.ravel())
    merged.setflags(write=False)
    mp.setflags(write=False)
    return SourceDistribution(dim=dist.dim, kind="finite-discrete",
                              atoms=merged, probs=mp,
                              center_offset=np.zeros(dist.dim))


@dataclass(frozen=True)
class ConditionReport:
    """Outcome of the ball-probability non-degeneracy check."""

    holds: bool
    probabilities: np.ndarray        # one per test point
    std_errors: np.ndarray | None    # None for exact (discrete) evaluation


def check_ball_lower_bounds(dist: SourceDistribution, p: float, delta: float,
                            points, mc_draws: int = 1_000_000,
                            stream: np.random.Generator | None = None) -> ConditionReport:
    """Does P{ ||Y - e|| <= delta } >= p hold at every point e?

    Exact for discrete laws; Monte Carlo with reported standard errors for
    gaussian laws. Checking a point family S together with Q S amounts to
    passing the concatenated point list.
    """
    if not 0.0 < p <= 1.0:
        raise ValidationError("p must lie in (0, 1]")
    if delta < 0.0:
        raise ValidationError("delta must be nonnegative")
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if dist.is_discrete:
        atoms, probs = dist.as_atoms()
        hits = np.linalg.norm(atoms[None, :, :] - pts[:, None, :], axis=2) <= delta
        ball = hits @ probs
        return ConditionReport(holds=bool(np.all(ball >= p)),
                               probabilities=ball, std_errors=None)
    if stream is None:
        raise ValidationError("gaussian law needs a random stream for MC estimation")
    draws = dist.sample(mc_draws, stream)
    ball = np.empty(len(pts))
    se = np.empty(len(pts))
    for i, e in enumerate(pts):
        inside = np.linalg.norm(draws - e, axis=1) <= delta
        ball[i] = inside.mean()
        se[i] = math.sqrt(max(ball[i] * (1.0 - ball[i]), 1.0 / mc_draws) / mc_draws)
    return ConditionReport(holds=bool(np.all(ball >= p)), probabilities=ball, std_errors=se)
