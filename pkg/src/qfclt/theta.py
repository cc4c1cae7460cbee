"""Theta series, the Poisson summation identity, and weight-domination checks.

Also houses the exact enumeration checks for the second-order symmetrization
inequality and the probe comparing symmetrized-Rademacher bilinear
characteristic functions against discrete-Gaussian weighted sums.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from fractions import Fraction
from functools import cached_property

import numpy as np
from scipy.special import gammaincc, gammaln

from .errors import CapExceededError, ValidationError
from .model import QuadraticForm, SourceDistribution, symmetrize

BOX_CAP = 4_000_000


@dataclass(frozen=True)
class ThetaParams:
    """Data (S, z, a, b) of a theta series with Re z > 0 and S positive definite."""

    s_matrix: np.ndarray
    z: complex
    a: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.s_matrix, dtype=float)
        if s.ndim != 2 or s.shape[0] != s.shape[1]:
            raise ValidationError("S must be square")
        if np.max(np.abs(s - s.T)) > 1e-10 * max(np.max(np.abs(s)), 1e-300):
            raise ValidationError("S must be symmetric")
        w = np.linalg.eigvalsh(0.5 * (s + s.T))
        if w[0] <= 1e-12 * abs(w[-1]):
            raise ValidationError("S must be positive definite")
        if complex(self.z).real <= 0.0:
            raise ValidationError("Re z must be positive")
        a = np.asarray(self.a, dtype=float).ravel()
        b = np.asarray(self.b, dtype=float).ravel()
        if a.shape != (s.shape[0],) or b.shape != (s.shape[0],):
            raise ValidationError("a and b must match the dimension of S")
        for arr in (s, a, b):
            arr.setflags(write=False)
        object.__setattr__(self, "s_matrix", 0.5 * (s + s.T))
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)

    @property
    def dim(self) -> int:
        return self.s_matrix.shape[0]


@dataclass(frozen=True)
class ThetaValue:
    value: complex
    tail_bound: float
    radius: float


def _ball_tail(kappa: float, radius: float, s: int) -> float:
    """Bound on sum over ||m + a|| > radius of exp(-kappa ||m+a||^2).

    Layer-cake over the counting measure: the number of points within
    distance t is at most vol of the ball of radius t + sqrt(s)/2, so the
    tail is at most int_R^inf 2 kappa t e^{-kappa t^2} omega_s (t+h)^s dt,
    expanded into upper incomplete gamma terms.
    """
    h = 0.5 * math.sqrt(s)
    omega = math.pi ** (s / 2.0) / math.gamma(s / 2.0 + 1.0)
    total = 0.0
    y = kappa * radius * radius
    for k in range(s + 1):
        coef = math.comb(s, k) * h ** (s - k) * kappa ** (-k / 2.0)
        total += coef * math.exp(gammaln(k / 2.0 + 1.0)) * float(gammaincc(k / 2.0 + 1.0, y))
    return omega * total


def theta_series(params: ThetaParams, tol: float = 1e-12) -> ThetaValue:
    """sum over m in Z^s of exp{-z S[m+a] + 2 pi i <m, b>}, truncated.

    The index set is the box covering the ball ||m + a|| <= R with R chosen
    so the certified tail bound is below tol.
    """
    if tol <= 0.0:
        raise ValidationError("tol must be positive")
    s = params.dim
    z = complex(params.z)
    lam_min = float(np.linalg.eigvalsh(params.s_matrix)[0])
    kappa = z.real * lam_min
    radius = math.sqrt(max(math.log(4.0 / tol), 1.0) / kappa) + math.sqrt(s)
    while _ball_tail(kappa, radius, s) > tol:
        radius *= 1.25
        if (2.0 * radius + 1.0) ** s > BOX_CAP:
            raise CapExceededError("truncation box exceeds the index cap",
                                   estimate=(2.0 * radius + 1.0) ** s)
    ranges = [np.arange(math.ceil(-ai - radius), math.floor(-ai + radius) + 1)
              for ai in params.a]
    size = int(np.prod([len(r) for r in ranges]))
    if size > BOX_CAP:
        raise CapExceededError("truncation box exceeds the index cap", estimate=size)
    mesh = np.array(list(itertools.product(*ranges)), dtype=float).reshape(size, s)
    y = mesh + params.a
    qvals = np.einsum("ni,ij,nj->n", y, params.s_matrix, y)
    phases = mesh @ params.b
    value = complex(np.sum(np.exp(-z * qvals + 2j * math.pi * phases)))
    return ThetaValue(value=value, tail_bound=_ball_tail(kappa, radius, s), radius=radius)


@dataclass(frozen=True)
class PoissonCheck:
    lhs: complex
    rhs: complex
    difference: float
    tail_bound: float


def poisson_check(params: ThetaParams, tol: float = 1e-12) -> PoissonCheck:
    """Evaluate both sides of the Poisson summation identity independently.

    The dual side is itself a theta series with (S, z, a, b) replaced by
    (S^{-1}, pi^2/z, b, -a), times the prefactor
    (det(S/pi))^{-1/2} z^{-s/2} exp{-2 pi i <a, b>}.
    """
    s = params.dim
    lhs = theta_series(params, tol)
    z = complex(params.z)
    dual = ThetaParams(s_matrix=np.linalg.inv(params.s_matrix),
                       z=math.pi ** 2 / z, a=params.b, b=-params.a)
    rhs_sum = theta_series(dual, tol)
    det_s = float(np.linalg.det(params.s_matrix))
    prefactor = (math.pi ** (s / 2.0) / math.sqrt(det_s)
                 * np.exp(-(s / 2.0) * np.log(z))
                 * np.exp(-2j * math.pi * float(params.a @ params.b)))
    rhs = complex(prefactor * rhs_sum.value)
    tail = lhs.tail_bound + abs(prefactor) * rhs_sum.tail_bound
    return PoissonCheck(lhs=lhs.value, rhs=rhs, difference=abs(lhs.value - rhs),
                        tail_bound=tail)


# ---------------------------------------------------------------------------
# binomial vs discrete-Gaussian weights


def _binomial_weights_exact(n: int) -> list[Fraction]:
    """P{R = m} for m = -n..n, where R is the half-sum of 2n signs."""
    denom = 4 ** n
    return [Fraction(math.comb(2 * n, m + n), denom) for m in range(-n, n + 1)]


@dataclass(frozen=True)
class WeightTable:
    """Binomial weights p(m) and discrete-Gaussian weights q(m) at count n."""

    n: int
    s: int
    k_range: int
    tail_tol: float = 1e-12

    def __post_init__(self):
        if self.n < 1 or self.s < 1:
            raise ValidationError("n and s must be positive")

    @cached_property
    def binomial_1d(self) -> np.ndarray:
        """Exact single-coordinate weights on m = -n..n (sums to 1 exactly)."""
        return np.array([float(f) for f in _binomial_weights_exact(self.n)])

    @cached_property
    def normalizer(self) -> float:
        """A_n with sum_k A_n n^{-1/2} exp(-k^2/2n) = 1, certified truncation."""
        ks = np.arange(-self.k_range, self.k_range + 1)
        total = float(np.sum(np.exp(-ks.astype(float) ** 2 / (2.0 * self.n))))
        # terms past k_range shrink by at least exp(-(2 k_range+1)/2n) each
        ratio = math.exp(-(2 * self.k_range + 1) / (2.0 * self.n))
        tail = 2.0 * math.exp(-(self.k_range + 1) ** 2 / (2.0 * self.n)) / (1.0 - ratio)
        if tail > self.tail_tol * total:
            raise ValidationError("k_range too small for the requested tail tolerance")
        return math.sqrt(self.n) / total

    def gaussian_1d_weight(self, k) -> np.ndarray:
        k = np.asarray(k, dtype=float)
        return self.normalizer / math.sqrt(self.n) * np.exp(-k ** 2 / (2.0 * self.n))


def default_k_range(n: int, tail_tol: float = 1e-12) -> int:
    return int(math.ceil(math.sqrt(2.0 * n * math.log(4.0 / tail_tol))) + 2)


def make_weight_table(n: int, s: int, tail_tol: float = 1e-12) -> WeightTable:
    return WeightTable(n=n, s=s, k_range=default_k_range(n, tail_tol), tail_tol=tail_tol)


@dataclass(frozen=True)
class WeightDomination:
    sup_ratio: float
    argmax_m: int
    tail_mass: float
    threshold: int


def weight_domination_check(n: int, c2: float) -> WeightDomination:
    """Exact binomial arithmetic behind the Gaussian-weight domination.

    sup ratio is max over |m| <= c2 n of p(m) sqrt(n) exp(m^2 / 2n); tail
    mass is P{|R| >= c2 n}. Both use exact rational binomials.
    """
    if n < 1:
        raise ValidationError("n must be >= 1")
    if not 0.0 < c2 <= 0.5:
        raise ValidationError("c2 must lie in (0, 1/2]")
    weights = _binomial_weights_exact(n)
    bound = int(math.floor(c2 * n))
    sup_ratio = -math.inf
    argmax = 0
    for m in range(-bound, bound + 1):
        ratio = float(weights[m + n]) * math.sqrt(n) * math.exp(m * m / (2.0 * n))
        if ratio > sup_ratio:
            sup_ratio, argmax = ratio, m
    threshold = int(math.ceil(c2 * n))
    tail = Fraction(0)
    for m in range(threshold, n + 1):
        tail += weights[m + n]
        tail += weights[-m + n]
    return WeightDomination(sup_ratio=sup_ratio, argmax_m=argmax,
                            tail_mass=float(tail), threshold=threshold)


# ---------------------------------------------------------------------------
# symmetrization inequality (exact enumeration)


@dataclass(frozen=True)
class SymCheckResult:
    lhs: float
    rhs: float
    holds: bool
    imag_residue: float


def _atoms_of(law: SourceDistribution, cap: int) -> tuple[np.ndarray, np.ndarray]:
    if not law.is_discrete:
        raise ValidationError("symmetrization check needs discrete laws")
    return law.as_atoms(cap)


def symmetrization_check(t: float, laws, form: QuadraticForm, linear=None,
                         const: float = 0.0, cap: int = 1_000_000) -> SymCheckResult:
    """Check 2 |E e{t P(Z+U+V+W)}|^2 <= E e{2t<Q Zs, Us>} + E e{2t<Q Zs, Vs>}.

    P is the full second-order polynomial Q[x] + <L, x> + const; Zs, Us, Vs
    are the exact symmetrizations of the first three laws. Everything is an
    exact finite enumeration, so the inequality is tested to rounding error.
    """
    z_law, u_law, v_law, w_law = laws
    d = form.dim
    lin = np.zeros(d) if linear is None else np.asarray(linear, dtype=float)
    parts = [_atoms_of(law, cap) for law in (z_law, u_law, v_law, w_law)]
    total = 1
    for atoms, _ in parts:
        total *= len(atoms)
    if total > cap:
        raise CapExceededError(f"product support {total} above cap {cap}", estimate=total)

    sums = np.zeros((1, d))
    weight = np.array([1.0])
    for atoms, probs in parts:
        sums = (sums[:, None, :] + atoms[None, :, :]).reshape(-1, d)
        weight = np.outer(weight, probs).ravel()
    poly = form.apply(sums) + sums @ lin + const
    expectation = complex(np.sum(weight * np.exp(1j * t * poly)))
    lhs = 2.0 * abs(expectation) ** 2

    z_sym = symmetrize(z_law)
    za, zp = z_sym.as_atoms(cap)
    rhs = 0.0
    residue = 0.0
    for other in (u_law, v_law):
        oa, op = symmetrize(other).as_atoms(cap)
        cross = za @ form.entries @ oa.T
        val = complex(zp @ np.exp(2j * t * cross) @ op)
        rhs += val.real
        residue = max(residue, abs(val.imag))
    return SymCheckResult(lhs=lhs, rhs=rhs, holds=bool(lhs <= rhs + 1e-12),
                          imag_residue=residue)


# ---------------------------------------------------------------------------
# bilinear characteristic-function probe


@dataclass(frozen=True)
class SymmetrizationInstance:
    """Vectors z_j, z'_j with the bilinear matrix b_ij(t) = t <Q z_i, z'_j>."""

    form: QuadraticForm
    z_vectors: np.ndarray        # (s, d)
    z_prime_vectors: np.ndarray  # (s, d)
    sigma1_sq: float = 1.0

    @property
    def s(self) -> int:
        return self.z_vectors.shape[0]

    def b_matrix(self, t: float) -> np.ndarray:
        return t * (self.z_vectors @ self.form.entries @ self.z_prime_vectors.T)

    @property
    def v_matrix(self) -> np.ndarray:
        return self.b_matrix(1.0) / (2.0 * math.pi)

    @property
    def v0_matrix(self) -> np.ndarray:
        return self.v_matrix / self.sigma1_sq

    def in_class(self, delta: float, dmat, base_points) -> bool:
        """Membership in the class with ||D z_j - e_j|| <= delta for both lists."""
        dm = np.asarray(dmat, dtype=float)
        es = np.atleast_2d(np.asarray(base_points, dtype=float))
        ok_z = np.linalg.norm(self.z_vectors @ dm.T - es, axis=1) <= delta
        ok_zp = np.linalg.norm(self.z_prime_vectors @ dm.T - es, axis=1) <= delta
        return bool(np.all(ok_z) and np.all(ok_zp))


@dataclass(frozen=True)
class BilinearProbe:
    lhs: float
    rhs_expectation: float
    decay_exponent_n: int       # the additive term is exp(-c n) with c unknown
    theta_bound: float | None
    imag_residue: float


def _mesh(ranges: list[np.ndarray]) -> np.ndarray:
    return np.array(list(itertools.product(*ranges)), dtype=float)


def bilinear_cf_probe(t: float, instance: SymmetrizationInstance, n: int,
                      with_theta_bound: bool = True,
                      cap: int = 4_000_000) -> BilinearProbe:
    """Exact pairing expectation vs its discrete-Gaussian weighted analogue.

    lhs integrates out the first symmetrized-Rademacher block in closed form
    (a cos^{2n} factor per row) and enumerates the second exactly with
    binomial weights. rhs replaces both blocks by discrete-Gaussian weights;
    the unquantified exp(-c n) slack is reported as the bare exponent n, not
    folded into the number.
    """
    s = instance.s
    if (2 * n + 1) ** s > cap:
        raise CapExceededError("enumeration grid above cap", estimate=(2 * n + 1) ** s)
    table = make_weight_table(n, s)
    b_t = instance.b_matrix(t)

    grid = _mesh([np.arange(-n, n + 1)] * s)
    p1 = table.binomial_1d
    probs = np.prod(p1[(grid + n).astype(int)], axis=1)
    contracted = grid @ b_t.T                      # row i holds (B_t mbar)_i
    lhs = float(np.sum(probs * np.prod(np.cos(contracted / 2.0) ** (2 * n), axis=1)))

    kr = table.k_range
    ks = np.arange(-kr, kr + 1)
    qk = table.gaussian_1d_weight(ks)
    if (2 * kr + 1) ** s > cap:
        raise CapExceededError("gaussian grid above cap", estimate=(2 * kr + 1) ** s)
    ggrid = _mesh([ks.astype(float)] * s)
    gprobs = np.prod(qk[(ggrid + kr).astype(int)], axis=1)
    inner = ggrid @ b_t.T
    phi = np.ones(len(ggrid))
    for i in range(s):
        vals = qk @ np.cos(np.outer(ks, inner[:, i]))
        phi *= vals
    rhs = float(np.sum(gprobs * phi))

    bound = None
    if with_theta_bound:
        r = math.sqrt(2.0 * math.pi ** 2 * n)
        v = instance.v_matrix
        span = int(math.ceil(r * math.sqrt(math.log(1e16) + s * math.log(max(r, 2.0)))))
        if (2 * span + 1) ** s <= cap:
            mbar = _mesh([np.arange(-span, span + 1)] * s)
            centers = t * (mbar @ v.T)
            local = int(math.ceil(math.sqrt(math.log(1e16)) / r)) + 1
            acc = np.zeros(len(mbar))
            for offs in itertools.product(range(-local, local + 1), repeat=s):
                m = np.floor(centers + 0.5) + np.array(offs, dtype=float)
                acc += np.exp(-r ** 2 * np.sum((m - centers) ** 2, axis=1))
            bound = float(r ** -s * np.sum(acc * np.exp(-np.sum(mbar ** 2, axis=1) / r ** 2)))
    return BilinearProbe(lhs=lhs, rhs_expectation=rhs, decay_exponent_n=n,
                         theta_bound=bound, imag_residue=0.0)
