"""Geometry-of-numbers engine.

Lattices with reduced bases, successive minima, determinant-based alpha
profiles, exact integer point counts in norm balls and ellipsoids, and the
dilation/shear/rotation matrices acting on paired-coordinate lattices, with
an exploratory rotation-averaged alpha integral probe.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import CapExceededError, ValidationError
from .model import QuadraticForm

ENUM_POINT_CAP = 2_000_000
ENUM_PARTIAL_CAP = 50_000_000
BOUNDARY_EPS = 1e-9


@dataclass(frozen=True)
class Lattice:
    """Full-rank-in-span lattice given by independent basis vectors (rows)."""

    basis: np.ndarray

    def __post_init__(self):
        b = np.asarray(self.basis, dtype=float)
        if b.ndim != 2 or b.shape[0] < 1 or b.shape[0] > b.shape[1]:
            raise ValidationError("basis must be an (m, n) array with m <= n")
        norms = np.linalg.norm(b, axis=1)
        if np.any(norms == 0.0):
            raise ValidationError("basis contains a zero vector")
        gram_det = float(np.linalg.det(b @ b.T))
        if gram_det <= 1e-10 * float(np.prod(norms)) ** 2:
            raise ValidationError("basis vectors are numerically dependent")
        b = b.copy()
        b.setflags(write=False)
        object.__setattr__(self, "basis", b)

    @property
    def rank(self) -> int:
        return self.basis.shape[0]

    @property
    def ambient_dim(self) -> int:
        return self.basis.shape[1]

    @property
    def determinant(self) -> float:
        return math.sqrt(float(np.linalg.det(self.basis @ self.basis.T)))

    @property
    def gram(self) -> np.ndarray:
        return self.basis @ self.basis.T


def integer_lattice(dim: int) -> Lattice:
    return Lattice(np.eye(dim))


# ---------------------------------------------------------------------------
# LLL reduction


def _gram_schmidt(b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    m = b.shape[0]
    star = b.astype(float).copy()
    mu = np.zeros((m, m))
    for i in range(m):
        for j in range(i):
            mu[i, j] = (b[i] @ star[j]) / (star[j] @ star[j])
            star[i] -= mu[i, j] * star[j]
    return star, mu


def lovasz_holds(basis: np.ndarray, delta: float = 0.75) -> bool:
    star, mu = _gram_schmidt(np.asarray(basis, dtype=float))
    norms = np.sum(star * star, axis=1)
    for k in range(1, len(norms)):
        if norms[k] < (delta - mu[k, k - 1] ** 2) * norms[k - 1]:
            return False
    return True


@dataclass(frozen=True)
class LLLResult:
    lattice: Lattice
    transform: np.ndarray  # integer unimodular, rows: new = transform @ old


def lll_reduce(lat: Lattice, delta: float = 0.75) -> LLLResult:
    """Size-reduced basis satisfying the Lovasz condition; same lattice.

    Gram-Schmidt data is recomputed from scratch after every swap; the ranks
    here are small and robustness beats speed.
    """
    if not 0.25 < delta < 1.0:
        raise ValidationError("delta must lie in (1/4, 1)")
    b, u = _lll_arrays(lat.basis, delta)
    return LLLResult(lattice=Lattice(b), transform=u)


def _lll_arrays(basis: np.ndarray, delta: float = 0.75):
    """LLL on a raw basis array; lets callers reduce before validation."""
    b = basis.astype(float).copy()
    m = b.shape[0]
    u = np.eye(m, dtype=np.int64)
    star, mu = _gram_schmidt(b)
    norms = np.sum(star * star, axis=1)
    k = 1
    guard = 0
    while k < m:
        guard += 1
        if guard > 100_000:
            raise RuntimeError("LLL failed to terminate; basis badly conditioned")
        for j in range(k - 1, -1, -1):
            q = round(mu[k, j])
            if q != 0:
                b[k] -= q * b[j]
                u[k] -= q * u[j]
                star, mu = _gram_schmidt(b)
                norms = np.sum(star * star, axis=1)
        if norms[k] >= (delta - mu[k, k - 1] ** 2) * norms[k - 1]:
            k += 1
        else:
            b[[k, k - 1]] = b[[k - 1, k]]
            u[[k, k - 1]] = u[[k - 1, k]]
            star, mu = _gram_schmidt(b)
            norms = np.sum(star * star, axis=1)
            k = max(k - 1, 1)
    return b, u


# ---------------------------------------------------------------------------
# integer points of a positive quadratic form (shared enumeration core)


def _expand_ranges(lo: np.ndarray, hi: np.ndarray):
    counts = np.maximum(hi - lo + 1, 0)
    keep = np.flatnonzero(counts > 0)
    reps = counts[keep]
    total = int(reps.sum())
    parent = np.repeat(keep, reps)
    starts = np.concatenate(([0], np.cumsum(reps)[:-1]))
    pos = np.arange(total, dtype=np.int64) - np.repeat(starts, reps)
    return parent, lo[parent] + pos, total


def quadratic_lattice_points(a_matrix: np.ndarray, radius_sq: float, center,
                             materialize: bool = False,
                             point_cap: int = ENUM_POINT_CAP,
                             partial_cap: int = ENUM_PARTIAL_CAP):
    """Count (or list) integer z with (z-center)^T A (z-center) <= radius_sq.

    Coordinate-recursive interval slicing off the Cholesky factor of A; the
    last coordinate is counted arithmetically, so only slab tuples are ever
    materialized when counting. Boundary membership gets a 1e-9 slack so
    exact-boundary points are kept despite float rounding.
    """
    a = np.asarray(a_matrix, dtype=float)
    d = a.shape[0]
    c = np.asarray(center, dtype=float).ravel()
    if c.shape != (d,):
        raise ValidationError("center has wrong shape")
    if radius_sq < 0.0:
        return (np.zeros((0, d), dtype=np.int64) if materialize else 0)
    r_upper = np.linalg.cholesky(a).T
    rem = np.array([float(radius_sq)])
    srows = np.zeros((1, d))
    cols: list[np.ndarray] = []
    count_total = 0
    for k in range(d - 1, -1, -1):
        rkk = r_upper[k, k]
        sk = srows[:, k]
        root = np.sqrt(np.maximum(rem, 0.0))
        lo = np.ceil(c[k] + (-root - sk) / rkk - BOUNDARY_EPS).astype(np.int64)
        hi = np.floor(c[k] + (root - sk) / rkk + BOUNDARY_EPS).astype(np.int64)
        if k == 0 and not materialize:
            return count_total + int(np.maximum(hi - lo + 1, 0).sum())
        parent, zk, total = _expand_ranges(lo, hi)
        cap = point_cap if materialize else partial_cap
        if total > cap:
            raise CapExceededError(f"enumeration needs {total} entries, cap {cap}",
                                   estimate=total)
        yk = zk.astype(float) - c[k]
        term = rkk * yk + sk[parent]
        rem = rem[parent] - term * term
        srows = srows[parent][:, :k] + yk[:, None] * r_upper[:k, k][None, :]
        cols = [col[parent] for col in cols]
        cols.append(zk)
    pts = np.column_stack(cols[::-1]) if cols else np.zeros((0, d), dtype=np.int64)
    return pts


def enumerate_lattice_vectors(lat: Lattice, euclid_radius: float,
                              point_cap: int = ENUM_POINT_CAP) -> np.ndarray:
    """All lattice vectors with Euclidean norm <= euclid_radius (incl. zero)."""
    coeffs = quadratic_lattice_points(lat.gram, euclid_radius ** 2,
                                      np.zeros(lat.rank), materialize=True,
                                      point_cap=point_cap)
    return coeffs.astype(float) @ lat.basis


# ---------------------------------------------------------------------------
# norms


@dataclass(frozen=True)
class NormSpec:
    """A norm usable for minima and ball counts.

    kinds: "euclidean"; "sup"; "quadratic" (sqrt of a PD form, matrix=A);
    "weighted-sup" (pairs (m, mbar) -> max(||m||_inf, sigma1_sq ||V^{-1} mbar||_inf),
    matrix=V on the second half of the coordinates).
    """

    kind: str = "euclidean"
    matrix: np.ndarray | None = None
    sigma1_sq: float = 1.0

    def __call__(self, pts) -> np.ndarray:
        x = np.atleast_2d(np.asarray(pts, dtype=float))
        if self.kind == "euclidean":
            return np.linalg.norm(x, axis=1)
        if self.kind == "sup":
            return np.max(np.abs(x), axis=1)
        if self.kind == "quadratic":
            return np.sqrt(np.einsum("ni,ij,nj->n", x, self.matrix, x))
        if self.kind == "weighted-sup":
            s = x.shape[1] // 2
            first = np.max(np.abs(x[:, :s]), axis=1)
            second = np.max(np.abs(x[:, s:] @ np.linalg.inv(self.matrix).T), axis=1)
            return np.maximum(first, self.sigma1_sq * second)
        raise ValidationError(f"unknown norm kind {self.kind!r}")

    def euclidean_lower(self, dim: int) -> float:
        """c with F(v) >= c ||v||_2, used to bound enumeration regions."""
        if self.kind == "euclidean":
            return 1.0
        if self.kind == "sup":
            return 1.0 / math.sqrt(dim)
        if self.kind == "quadratic":
            return math.sqrt(float(np.linalg.eigvalsh(self.matrix)[0]))
        if self.kind == "weighted-sup":
            s = dim // 2
            vnorm = float(np.linalg.norm(self.matrix, 2))
            return 1.0 / math.sqrt(s * (1.0 + vnorm ** 2 / self.sigma1_sq ** 2))
        raise ValidationError(f"unknown norm kind {self.kind!r}")


EUCLIDEAN = NormSpec(kind="euclidean")


# ---------------------------------------------------------------------------
# successive minima and alpha profile


@dataclass(frozen=True)
class SuccessiveMinima:
    values: np.ndarray
    witnesses: np.ndarray  # rows, independent, F(witness[j]) = values[j] in exact mode
    method: str            # "exact-enumeration" or "lll-approx"


def _greedy_independent(vectors: np.ndarray, values: np.ndarray, rank: int):
    order = np.argsort(values, kind="stable")
    chosen: list[int] = []
    basis: list[np.ndarray] = []
    for idx in order:
        v = vectors[idx]
        if np.linalg.norm(v) == 0.0:
            continue
        res = v.copy()
        for w in basis:
            res -= (res @ w) * w
        if np.linalg.norm(res) > 1e-9 * np.linalg.norm(v):
            chosen.append(idx)
            basis.append(res / np.linalg.norm(res))
            if len(chosen) == rank:
                break
    return chosen


def successive_minima(lat: Lattice, norm: NormSpec = EUCLIDEAN,
                      mode: str = "exact") -> SuccessiveMinima:
    """Minima of ``norm`` over ``lat``: exact enumeration or reduced-basis proxy.

    The exact search ball has radius max_l F(reduced basis vector l), which
    always contains witnesses for every minimum; on enumeration overflow the
    result falls back to the proxy and says so in ``method``.
    """
    red = lll_reduce(lat).lattice
    fvals = norm(red.basis)
    order = np.argsort(fvals, kind="stable")
    approx = SuccessiveMinima(values=fvals[order], witnesses=red.basis[order],
                              method="lll-approx")
    if mode != "exact":
        return approx
    radius_f = float(np.max(fvals)) * (1.0 + 1e-12)
    try:
        vecs = enumerate_lattice_vectors(red, radius_f / norm.euclidean_lower(red.ambient_dim))
    except CapExceededError:
        return approx
    vals = norm(vecs)
    inside = vals <= radius_f
    vecs, vals = vecs[inside], vals[inside]
    chosen = _greedy_independent(vecs, vals, red.rank)
    if len(chosen) < red.rank:
        return approx
    return SuccessiveMinima(values=vals[chosen], witnesses=vecs[chosen],
                            method="exact-enumeration")


@dataclass(frozen=True)
class AlphaProfile:
    """Reciprocal sublattice determinants, alpha_l, and their maximum.

    The default entries are the minima surrogate 1/(M_1 ... M_l); the
    full-rank entry is 1/det exactly, since every full-rank sublattice has
    determinant at least det and the lattice itself attains it.
    """

    values: np.ndarray
    method: str

    @property
    def alpha(self) -> float:
        return float(np.max(self.values))


def alpha_characteristic(lat: Lattice, mode: str = "surrogate",
                         minima_mode: str = "exact") -> AlphaProfile:
    if mode == "exact-sup":
        if lat.rank > 3:
            raise ValidationError("exact-sup alpha is limited to rank <= 3")
        return _alpha_exact_sup(lat)
    minima = successive_minima(lat, EUCLIDEAN, mode=minima_mode)
    prods = np.cumprod(minima.values)
    vals = 1.0 / prods
    vals[-1] = 1.0 / lat.determinant
    return AlphaProfile(values=vals, method=f"surrogate/{minima.method}")


def _alpha_exact_sup(lat: Lattice, pool: int = 96) -> AlphaProfile:
    import itertools as _it

    minima = successive_minima(lat, EUCLIDEAN, mode="exact")
    radius = 2.0 * float(minima.values[-1])
    vecs = enumerate_lattice_vectors(lat, radius)
    norms = np.linalg.norm(vecs, axis=1)
    vecs = vecs[norms > 0.0]
    norms = norms[norms > 0.0]
    if len(vecs) > pool:
        vecs = vecs[np.argsort(norms, kind="stable")[:pool]]
    m = lat.rank
    best = [0.0] * m
    for l in range(1, m + 1):
        idx = np.array(list(_it.combinations(range(len(vecs)), l)))
        subs = vecs[idx]                                   # (ncomb, l, dim)
        grams = np.einsum("nli,nmi->nlm", subs, subs)
        dets = np.linalg.det(grams)
        # a dependent subset has determinant exactly 0 up to rounding;
        # independent lattice subsets are bounded away from it
        floors = 1e-9 * np.prod(np.einsum("nli,nli->nl", subs, subs), axis=1)
        valid = dets > floors
        if np.any(valid):
            best[l - 1] = float(np.max(1.0 / np.sqrt(dets[valid])))
    vals = np.array(best)
    vals[-1] = max(vals[-1], 1.0 / lat.determinant)
    return AlphaProfile(values=vals, method="exact-sup")


# ---------------------------------------------------------------------------
# counting


@dataclass(frozen=True)
class NormBallCount:
    count: int
    radius: float
    rank_reached: int       # the j with M_j <= b < M_{j+1} from the proxy minima
    davenport_ratio: float  # count / (b^j / (M_1 ... M_j))


def count_norm_ball(lat: Lattice, norm: NormSpec, b: float,
                    expected_cap: float = 1e7) -> NormBallCount:
    """Exact #{v in lat : F(v) < b}, with a feasibility estimate first."""
    if b <= 0.0:
        raise ValidationError("radius must be positive")
    minima = successive_minima(lat, norm, mode="approx")
    j = int(np.sum(minima.values <= b))
    est = (b ** j) / float(np.prod(minima.values[:j])) if j else 1.0
    if est > expected_cap:
        raise CapExceededError(f"expected count about {est:.3g} exceeds cap",
                               estimate=est)
    vecs = enumerate_lattice_vectors(lat, b / norm.euclidean_lower(lat.ambient_dim),
                                     point_cap=int(max(expected_cap, ENUM_POINT_CAP)))
    count = int(np.sum(norm(vecs) < b))
    ratio = count / est if j else float("nan")
    return NormBallCount(count=count, radius=b, rank_reached=j, davenport_ratio=ratio)


@dataclass(frozen=True)
class EllipsoidCount:
    count: int
    volume: float
    relative_error: float


def unit_ball_volume(dim: int) -> float:
    return math.pi ** (dim / 2.0) / math.gamma(dim / 2.0 + 1.0)


def count_ellipsoid(form: QuadraticForm, r: float, shift=None,
                    partial_cap: int = ENUM_PARTIAL_CAP) -> EllipsoidCount:
    """Integer points of the shifted ellipsoid {Q[x - a] <= r^2} vs its volume."""
    w = np.linalg.eigvalsh(form.entries)
    if w[0] <= 0.0:
        raise ValidationError("ellipsoid counting needs a positive-definite form")
    d = form.dim
    a = np.zeros(d) if shift is None else np.asarray(shift, dtype=float)
    count = quadratic_lattice_points(form.entries, r * r, a, partial_cap=partial_cap)
    volume = unit_ball_volume(d) * r ** d / math.sqrt(float(np.prod(w)))
    return EllipsoidCount(count=int(count), volume=volume,
                          relative_error=(count - volume) / volume)


# ---------------------------------------------------------------------------
# dilation / shear / rotation flow


def dilation_matrix(s: int, r: float) -> np.ndarray:
    return np.block([[r * np.eye(s), np.zeros((s, s))],
                     [np.zeros((s, s)), np.eye(s) / r]])


def shear_matrix(s: int, t: float) -> np.ndarray:
    return np.block([[np.eye(s), -t * np.eye(s)],
                     [np.zeros((s, s)), np.eye(s)]])


def rotation_mix_matrix(s: int, t: float) -> np.ndarray:
    return np.block([[np.eye(s), -t * np.eye(s)],
                     [t * np.eye(s), np.eye(s)]])


def interleave_permutation(s: int) -> np.ndarray:
    """Row permutation sending block order (1..s, s+1..2s) to (1, s+1, 2, s+2, ...)."""
    order = []
    for j in range(s):
        order.extend([j, s + j])
    t = np.zeros((2 * s, 2 * s))
    for new, old in enumerate(order):
        t[new, old] = 1.0
    return t


def pair_rotation(theta: float) -> np.ndarray:
    c, s_ = math.cos(theta), math.sin(theta)
    return np.array([[c, -s_], [s_, c]])


def pair_dilation(r: float) -> np.ndarray:
    return np.array([[r, 0.0], [0.0, 1.0 / r]])


def block_diag_pairs(block: np.ndarray, s: int) -> np.ndarray:
    out = np.zeros((2 * s, 2 * s))
    for j in range(s):
        out[2 * j:2 * j + 2, 2 * j:2 * j + 2] = block
    return out


@dataclass(frozen=True)
class FlowMatrices:
    """The dilation/shear/rotation actions at (r, t) in paired dimension 2s."""

    s: int
    r: float
    t: float
    sigma1_sq: float = 1.0

    @property
    def theta(self) -> float:
        return math.atan(self.t)

    @property
    def u(self) -> float:
        return self.sigma1_sq * self.t

    @property
    def dilation(self) -> np.ndarray:
        return dilation_matrix(self.s, self.r)

    @property
    def shear(self) -> np.ndarray:
        return shear_matrix(self.s, self.t)

    @property
    def rotation_mix(self) -> np.ndarray:
        return rotation_mix_matrix(self.s, self.t)

    @property
    def permutation(self) -> np.ndarray:
        return interleave_permutation(self.s)

    @property
    def block_rotation(self) -> np.ndarray:
        return block_diag_pairs(pair_rotation(self.theta), self.s)

    @property
    def block_dilation(self) -> np.ndarray:
        return block_diag_pairs(pair_dilation(self.r), self.s)


def build_flow(s: int, r: float, t: float, sigma1_sq: float = 1.0) -> FlowMatrices:
    if r <= 0.0:
        raise ValidationError("r must be positive")
    return FlowMatrices(s=s, r=r, t=t, sigma1_sq=sigma1_sq)


def apply_flow(matrix: np.ndarray, lat: Lattice, reduce: bool = False) -> Lattice:
    """Image lattice under a linear map (basis vectors are transformed).

    Strong shears can push the raw image basis past the orthogonality-defect
    guard even though the lattice is fine; ``reduce=True`` reduces the raw
    basis first and constructs from that.
    """
    raw = lat.basis @ np.asarray(matrix, dtype=float).T
    if reduce:
        raw, _ = _lll_arrays(raw)
    return Lattice(raw)


def paired_block_lattice(v0: np.ndarray) -> Lattice:
    """Lattice generated by the columns of [[I, 0], [0, V0]]."""
    s = v0.shape[0]
    gen = np.block([[np.eye(s), np.zeros((s, s))], [np.zeros((s, s)), v0]])
    return Lattice(gen.T)


def paired_block_lattice_j(v0: np.ndarray, j: int) -> Lattice:
    """Lattice generated by the columns of [[j I, -V0], [0, V0 / j]]."""
    s = v0.shape[0]
    gen = np.block([[j * np.eye(s), -v0], [np.zeros((s, s)), v0 / j]])
    return Lattice(gen.T)


@dataclass(frozen=True)
class GmProbeResult:
    integral: float
    ratio: float
    h_norm: float
    alpha_base: float
    thetas: np.ndarray
    integrand: np.ndarray


def gm_integral_probe(h_pair: np.ndarray, lat: Lattice, beta: float,
                      grid: int = 256) -> GmProbeResult:
    """Trapezoid estimate of the rotation-averaged alpha integral.

    Integrates alpha(H K_theta Lambda)^beta over theta in [0, 2pi] with
    H = block-diag of the 2x2 unimodular ``h_pair``, and reports the ratio
    against alpha(Lambda)^beta ||h||^(beta d - 2). Exploratory: callers
    decide what to do with the ratio, nothing is asserted here.
    """
    h = np.asarray(h_pair, dtype=float)
    if h.shape != (2, 2) or abs(np.linalg.det(h) - 1.0) > 1e-9:
        raise ValidationError("h must be a 2x2 matrix with determinant 1")
    if lat.rank % 2 != 0:
        raise ValidationError("lattice rank must be even (paired coordinates)")
    d = lat.rank // 2
    if beta * d <= 2.0:
        raise ValidationError("need beta * d > 2")
    h_big = block_diag_pairs(h, d)
    thetas = np.linspace(0.0, 2.0 * math.pi, grid + 1)
    vals = np.empty(grid + 1)
    for i, th in enumerate(thetas):
        rot = block_diag_pairs(pair_rotation(th), d)
        moved = apply_flow(h_big @ rot, lat, reduce=True)
        vals[i] = alpha_characteristic(moved, minima_mode="approx").alpha ** beta
    integral = float(np.trapezoid(vals, thetas))
    alpha_base = alpha_characteristic(lat, minima_mode="approx").alpha
    h_norm = float(np.linalg.norm(h, 2))
    ratio = integral / (alpha_base ** beta * h_norm ** (beta * d - 2.0))
    return GmProbeResult(integral=integral, ratio=ratio, h_norm=h_norm,
                         alpha_base=alpha_base, thetas=thetas, integrand=vals)
