"""Normal-distribution numerics underlying every test in the package.

Univariate CDF/quantile wrap scipy's ndtr/ndtri. Multivariate rectangle
probabilities are exact in dimension 1, computed from Owen's T function
in dimension 2, and estimated in dimension 3 and above by
separation-of-variables quasi-Monte Carlo in the style of Genz (1992):
Cholesky factorization with greedy variable reordering, digitally
shifted Sobol' points, and an error estimate from independent
randomizations. Every result carries an absolute-error bound; estimates
are bit-reproducible for a fixed seed.
"""

from __future__ import annotations

import math
import threading
from collections.abc import Callable, Sequence
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr, ndtri, owens_t
from scipy.stats import qmc

from .exceptions import BracketError, InputError, NumericError

DEFAULT_TARGET_ERROR = 1e-6
DEFAULT_ROOT_TOL = 1e-6
# per-randomization Sobol' cap; one estimate uses at most _SHIFTS times this
DEFAULT_MAX_POINTS = 1 << 16

_SHIFTS = 10
_START_POINTS = 1 << 11
_PSD_TOL = 1e-10
_TWO32 = float(1 << 32)
_U64 = (1 << 64) - 1
_SQRT_TWO_PI = math.sqrt(2.0 * math.pi)
# Owen's-T based paths are good to ~1e-14; reported with margin
_EXACT_2D_ERROR = 1e-13


@dataclass(frozen=True)
class ProbEstimate:
    """Probability estimate with an absolute-error bound.

    ``error`` is 0 for closed-form paths and roughly a 3-sigma bound for
    quasi-Monte Carlo paths.
    """

    value: float
    error: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.value <= 1.0:
            raise NumericError(f"probability estimate {self.value} outside [0, 1]")
        if not self.error >= 0.0:
            raise NumericError(f"error bound must be nonnegative, got {self.error}")


@dataclass(frozen=True, eq=False)
class CorrelationMatrix:
    """Validated correlation matrix: symmetric, unit diagonal, PSD.

    Entries are snapped to exact symmetry and clipped to [-1, 1] after
    validation; eigenvalues may undershoot zero by at most 1e-10.
    """

    values: np.ndarray

    def __post_init__(self) -> None:
        v = np.array(self.values, dtype=float)
        if v.ndim != 2 or v.shape[0] != v.shape[1] or v.shape[0] == 0:
            raise InputError("correlation matrix must be square and nonempty")
        if not np.all(np.isfinite(v)):
            raise InputError("correlation entries must be finite")
        if np.abs(v - v.T).max() > 1e-10:
            raise InputError("correlation matrix must be symmetric")
        if np.abs(np.diag(v) - 1.0).max() > 1e-10:
            raise InputError("correlation diagonal must equal 1")
        if np.abs(v).max() > 1.0 + 1e-12:
            raise InputError("correlation entries must lie in [-1, 1]")
        v = np.clip((v + v.T) / 2.0, -1.0, 1.0)
        np.fill_diagonal(v, 1.0)
        if v.shape[0] > 2:
            low = float(np.linalg.eigvalsh(v)[0])
            if low < -_PSD_TOL:
                raise InputError(
                    f"correlation matrix is not positive semidefinite "
                    f"(smallest eigenvalue {low:.3e})"
                )
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def dim(self) -> int:
        return self.values.shape[0]

    def submatrix(self, indices: Sequence[int]) -> "CorrelationMatrix":
        idx = np.asarray(indices, dtype=int)
        return CorrelationMatrix(self.values[np.ix_(idx, idx)])

    def cholesky_lower(self) -> np.ndarray:
        """Lower Cholesky factor, jittering the diagonal for marginal PSD failures."""
        eye = np.eye(self.dim)
        for lam in (0.0, 1e-14, 1e-12, 1e-10):
            try:
                return np.linalg.cholesky((1.0 - lam) * self.values + lam * eye)
            except np.linalg.LinAlgError:
                continue
        raise NumericError("correlation matrix failed Cholesky factorization beyond repairable tolerance")


def as_correlation(corr) -> CorrelationMatrix:
    if isinstance(corr, CorrelationMatrix):
        return corr
    return CorrelationMatrix(np.asarray(corr, dtype=float))


def std_normal_cdf(z: float) -> float:
    """P(Z <= z) for standard normal Z; saturates at 0/1 in the far tails."""
    return float(ndtr(z))


def std_normal_quantile(u: float) -> float:
    """Inverse standard normal CDF on (0, 1)."""
    if not 0.0 < u < 1.0:
        raise InputError(f"quantile argument must lie strictly in (0, 1), got {u}")
    return float(ndtri(u))


def _owen_tail(h: float, a: float) -> float:
    # Owen's T with the a=0, a=+-inf and h=0 limits made explicit.
    if a == 0.0 or math.isinf(h):
        return 0.0
    if h == 0.0:
        return math.atan(a) / (2.0 * math.pi)
    if math.isinf(a):
        return math.copysign(0.5 * float(ndtr(-abs(h))), a)
    return float(owens_t(h, a))


def _bvn_cdf(h: float, k: float, rho: float) -> float:
    """P(X <= h, Y <= k) for standard bivariate normal with correlation rho."""
    if math.isnan(h) or math.isnan(k):
        raise InputError("NaN bound in bivariate probability")
    if h == -math.inf or k == -math.inf:
        return 0.0
    if h == math.inf:
        return 1.0 if k == math.inf else float(ndtr(k))
    if k == math.inf:
        return float(ndtr(h))
    if rho == 1.0:
        return float(ndtr(min(h, k)))
    if rho == -1.0:
        return max(0.0, float(ndtr(h)) + float(ndtr(k)) - 1.0)
    if rho == 0.0:
        return float(ndtr(h)) * float(ndtr(k))
    s = math.sqrt((1.0 - rho) * (1.0 + rho))
    if h == 0.0 and k == 0.0:
        return 0.25 + math.asin(rho) / (2.0 * math.pi)
    if h == 0.0:
        return 0.5 * float(ndtr(k)) - _owen_tail(k, -rho / s)
    if k == 0.0:
        return 0.5 * float(ndtr(h)) - _owen_tail(h, -rho / s)
    ah = (k - rho * h) / (h * s)
    ak = (h - rho * k) / (k * s)
    delta = 0.5 if h * k < 0.0 else 0.0
    p = 0.5 * (float(ndtr(h)) + float(ndtr(k))) - _owen_tail(h, ah) - _owen_tail(k, ak) - delta
    return min(1.0, max(0.0, p))


_sobol_lock = threading.Lock()
_sobol_ints: dict[int, np.ndarray] = {}


def _sobol_base(dim: int, n: int) -> np.ndarray:
    """First n unscrambled Sobol' points in ``dim`` dimensions as 32-bit integers.

    The sequence prefix is cached per dimension; n must be a power of two.
    """
    with _sobol_lock:
        cached = _sobol_ints.get(dim)
        if cached is None or cached.shape[0] < n:
            pts = qmc.Sobol(d=dim, scramble=False).random_base2(int(n - 1).bit_length())
            cached = np.floor(pts * _TWO32).astype(np.uint64)
            _sobol_ints[dim] = cached
        return cached[:n]


def _reordered_cholesky(
    corr: np.ndarray, lower: np.ndarray, upper: np.ndarray
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Cholesky factorization interleaved with greedy variable reordering.

    At each step the variable with the smallest conditional probability
    mass (given truncated-normal means for the earlier coordinates) is
    brought forward, which concentrates the integrand's variance in the
    leading coordinates of the QMC recursion.
    """
    k = corr.shape[0]
    c = corr.copy()
    a = np.asarray(lower, dtype=float).copy()
    b = np.asarray(upper, dtype=float).copy()
    L = np.zeros((k, k))
    y = np.zeros(k)
    eps = 1e-24
    for i in range(k):
        best_mass, best_j = np.inf, i
        for j in range(i, k):
            denom = math.sqrt(max(c[j, j] - float(L[j, :i] @ L[j, :i]), eps))
            mu = float(L[j, :i] @ y[:i])
            lo = (a[j] - mu) / denom if np.isfinite(a[j]) else -np.inf
            hi = (b[j] - mu) / denom if np.isfinite(b[j]) else np.inf
            mass = float(ndtr(hi)) - float(ndtr(lo))
            if mass < best_mass:
                best_mass, best_j = mass, j
        j = best_j
        if j != i:
            c[[i, j], :] = c[[j, i], :]
            c[:, [i, j]] = c[:, [j, i]]
            L[[i, j], :i] = L[[j, i], :i]
            a[[i, j]] = a[[j, i]]
            b[[i, j]] = b[[j, i]]
        sii = max(c[i, i] - float(L[i, :i] @ L[i, :i]), eps)
        L[i, i] = math.sqrt(sii)
        if i + 1 < k:
            L[i + 1 :, i] = (c[i + 1 :, i] - L[i + 1 :, :i] @ L[i, :i]) / L[i, i]
        mu = float(L[i, :i] @ y[:i])
        lo = (a[i] - mu) / L[i, i] if np.isfinite(a[i]) else -np.inf
        hi = (b[i] - mu) / L[i, i] if np.isfinite(b[i]) else np.inf
        plo, phi = float(ndtr(lo)), float(ndtr(hi))
        mass = max(phi - plo, 1e-300)
        dlo = math.exp(-0.5 * lo * lo) / _SQRT_TWO_PI if np.isfinite(lo) else 0.0
        dhi = math.exp(-0.5 * hi * hi) / _SQRT_TWO_PI if np.isfinite(hi) else 0.0
        # truncated-normal mean stands in for the integration variable
        y[i] = (dlo - dhi) / mass
    return L, a, b


def _qmc_means(L: np.ndarray, a: np.ndarray, b: np.ndarray, pts: np.ndarray) -> np.ndarray:
    """Mean integrand value per randomization; pts has shape (S, n, k-1)."""
    n_shifts, n, _ = pts.shape
    k = L.shape[0]
    tiny = 1e-15
    flat = pts.reshape(n_shifts * n, k - 1)
    if np.isfinite(a[0]):
        d = np.full(n_shifts * n, float(ndtr(a[0] / L[0, 0])))
    else:
        d = np.zeros(n_shifts * n)
    if np.isfinite(b[0]):
        e = np.full(n_shifts * n, float(ndtr(b[0] / L[0, 0])))
    else:
        e = np.ones(n_shifts * n)
    f = e - d
    y = np.empty((n_shifts * n, k - 1))
    for i in range(1, k):
        z = np.clip(d + flat[:, i - 1] * (e - d), tiny, 1.0 - tiny)
        y[:, i - 1] = ndtri(z)
        mu = y[:, :i] @ L[i, :i]
        d = ndtr((a[i] - mu) / L[i, i]) if np.isfinite(a[i]) else 0.0
        e = ndtr((b[i] - mu) / L[i, i]) if np.isfinite(b[i]) else 1.0
        f = f * (e - d)
    return f.reshape(n_shifts, n).mean(axis=1)


def _qmc_rectangle(
    corr: np.ndarray,
    lower: np.ndarray,
    upper: np.ndarray,
    seed: int,
    target_error: float,
    max_points: int,
) -> ProbEstimate:
    L, a, b = _reordered_cholesky(corr, lower, upper)
    k = corr.shape[0]
    rng = np.random.default_rng(int(seed) & _U64)
    n = min(_START_POINTS, max_points)
    while True:
        shifts = rng.integers(0, 1 << 32, size=(_SHIFTS, k - 1), dtype=np.uint64)
        base = _sobol_base(k - 1, n)
        pts = ((base[None, :, :] ^ shifts[:, None, :]).astype(float) + 0.5) / _TWO32
        means = _qmc_means(L, a, b, pts)
        value = float(means.mean())
        # floor acknowledges double-precision rounding even when the
        # randomizations happen to agree exactly
        err = max(float(3.0 * means.std(ddof=1) / math.sqrt(_SHIFTS)), 1e-15)
        if err <= target_error or n >= max_points:
            return ProbEstimate(min(1.0, max(0.0, value)), err)
        n = min(n * 4, max_points)


def _check_accuracy_args(target_error: float, max_points: int) -> int:
    if not target_error > 0.0:
        raise InputError(f"target_error must be positive, got {target_error}")
    max_points = int(max_points)
    if max_points < 2:
        raise InputError("max_points must allow at least 2 points")
    # round down to a power of two so cached Sobol' prefixes line up
    return 1 << (max_points.bit_length() - 1)


def mvn_rectangle(
    lower,
    upper,
    corr,
    seed: int = 0,
    target_error: float = DEFAULT_TARGET_ERROR,
    max_points: int = DEFAULT_MAX_POINTS,
) -> ProbEstimate:
    """P(lower_j < Z_j <= upper_j for all j) for Z ~ MVN(0, corr).

    Bounds may be -inf/+inf. Exact in dimensions 1-2; QMC above, with
    the reported error targeted at ``target_error`` but honest when the
    sample cap bites first.
    """
    cm = as_correlation(corr)
    lo = np.asarray(lower, dtype=float)
    hi = np.asarray(upper, dtype=float)
    if lo.shape != (cm.dim,) or hi.shape != (cm.dim,):
        raise InputError("bound vectors must match the correlation dimension")
    if np.any(np.isnan(lo)) or np.any(np.isnan(hi)):
        raise InputError("bounds must not be NaN")
    if not np.all(lo < hi):
        raise InputError("lower bounds must be strictly below upper bounds")
    max_points = _check_accuracy_args(target_error, max_points)
    vacuous = (lo == -np.inf) & (hi == np.inf)
    if vacuous.any():
        keep = np.flatnonzero(~vacuous)
        if keep.size == 0:
            return ProbEstimate(1.0, 0.0)
        return mvn_rectangle(lo[keep], hi[keep], cm.submatrix(keep), seed, target_error, max_points)
    k = cm.dim
    if k == 1:
        v = float(ndtr(hi[0])) - float(ndtr(lo[0]))
        return ProbEstimate(min(1.0, max(0.0, v)), 1e-15)
    if k == 2:
        r = float(cm.values[0, 1])
        v = (
            _bvn_cdf(hi[0], hi[1], r)
            - _bvn_cdf(lo[0], hi[1], r)
            - _bvn_cdf(hi[0], lo[1], r)
            + _bvn_cdf(lo[0], lo[1], r)
        )
        return ProbEstimate(min(1.0, max(0.0, v)), _EXACT_2D_ERROR)
    return _qmc_rectangle(cm.values, lo, hi, seed, target_error, max_points)


def union_exceedance(
    thresholds,
    corr,
    seed: int = 0,
    target_error: float = DEFAULT_TARGET_ERROR,
    max_points: int = DEFAULT_MAX_POINTS,
) -> ProbEstimate:
    """P(P_j <= u_j for some j) under the global null.

    P_j = 1 - Phi(Z_j) with Z ~ MVN(0, corr), so each P_j is uniform and
    the union is 1 minus a rectangle probability. Zero thresholds are
    dropped (zero-probability events); a threshold of 1 makes the union
    certain and returns exactly 1.
    """
    cm = as_correlation(corr)
    u = np.asarray(thresholds, dtype=float)
    if u.shape != (cm.dim,):
        raise InputError("threshold vector must match the correlation dimension")
    if np.any(np.isnan(u)) or np.any(u < 0.0) or np.any(u > 1.0):
        raise InputError("thresholds must lie in [0, 1]")
    max_points = _check_accuracy_args(target_error, max_points)
    if np.any(u == 1.0):
        return ProbEstimate(1.0, 0.0)
    keep = np.flatnonzero(u > 0.0)
    if keep.size == 0:
        return ProbEstimate(0.0, 0.0)
    u = u[keep]
    if keep.size == 1:
        return ProbEstimate(float(u[0]), 0.0)
    sub = cm.submatrix(keep)
    if keep.size == 2:
        r = float(sub.values[0, 1])
        both_exceed = _bvn_cdf(float(ndtri(u[0])), float(ndtri(u[1])), r)
        v = float(u[0]) + float(u[1]) - both_exceed
        return ProbEstimate(min(1.0, max(0.0, v)), _EXACT_2D_ERROR)
    upper = -ndtri(u)
    est = _qmc_rectangle(
        sub.values, np.full(keep.size, -np.inf), upper, seed, target_error, max_points
    )
    return ProbEstimate(min(1.0, max(0.0, 1.0 - est.value)), est.error)


def solve_monotone(
    f: Callable[[float], float],
    target: float,
    bracket: Sequence[float],
    tol: float = DEFAULT_ROOT_TOL,
) -> float:
    """Smallest c in [lo, hi] with f(c) = target, for nondecreasing f.

    Plain bisection: a midpoint reaching the target always tightens the
    upper end, so the result converges to the smallest crossing even
    across flat stretches, and evaluation noise cannot collapse the
    bracket on the wrong side of a monotone trend.
    """
    lo, hi = float(bracket[0]), float(bracket[1])
    if not (math.isfinite(lo) and math.isfinite(hi) and lo < hi):
        raise InputError("bracket must be a finite interval with lo < hi")
    if not tol > 0.0:
        raise InputError(f"tol must be positive, got {tol}")
    if f(lo) > target:
        raise BracketError(f"f(lo) is above the target {target}; bracket does not straddle")
    if f(hi) < target:
        raise BracketError(f"f(hi) is below the target {target}; bracket does not straddle")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if f(mid) >= target:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)
