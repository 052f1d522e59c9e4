"""Closed testing: every nonempty intersection is tested, and an
elementary hypothesis is rejected only when all intersections containing
it are.

The exposed pieces:

- TestProblem bundles scheme, correlation model, p-values, alpha, method.
- run_closure produces per-intersection results plus adjusted p-values
  (where the method defines them) and final rejections.
- decision_thresholds precomputes, per intersection and hypothesis, the
  p-value cutoff that rejects the intersection; these depend on the
  scheme and alpha but not on observed p-values, which is what makes
  error-rate simulation affordable.
- check_consonance sweeps all subset pairs for local-level drops, the
  condition under which closure collapses to a sequentially rejective
  shortcut.
- xie_shortcut and weighted_dunnett_single_step are two such shortcuts.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import InputError
from .intersection import (
    METHODS,
    CorrelationModel,
    IntersectionResult,
    as_model,
    bonferroni_pvalue,
    derived_seed,
    parametric_c,
    partitioned_common_scale,
    partitioned_pvalue_common,
    partitioned_pvalue_subsets,
    partitioned_subset_scales,
    xie_pvalue,
)
from .mvnorm import (
    DEFAULT_MAX_POINTS,
    DEFAULT_ROOT_TOL,
    DEFAULT_TARGET_ERROR,
    union_exceedance,
)
from .subsets import iter_masks, iter_submasks, mask_of, members
from .weighting import WeightingScheme, validate

# the consonance sweep visits each subset pair; 3^m pairs get slow fast
MAX_CONSONANCE_M = 12

_PROPORTIONAL_TOL = 1e-9


def _check_pvalues(pvalues, m: int) -> np.ndarray:
    p = np.asarray(pvalues, dtype=float)
    if p.shape != (m,):
        raise InputError(f"need {m} p-values, got shape {p.shape}")
    if np.any(np.isnan(p)) or np.any(p < 0.0) or np.any(p > 1.0):
        raise InputError("p-values must lie in [0, 1]")
    p = p.copy()
    p.setflags(write=False)
    return p


def _check_alpha(alpha: float) -> float:
    if not 0.0 < alpha < 1.0:
        raise InputError(f"alpha must lie strictly in (0, 1), got {alpha}")
    return float(alpha)


def _check_method(method: str) -> str:
    if method not in METHODS:
        raise InputError(f"unknown method {method!r}; choose one of {METHODS}")
    return method


def _check_xie_scheme(scheme: WeightingScheme, model: CorrelationModel) -> None:
    full = (1 << scheme.m) - 1
    if np.any(scheme.weights_for(full) <= 0.0):
        raise InputError(
            "the proportional method needs strictly positive full-set weights"
        )
    if not scheme.is_proportional(_PROPORTIONAL_TOL):
        raise InputError(
            "the proportional method needs subset weights proportional to the "
            "full-set weights; rescale_proportional produces such a scheme"
        )
    if not model.covers(range(scheme.m)):
        raise InputError(
            "the proportional method needs the correlation fully known; "
            "the model must consist of a single block"
        )


@dataclass(frozen=True, eq=False)
class TestProblem:
    """One closed-testing run: weights, correlation knowledge, data, level, method.

    ``seed`` feeds every per-subset integration stream; two runs of the
    same problem are bit-identical.
    """

    # not a pytest class, despite the name
    __test__ = False

    scheme: WeightingScheme
    model: CorrelationModel
    pvalues: np.ndarray
    alpha: float
    method: str
    seed: int = 0

    def __post_init__(self) -> None:
        if not isinstance(self.scheme, WeightingScheme):
            raise InputError("scheme must be a WeightingScheme")
        flags = validate(self.scheme)
        if not flags["valid"]:
            raise InputError(
                "scheme is not valid: every subset needs nonnegative weights "
                "with a positive sum of at most 1"
            )
        model = as_model(self.model)
        if model.m != self.scheme.m:
            raise InputError(
                f"correlation model covers {model.m} hypotheses, "
                f"scheme covers {self.scheme.m}"
            )
        object.__setattr__(self, "model", model)
        object.__setattr__(self, "pvalues", _check_pvalues(self.pvalues, self.scheme.m))
        object.__setattr__(self, "alpha", _check_alpha(self.alpha))
        object.__setattr__(self, "method", _check_method(self.method))
        if not isinstance(self.seed, (int, np.integer)):
            raise InputError("seed must be an integer")
        object.__setattr__(self, "seed", int(self.seed))
        if self.method == "xie":
            _check_xie_scheme(self.scheme, model)

    @property
    def m(self) -> int:
        return self.scheme.m


@dataclass(frozen=True, eq=False)
class ClosureReport:
    """Full closure outcome.

    ``adjusted`` holds per-hypothesis adjusted p-values, or None for the
    common-scale method, which produces decisions without p-values.
    ``intersections`` is ordered by subset bitmask.
    """

    m: int
    alpha: float
    method: str
    adjusted: np.ndarray | None
    rejected: np.ndarray
    intersections: tuple[IntersectionResult, ...]

    def intersection(self, subset) -> IntersectionResult:
        mask = mask_of(subset, self.m)
        return self.intersections[mask - 1]


def _member_levels(mem, w, alpha, scales) -> np.ndarray:
    """Per-member local levels c_block * w_j * alpha from per-block scales."""
    scale_of = {}
    for block_mem, c in scales:
        for j in block_mem:
            scale_of[j] = c
    return np.array([scale_of[j] * alpha * wj for j, wj in zip(mem, w)])


def run_closure(
    problem: TestProblem,
    target_error: float = DEFAULT_TARGET_ERROR,
    root_tol: float = DEFAULT_ROOT_TOL,
    max_points: int = DEFAULT_MAX_POINTS,
    compute_scales: bool = True,
) -> ClosureReport:
    """Test every intersection and combine the outcomes.

    With ``compute_scales`` off, methods whose decisions do not need a
    critical scaling (everything except the common-scale method) skip
    the root-finds and leave scale/levels unset on their intersections.
    """
    m = problem.m
    p = problem.pvalues
    alpha = problem.alpha
    scheme = problem.scheme
    model = problem.model
    method = problem.method
    seed = problem.seed
    results: list[IntersectionResult] = []
    for mask in iter_masks(m):
        mem = members(mask)
        w = scheme.weights_for(mask)
        pm = p[list(mem)]
        if method == "bonferroni":
            pv = bonferroni_pvalue(mem, w, pm)
            results.append(
                IntersectionResult(
                    members=mem,
                    method=method,
                    p_value=pv,
                    scale=1.0,
                    block_scales=None,
                    local_levels=alpha * w,
                    reject=pv <= alpha,
                )
            )
        elif method == "parametric-common":
            out = partitioned_pvalue_common(
                mem, w, pm, model, alpha, seed, target_error, root_tol, max_points
            )
            results.append(
                IntersectionResult(
                    members=mem,
                    method=method,
                    p_value=None,
                    scale=out.scale,
                    block_scales=None,
                    local_levels=out.local_levels,
                    reject=out.reject,
                )
            )
        elif method == "parametric-subsets":
            pv = partitioned_pvalue_subsets(
                mem, w, pm, model, seed, target_error, max_points
            )
            scales = levels = None
            if compute_scales:
                scales = partitioned_subset_scales(
                    mem, w, alpha, model, seed, target_error, root_tol, max_points
                )
                levels = _member_levels(mem, w, alpha, scales)
            results.append(
                IntersectionResult(
                    members=mem,
                    method=method,
                    p_value=pv,
                    scale=None,
                    block_scales=scales,
                    local_levels=levels,
                    reject=pv <= alpha,
                )
            )
        else:  # xie
            pv = xie_pvalue(mem, w, pm, model, seed, target_error, max_points)
            scale = levels = None
            if compute_scales:
                scale = parametric_c(
                    mem, w, alpha, model, seed, target_error, root_tol, max_points
                )
                levels = scale * alpha * w
            results.append(
                IntersectionResult(
                    members=mem,
                    method=method,
                    p_value=pv,
                    scale=scale,
                    block_scales=None,
                    local_levels=levels,
                    reject=pv <= alpha,
                )
            )
    if method == "parametric-common":
        adjusted = None
        rejected = np.ones(m, dtype=bool)
        for mask in iter_masks(m):
            if not results[mask - 1].reject:
                for j in members(mask):
                    rejected[j] = False
    else:
        adjusted = np.zeros(m)
        for mask in iter_masks(m):
            pv = results[mask - 1].p_value
            for j in members(mask):
                if pv > adjusted[j]:
                    adjusted[j] = pv
        rejected = adjusted <= alpha
        adjusted.setflags(write=False)
    rejected.setflags(write=False)
    return ClosureReport(
        m=m,
        alpha=alpha,
        method=method,
        adjusted=adjusted,
        rejected=rejected,
        intersections=tuple(results),
    )


def decision_thresholds(
    scheme: WeightingScheme,
    corr,
    alpha: float,
    method: str,
    seed: int = 0,
    target_error: float = DEFAULT_TARGET_ERROR,
    root_tol: float = DEFAULT_ROOT_TOL,
    max_points: int = DEFAULT_MAX_POINTS,
) -> np.ndarray:
    """Rejection cutoffs t[mask-1, j]: intersection `mask` is rejected
    exactly when some member j has p_j <= t[mask-1, j].

    Non-members carry the sentinel -1.0; zero-weight members carry 0.0.
    The cutoffs do not depend on observed p-values, so one pass serves
    any number of simulated replications.
    """
    _check_alpha(alpha)
    _check_method(method)
    model = as_model(corr)
    m = scheme.m
    if model.m != m:
        raise InputError("correlation model and scheme disagree on the hypothesis count")
    if method == "xie":
        _check_xie_scheme(scheme, model)
    t = np.full(((1 << m) - 1, m), -1.0)
    for mask in iter_masks(m):
        mem = members(mask)
        w = scheme.weights_for(mask)
        if method == "bonferroni":
            levels = alpha * w
        elif method == "parametric-common":
            c = partitioned_common_scale(
                mem, w, alpha, model, seed, target_error, root_tol, max_points
            )
            levels = c * alpha * w
        elif method == "parametric-subsets":
            scales = partitioned_subset_scales(
                mem, w, alpha, model, seed, target_error, root_tol, max_points
            )
            levels = _member_levels(mem, w, alpha, scales)
        else:  # xie
            c = parametric_c(
                mem, w, alpha, model, seed, target_error, root_tol, max_points
            )
            levels = c * alpha * w
        t[mask - 1, list(mem)] = levels
    return t


@dataclass(frozen=True)
class ConsonanceViolation:
    """A local level that drops when the intersection shrinks.

    ``excess`` is the drop measured on the scale*weight product scale
    (levels divided by alpha).
    """

    superset: tuple[int, ...]
    subset: tuple[int, ...]
    hypothesis: int
    excess: float


@dataclass(frozen=True, eq=False)
class ConsonanceReport:
    consonant: bool
    violations: tuple[ConsonanceViolation, ...]


def check_consonance(
    scheme: WeightingScheme,
    corr,
    alpha: float,
    seed: int = 0,
    target_error: float = DEFAULT_TARGET_ERROR,
    root_tol: float = DEFAULT_ROOT_TOL,
    tolerance: float = 1e-4,
) -> ConsonanceReport:
    """Check whether common-scale local levels only grow as the
    intersection shrinks: c(J) w_j(J) <= c(J') w_j(J') for every j in
    J' inside J.

    When this holds, closure never rejects an intersection without also
    rejecting some elementary hypothesis inside it, and sequentially
    rejective shortcuts reproduce the closed procedure. ``tolerance``
    absorbs root-finding and integration noise on the scale*weight
    products.
    """
    m = scheme.m
    if m > MAX_CONSONANCE_M:
        raise InputError(
            f"consonance sweep is limited to {MAX_CONSONANCE_M} hypotheses, got {m}"
        )
    t = decision_thresholds(
        scheme, corr, alpha, "parametric-common", seed, target_error, root_tol
    )
    # compare on the scale*weight product scale
    t = np.where(t >= 0.0, t / alpha, -1.0)
    violations = []
    for mask in iter_masks(m):
        row = t[mask - 1]
        for sub in iter_submasks(mask):
            if sub == mask:
                continue
            sub_row = t[sub - 1]
            for j in members(sub):
                if row[j] > sub_row[j] + tolerance:
                    violations.append(
                        ConsonanceViolation(
                            superset=members(mask),
                            subset=members(sub),
                            hypothesis=j,
                            excess=float(row[j] - sub_row[j]),
                        )
                    )
    return ConsonanceReport(consonant=not violations, violations=tuple(violations))


def xie_shortcut(
    initial_weights,
    pvalues,
    corr,
    alpha: float,
    seed: int = 0,
    target_error: float = DEFAULT_TARGET_ERROR,
    max_points: int = DEFAULT_MAX_POINTS,
) -> dict:
    """Sequentially rejective proportional-weights procedure.

    At each step the still-active hypotheses are tested as one
    intersection with proportionally rescaled weights; the hypothesis
    with the smallest weighted p-value leaves, carrying the running
    maximum of intersection p-values as its adjusted p-value. All m
    steps run so every hypothesis gets an adjusted p-value; rejection
    stops at the first step whose intersection p-value exceeds alpha.

    Matches full closure under proportional weights because rescaling
    makes the greedy chain's p-values dominate all other intersections.
    """
    model = as_model(corr)
    m = model.m
    w0 = np.asarray(initial_weights, dtype=float)
    if w0.shape != (m,):
        raise InputError(f"need {m} initial weights, got shape {w0.shape}")
    if not np.all(np.isfinite(w0)) or np.any(w0 <= 0.0):
        raise InputError("initial weights must be finite and strictly positive")
    p = _check_pvalues(pvalues, m)
    _check_alpha(alpha)
    active = list(range(m))
    order: list[int] = []
    adjusted = np.empty(m)
    running = 0.0
    for _ in range(m):
        mem = tuple(active)
        pv = xie_pvalue(mem, w0[list(mem)], p[list(mem)], model, seed, target_error, max_points)
        running = max(running, pv)
        ratios = p[list(mem)] / w0[list(mem)]
        star = mem[int(np.argmin(ratios))]  # argmin takes the first, so ties go low
        adjusted[star] = running
        order.append(star)
        active.remove(star)
    adjusted.setflags(write=False)
    # the running maximum is nondecreasing along the order, so the
    # rejected set is a prefix of it
    return {
        "adjusted": adjusted,
        "rejected": adjusted <= alpha,
        "order": tuple(order),
    }


def weighted_dunnett_single_step(
    weights,
    pvalues,
    corr,
    alpha: float,
    seed: int = 0,
    target_error: float = DEFAULT_TARGET_ERROR,
    root_tol: float = DEFAULT_ROOT_TOL,
    max_points: int = DEFAULT_MAX_POINTS,
) -> dict:
    """Single-step test with fully known correlation: one scaling c for
    the complete set, rejection when p_i <= c * w_i * alpha.

    Weights must be strictly positive and sum to 1 (within 1e-9; they
    are renormalized exactly). The adjusted p-value of H_i is the
    probability that any weighted p-value falls below its share of
    p_i / w_i, which is the smallest alpha at which H_i would be
    rejected. Coincides with closure under weights held constant across
    subsets.
    """
    model = as_model(corr)
    m = model.m
    w = np.asarray(weights, dtype=float)
    if w.shape != (m,):
        raise InputError(f"need {m} weights, got shape {w.shape}")
    if not np.all(np.isfinite(w)) or np.any(w <= 0.0):
        raise InputError("weights must be finite and strictly positive")
    if abs(w.sum() - 1.0) > 1e-9:
        raise InputError(f"weights must sum to 1, got {w.sum()}")
    w = w / w.sum()
    p = _check_pvalues(pvalues, m)
    _check_alpha(alpha)
    full = tuple(range(m))
    if not model.covers(full):
        raise InputError("single-step test needs the correlation fully known")
    c = parametric_c(full, w, alpha, model, seed, target_error, root_tol, max_points)
    corr_full = model.corr_for(full)
    s = derived_seed(seed, (1 << m) - 1)
    adjusted = np.empty(m)
    for i in range(m):
        u = np.minimum(1.0, w * (p[i] / w[i]))
        est = union_exceedance(u, corr_full, s, target_error, max_points)
        adjusted[i] = min(1.0, est.value)
    adjusted.setflags(write=False)
    return {
        "adjusted": adjusted,
        "rejected": p <= c * alpha * w,
        "c_I": c,
    }
