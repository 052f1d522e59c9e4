"""Tests of a single intersection hypothesis.

Given the subset J, its weight vector, the observed p-values and a
block-structured correlation model, these routines produce p-values,
critical scalings and local significance levels under four methods:

- weighted Bonferroni (no correlation knowledge needed),
- fully parametric / proportional ("xie") for a completely known joint
  distribution,
- partitioned methods for block-diagonal knowledge: either one common
  scaling solved across blocks, or per-block scalings whose minimum
  block p-value is the intersection p-value.

Weight and p-value vectors are aligned with the ascending member order
of J. Zero-weight members get rejection threshold 0: they never enter a
union, a minimum, or a rejection decision.
"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np

from .exceptions import InputError
from .mvnorm import (
    DEFAULT_MAX_POINTS,
    DEFAULT_ROOT_TOL,
    DEFAULT_TARGET_ERROR,
    CorrelationMatrix,
    ProbEstimate,
    as_correlation,
    solve_monotone,
    union_exceedance,
)
from .subsets import check_m, mask_of, members

_U64 = (1 << 64) - 1
_MIX = 0x9E3779B97F4A7C15

METHODS = ("bonferroni", "parametric-common", "parametric-subsets", "xie")


def derived_seed(seed: int, mask: int, salt: int = 0) -> int:
    """Per-subset RNG seed: base seed combined with the subset's bitmask."""
    return (int(seed) ^ int(mask) ^ (salt * _MIX)) & _U64


@dataclass(frozen=True, eq=False)
class CorrelationModel:
    """Partition of the hypotheses into blocks with known within-block correlation.

    Correlations across blocks are treated as unknown. A single block
    covering everything is the fully known case; all-singleton blocks
    mean no correlation knowledge at all. Blocks are canonicalized to
    ascending member order and sorted by first member.
    """

    m: int
    blocks: tuple[tuple[int, ...], ...]
    matrices: tuple[CorrelationMatrix | None, ...]

    def __post_init__(self) -> None:
        m = check_m(self.m)
        if len(self.blocks) != len(self.matrices):
            raise InputError("need exactly one correlation entry per block")
        blocks = []
        for raw in self.blocks:
            mem = tuple(members(mask_of(raw, m)))
            blocks.append(mem)
        order = sorted(range(len(blocks)), key=lambda h: blocks[h][0])
        blocks = [blocks[h] for h in order]
        matrices = [self.matrices[h] for h in order]
        seen: set[int] = set()
        for mem in blocks:
            if seen & set(mem):
                raise InputError("correlation blocks must be disjoint")
            seen |= set(mem)
        if seen != set(range(m)):
            raise InputError("correlation blocks must cover every hypothesis")
        fixed: list[CorrelationMatrix | None] = []
        for mem, mat in zip(blocks, matrices):
            if len(mem) == 1:
                if mat is not None and as_correlation(mat).dim != 1:
                    raise InputError("singleton blocks take no correlation matrix")
                fixed.append(None)
            else:
                if mat is None:
                    raise InputError(
                        f"block {tuple(j + 1 for j in mem)} needs a correlation matrix"
                    )
                cm = as_correlation(mat)
                if cm.dim != len(mem):
                    raise InputError(
                        f"correlation matrix for block {tuple(j + 1 for j in mem)} "
                        f"has dimension {cm.dim}, expected {len(mem)}"
                    )
                fixed.append(cm)
        block_of = np.empty(m, dtype=int)
        for h, mem in enumerate(blocks):
            for j in mem:
                block_of[j] = h
        block_of.setflags(write=False)
        object.__setattr__(self, "m", m)
        object.__setattr__(self, "blocks", tuple(blocks))
        object.__setattr__(self, "matrices", tuple(fixed))
        object.__setattr__(self, "_block_of", block_of)

    @classmethod
    def full(cls, corr) -> "CorrelationModel":
        """Single block: the joint distribution is completely known."""
        cm = as_correlation(corr)
        return cls(cm.dim, (tuple(range(cm.dim)),), (cm,) if cm.dim > 1 else (None,))

    @classmethod
    def independent_blocks(cls, m: int) -> "CorrelationModel":
        """All-singleton partition: no correlation knowledge."""
        return cls(m, tuple((j,) for j in range(m)), (None,) * m)

    def block_of(self, j: int) -> int:
        if not 0 <= int(j) < self.m:
            raise InputError(f"hypothesis index {j + 1} outside 1..{self.m}")
        return int(self._block_of[j])

    def split_by_block(self, subset: Sequence[int]) -> list[tuple[int, tuple[int, ...]]]:
        """(block index, members of the subset in that block), ascending."""
        groups: dict[int, list[int]] = {}
        for j in subset:
            groups.setdefault(self.block_of(j), []).append(j)
        return [(h, tuple(sorted(mem))) for h, mem in sorted(groups.items())]

    def corr_for(self, subset: Sequence[int]) -> CorrelationMatrix:
        """Correlation restricted to a subset that lies inside one block."""
        mem = tuple(sorted(subset))
        h = self.block_of(mem[0])
        if any(self.block_of(j) != h for j in mem[1:]):
            raise InputError(
                f"indices {tuple(j + 1 for j in mem)} span several correlation blocks"
            )
        if len(mem) == 1:
            return CorrelationMatrix(np.eye(1))
        block = self.blocks[h]
        pos = [block.index(j) for j in mem]
        return self.matrices[h].submatrix(pos)

    def covers(self, subset: Sequence[int]) -> bool:
        """True when one block contains the whole subset."""
        mem = tuple(subset)
        h = self.block_of(mem[0])
        return all(self.block_of(j) == h for j in mem)


@dataclass(frozen=True, eq=False)
class IntersectionResult:
    """Outcome of testing one intersection hypothesis.

    ``scale`` is the single critical scaling where the method has one
    (1.0 for Bonferroni); ``block_scales`` carries per-block scalings
    for the per-subset method. ``p_value`` is None for the common-scale
    method, which yields only a decision.
    """

    members: tuple[int, ...]
    method: str
    p_value: float | None
    scale: float | None
    block_scales: tuple[tuple[tuple[int, ...], float], ...] | None
    local_levels: np.ndarray
    reject: bool | None


def as_model(corr, m: int | None = None) -> CorrelationModel:
    if isinstance(corr, CorrelationModel):
        return corr
    model = CorrelationModel.full(corr)
    if m is not None and model.m != m:
        raise InputError("correlation dimension does not match the hypothesis count")
    return model


def _check_subset_args(subset, weights, pvalues=None):
    mem = tuple(int(j) for j in subset)
    if len(mem) == 0:
        raise InputError("intersection subset must be nonempty")
    if sorted(set(mem)) != list(mem):
        raise InputError("subset members must be strictly ascending and unique")
    w = np.asarray(weights, dtype=float)
    if w.shape != (len(mem),):
        raise InputError("weights must align with the subset members")
    if not np.all(np.isfinite(w)) or np.any(w < 0.0):
        raise InputError("weights must be finite and nonnegative")
    if pvalues is None:
        return mem, w
    p = np.asarray(pvalues, dtype=float)
    if p.shape != (len(mem),):
        raise InputError("p-values must align with the subset members")
    if np.any(np.isnan(p)) or np.any(p < 0.0) or np.any(p > 1.0):
        raise InputError("p-values must lie in [0, 1]")
    return mem, w, p


def _weight_total(w: np.ndarray) -> float:
    total = float(w.sum())
    if not total > 0.0:
        raise InputError("all weights in the subset are zero")
    if total > 1.0 + 1e-12:
        raise InputError(f"weights sum to {total}, exceeding 1")
    return total


def bonferroni_pvalue(subset, weights, pvalues) -> float:
    """Weighted Bonferroni p-value: min over positive-weight j of p_j / w_j, capped at 1."""
    mem, w, p = _check_subset_args(subset, weights, pvalues)
    _weight_total(w)
    act = w > 0.0
    return float(min(1.0, np.min(p[act] / w[act])))


def parametric_pvalue(
    subset,
    weights,
    pvalues,
    corr,
    seed: int = 0,
    target_error: float = DEFAULT_TARGET_ERROR,
    max_points: int = DEFAULT_MAX_POINTS,
) -> float:
    """Exact-distribution p-value when the correlation over J is fully known.

    The smallest observed weighted p-value q sets thresholds w_j * q;
    the probability that any P_j falls below its threshold, divided by
    the total weight, is the p-value (capped at 1).
    """
    mem, w, p = _check_subset_args(subset, weights, pvalues)
    total = _weight_total(w)
    model = as_model(corr)
    if not model.covers(mem):
        raise InputError(
            "parametric p-value needs the correlation fully known over the subset"
        )
    act = np.flatnonzero(w > 0.0)
    q = float(np.min(p[act] / w[act]))
    u = np.minimum(1.0, w[act] * q)
    est = union_exceedance(
        u,
        model.corr_for([mem[i] for i in act]),
        derived_seed(seed, mask_of(mem, model.m)),
        target_error,
        max_points,
    )
    return float(min(1.0, est.value / total))


def _scale_bracket(w_active: np.ndarray, alpha: float) -> float:
    # at c = 1/(alpha * max weight) the largest threshold saturates at 1,
    # forcing the defining probability to its ceiling
    return 1.0 / (alpha * float(w_active.max()))


def _solve_union_scale(
    union_at,
    target: float,
    w_active: np.ndarray,
    alpha: float,
    tol: float,
) -> float:
    """Solve union_at(c) = target for c >= 1, tolerating estimator noise at c=1.

    The defining probability at c=1 never exceeds the target (Bonferroni
    inequality), so an estimate already at or above it means c=1 within
    noise.
    """
    if union_at(1.0) >= target:
        return 1.0
    # expand geometrically toward the saturation point, where the largest
    # threshold hits 1 and the probability is forced past the target
    cap = _scale_bracket(w_active, alpha)
    lo, hi = 1.0, min(2.0, cap)
    while hi < cap and union_at(hi) < target:
        lo, hi = hi, min(2.0 * hi, cap)
    return solve_monotone(union_at, target, (lo, hi), tol)


def parametric_c(
    subset,
    weights,
    alpha: float,
    corr,
    seed: int = 0,
    target_error: float = DEFAULT_TARGET_ERROR,
    root_tol: float = DEFAULT_ROOT_TOL,
    max_points: int = DEFAULT_MAX_POINTS,
) -> float:
    """Critical scaling c >= 1 making the union of level-c*w_j*alpha events exact.

    With at most one positively weighted member the defining equation is
    linear and c = 1 exactly.
    """
    mem, w = _check_subset_args(subset, weights)
    total = _weight_total(w)
    _check_alpha(alpha)
    model = as_model(corr)
    if not model.covers(mem):
        raise InputError("critical scaling needs the correlation fully known over the subset")
    act = np.flatnonzero(w > 0.0)
    if act.size <= 1:
        return 1.0
    w_act = w[act]
    sub_corr = model.corr_for([mem[i] for i in act])
    s = derived_seed(seed, mask_of(mem, model.m))

    def union_at(c: float) -> float:
        u = np.minimum(1.0, c * alpha * w_act)
        return union_exceedance(u, sub_corr, s, target_error, max_points).value

    return _solve_union_scale(union_at, alpha * total, w_act, alpha, root_tol)


def _check_alpha(alpha: float) -> float:
    if not 0.0 < alpha < 1.0:
        raise InputError(f"alpha must lie strictly in (0, 1), got {alpha}")
    return float(alpha)


def xie_pvalue(
    subset,
    initial_weights,
    pvalues,
    corr,
    seed: int = 0,
    target_error: float = DEFAULT_TARGET_ERROR,
    max_points: int = DEFAULT_MAX_POINTS,
) -> float:
    """Proportional-weights p-value: the parametric p-value after rescaling
    the positive initial weights to sum to 1 over the subset.

    The rescaling leaves every threshold w_j * q unchanged and drops the
    1/total factor, which is the proportional method's defining
    simplification.
    """
    mem, w, p = _check_subset_args(subset, initial_weights, pvalues)
    if np.any(w <= 0.0):
        raise InputError("proportional method needs strictly positive initial weights")
    return parametric_pvalue(mem, w / w.sum(), p, corr, seed, target_error, max_points)


@dataclass(frozen=True)
class CommonScaleResult:
    """Common-scale test outcome: the scaling, the decision, and the levels."""

    scale: float
    reject: bool
    local_levels: np.ndarray


def _block_union_fn(
    model: CorrelationModel,
    mask: int,
    groups: list[tuple[int, tuple[int, ...], np.ndarray]],
    alpha: float,
    seed: int,
    target_error: float,
    max_points: int,
):
    """Sum of per-block union probabilities as a function of the scaling c.

    groups holds (block index, active members, their weights). Blocks
    with one active member contribute a linear term; the QMC error
    budget is split across the blocks that actually need sampling.
    """
    sampled = sum(1 for _, mem, _ in groups if len(mem) >= 3)
    per_block_error = target_error / max(sampled, 1)

    def total_union(c: float) -> float:
        acc = 0.0
        for h, mem, w_act in groups:
            u = np.minimum(1.0, c * alpha * w_act)
            if len(mem) == 1:
                acc += float(u[0])
                continue
            est = union_exceedance(
                u,
                model.corr_for(mem),
                derived_seed(seed, mask, salt=h + 1),
                per_block_error if len(mem) >= 3 else target_error,
                max_points,
            )
            acc += est.value
        return acc

    return total_union


def partitioned_common_scale(
    subset,
    weights,
    alpha: float,
    corr,
    seed: int = 0,
    target_error: float = DEFAULT_TARGET_ERROR,
    root_tol: float = DEFAULT_ROOT_TOL,
    max_points: int = DEFAULT_MAX_POINTS,
) -> float:
    """Common scaling c across blocks: the sum of per-block union
    probabilities at thresholds c*w_j*alpha is pinned to alpha times the
    total weight. When every block holds at most one active member the
    equation is linear and c = 1 exactly.
    """
    mem, w = _check_subset_args(subset, weights)
    total = _weight_total(w)
    _check_alpha(alpha)
    model = as_model(corr)
    mask = mask_of(mem, model.m)
    pos = {j: i for i, j in enumerate(mem)}
    groups = []
    for h, block_mem in model.split_by_block(mem):
        active = tuple(j for j in block_mem if w[pos[j]] > 0.0)
        if active:
            groups.append((h, active, np.array([w[pos[j]] for j in active])))
    if all(len(mem_h) == 1 for _, mem_h, _ in groups):
        return 1.0
    union_at = _block_union_fn(model, mask, groups, alpha, seed, target_error, max_points)
    w_active = np.concatenate([g[2] for g in groups])
    return _solve_union_scale(union_at, alpha * total, w_active, alpha, root_tol)


def partitioned_pvalue_common(
    subset,
    weights,
    pvalues,
    corr,
    alpha: float,
    seed: int = 0,
    target_error: float = DEFAULT_TARGET_ERROR,
    root_tol: float = DEFAULT_ROOT_TOL,
    max_points: int = DEFAULT_MAX_POINTS,
) -> CommonScaleResult:
    """Common-scale test: solve for the scaling, then compare each p_j
    against its local level c*w_j*alpha.

    Yields a scaling and a rejection decision, not a p-value.
    """
    mem, w, p = _check_subset_args(subset, weights, pvalues)
    c = partitioned_common_scale(
        mem, w, alpha, corr, seed, target_error, root_tol, max_points
    )
    levels = c * alpha * w
    reject = bool(np.any((w > 0.0) & (p <= levels)))
    return CommonScaleResult(scale=c, reject=reject, local_levels=levels)


def partitioned_pvalue_subsets(
    subset,
    weights,
    pvalues,
    corr,
    seed: int = 0,
    target_error: float = DEFAULT_TARGET_ERROR,
    max_points: int = DEFAULT_MAX_POINTS,
) -> float:
    """Per-block p-value minimum: each block is tested parametrically at
    its own share of the weight and the smallest block p-value is the
    intersection p-value. No root-finding is involved.
    """
    mem, w, p = _check_subset_args(subset, weights, pvalues)
    _weight_total(w)
    model = as_model(corr)
    mask = mask_of(mem, model.m)
    pos = {j: i for i, j in enumerate(mem)}
    best = None
    for h, block_mem in model.split_by_block(mem):
        idx = [pos[j] for j in block_mem]
        w_h = w[idx]
        if not np.any(w_h > 0.0):
            continue
        act = np.flatnonzero(w_h > 0.0)
        total_h = float(w_h.sum())
        q = float(np.min(p[idx][act] / w_h[act]))
        u = np.minimum(1.0, w_h[act] * q)
        est = union_exceedance(
            u,
            model.corr_for([block_mem[i] for i in act]),
            derived_seed(seed, mask, salt=h + 1),
            target_error,
            max_points,
        )
        ph = min(1.0, est.value / total_h)
        best = ph if best is None else min(best, ph)
    if best is None:
        raise InputError("all weights in the subset are zero")
    return float(best)


def partitioned_subset_scales(
    subset,
    weights,
    alpha: float,
    corr,
    seed: int = 0,
    target_error: float = DEFAULT_TARGET_ERROR,
    root_tol: float = DEFAULT_ROOT_TOL,
    max_points: int = DEFAULT_MAX_POINTS,
) -> tuple[tuple[tuple[int, ...], float], ...]:
    """Per-block critical scalings matching partitioned_pvalue_subsets.

    Each block solves its own exactness equation at its share of the
    weight; blocks with at most one active member scale by exactly 1.
    Returned as ((block members, scale), ...) over blocks intersecting
    the subset.
    """
    mem, w = _check_subset_args(subset, weights)
    _weight_total(w)
    _check_alpha(alpha)
    model = as_model(corr)
    mask = mask_of(mem, model.m)
    pos = {j: i for i, j in enumerate(mem)}
    out = []
    for h, block_mem in model.split_by_block(mem):
        w_h = np.array([w[pos[j]] for j in block_mem])
        act = np.flatnonzero(w_h > 0.0)
        if act.size <= 1:
            out.append((block_mem, 1.0))
            continue
        w_act = w_h[act]
        sub_corr = model.corr_for([block_mem[i] for i in act])
        s = derived_seed(seed, mask, salt=h + 1)

        def union_at(c: float, w_act=w_act, sub_corr=sub_corr, s=s) -> float:
            u = np.minimum(1.0, c * alpha * w_act)
            return union_exceedance(u, sub_corr, s, target_error, max_points).value

        c = _solve_union_scale(union_at, alpha * float(w_h.sum()), w_act, alpha, root_tol)
        out.append((block_mem, c))
    return tuple(out)
