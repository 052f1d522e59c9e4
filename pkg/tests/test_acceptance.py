"""Acceptance gate: one test per release criterion, tolerances pinned inline.

Run with -v to get a pass/fail line per criterion. The reference numbers
are frozen from independent oracles: scipy.stats.multivariate_normal.cdf
plus scipy.optimize.brentq (xtol 1e-13) for the solved scalings, and
closed forms where the defining equations collapse (two-dimensional
unions, equal-weight cases).
"""

import math
import time

import numpy as np
import pytest

from closedmtp.closure import (
    TestProblem,
    decision_thresholds,
    run_closure,
    weighted_dunnett_single_step,
    xie_shortcut,
)
from closedmtp.intersection import (
    CorrelationModel,
    bonferroni_pvalue,
    parametric_c,
    parametric_pvalue,
    partitioned_common_scale,
    partitioned_subset_scales,
)
from closedmtp.mvnorm import CorrelationMatrix, union_exceedance
from closedmtp.simulation import SimScenario, simulate
from closedmtp.subsets import iter_masks, mask_of, members
from closedmtp.weighting import GraphSpec, scheme_from_graph, xie_scheme

# independent oracle values, frozen
C_COMMON_234 = 1.0330582735870866
C_BLOCK_23 = 1.0568567973684619
C_DUNNETT_PAIR = 1.0128226207641466

ALPHA = 0.025


def gatekeeping_graph() -> GraphSpec:
    # three weighted primaries each passing to a secondary; secondaries
    # recycle evenly to the other two primaries
    init = [0.4, 0.4, 0.2, 0.0, 0.0, 0.0]
    trans = [
        [0.0, 0.0, 0.0, 1.0, 0.0, 0.0],
        [0.0, 0.0, 0.0, 0.0, 1.0, 0.0],
        [0.0, 0.0, 0.0, 0.0, 0.0, 1.0],
        [0.0, 0.5, 0.5, 0.0, 0.0, 0.0],
        [0.5, 0.0, 0.5, 0.0, 0.0, 0.0],
        [0.5, 0.5, 0.0, 0.0, 0.0, 0.0],
    ]
    return GraphSpec(6, init, trans)


def primaries_block_model() -> CorrelationModel:
    # hypotheses 1-3 equicorrelated at 0.5; 4-6 with unknown dependence
    rho = CorrelationMatrix(np.full((3, 3), 0.5) + 0.5 * np.eye(3))
    return CorrelationModel(6, ((0, 1, 2), (3,), (4,), (5,)), (rho, None, None, None))


def random_correlation(rng, m: int) -> CorrelationMatrix:
    g = rng.standard_normal((m, m + 2))
    s = g @ g.T
    d = np.diag(1.0 / np.sqrt(np.diag(s)))
    return CorrelationMatrix(d @ s @ d)


def positive_weights(rng, m: int) -> np.ndarray:
    w = np.maximum(rng.dirichlet(np.ones(m)), 0.1 / m)
    return w / w.sum()


# the demonstration subset {2,3,4} (0-based (1,2,3)): members 2 and 3 sit
# in the known block, member 4 stands alone
SUBSET_234 = (1, 2, 3)
W_234 = (0.4, 0.2, 0.4)


def test_criterion_1_common_scaling_reproduces_reference_levels():
    start = time.perf_counter()
    c = partitioned_common_scale(
        SUBSET_234, W_234, ALPHA, primaries_block_model(), seed=0, target_error=1e-6
    )
    elapsed = time.perf_counter() - start
    levels = c * ALPHA * np.asarray(W_234)
    assert abs(c - 1.033) <= 2e-3, f"common scaling {c:.6f} not within 0.002 of 1.033"
    assert abs(c - C_COMMON_234) <= 3e-4
    assert np.all(np.abs(levels - (0.0103, 0.0052, 0.0103)) <= 2e-4), levels
    assert elapsed < 5.0, f"took {elapsed:.1f}s"


def test_criterion_2_per_block_scalings_reproduce_reference_levels():
    start = time.perf_counter()
    scales = dict(
        partitioned_subset_scales(
            SUBSET_234, W_234, ALPHA, primaries_block_model(), seed=0, target_error=1e-6
        )
    )
    elapsed = time.perf_counter() - start
    c23 = scales[(1, 2)]
    c4 = scales[(3,)]
    assert abs(c23 - 1.057) <= 2e-3, f"pair scaling {c23:.6f} not within 0.002 of 1.057"
    assert abs(c23 - C_BLOCK_23) <= 3e-4
    assert c4 == 1.0, "a singleton block admits no correlation credit"
    levels = np.array([c23 * ALPHA * 0.4, c23 * ALPHA * 0.2, c4 * ALPHA * 0.4])
    assert np.all(np.abs(levels - (0.0106, 0.0053, 0.01)) <= 2e-4), levels
    assert elapsed < 5.0, f"took {elapsed:.1f}s"


def test_criterion_3_bonferroni_levels_exact():
    scheme = scheme_from_graph(gatekeeping_graph())
    cuts = decision_thresholds(scheme, primaries_block_model(), ALPHA, "bonferroni")
    row = mask_of(SUBSET_234, 6) - 1
    levels = cuts[row, list(SUBSET_234)]
    # alpha*w is mathematically (0.01, 0.005, 0.01); the float products
    # land one ulp away, so "exact" is pinned at 1e-15
    assert levels == pytest.approx((0.01, 0.005, 0.01), abs=1e-15), levels


def test_criterion_4_graph_weights_and_method_ordering():
    scheme = scheme_from_graph(gatekeeping_graph())
    assert np.allclose(scheme.weights_for((0, 1, 2)), (0.4, 0.4, 0.2), atol=1e-12)
    assert np.allclose(scheme.weights_for(SUBSET_234), W_234, atol=1e-12)

    model = primaries_block_model()
    c_common = partitioned_common_scale(SUBSET_234, W_234, ALPHA, model, seed=0)
    per_block = dict(partitioned_subset_scales(SUBSET_234, W_234, ALPHA, model, seed=0))
    c23 = per_block[(1, 2)]
    # inside the known pair the per-block scaling spends the whole
    # correlation credit locally, so it clears the common scaling
    assert c23 * ALPHA * 0.4 > c_common * ALPHA * 0.4
    assert c23 * ALPHA * 0.2 > c_common * ALPHA * 0.2
    # the lone member gains nothing and matches the plain alpha split
    assert per_block[(3,)] * ALPHA * 0.4 == ALPHA * 0.4


def test_criterion_5_classical_cases_recovered():
    eye2 = CorrelationMatrix(np.eye(2))
    result = weighted_dunnett_single_step(
        (0.5, 0.5), (0.01, 0.2), eye2, 0.05, seed=0, target_error=1e-6
    )
    closed_form = (1.0 - math.sqrt(1.0 - 0.05)) / (0.05 / 2.0)
    assert abs(result["c_I"] - closed_form) <= 1e-4
    assert abs(result["c_I"] - C_DUNNETT_PAIR) <= 1e-4

    # equal initial weights make every subset weight the reciprocal of
    # the subset size; bit-exact up to m=4, one ulp of 1/6 at m=6
    for m, exact in ((3, True), (4, True), (6, False)):
        scheme = xie_scheme([1.0 / m] * m)
        for _, mem, w in scheme.entries():
            want = 1.0 / len(mem)
            if exact:
                assert np.all(w == want)
            else:
                assert np.all(np.abs(w - want) <= 1e-15)


def _closure_over_fixed_cutoffs(p: np.ndarray, cutoffs: np.ndarray, m: int) -> list:
    rejected_mask = {}
    for mask in iter_masks(m):
        mem = list(members(mask))
        rejected_mask[mask] = bool(np.any(p[mem] <= cutoffs[mem]))
    return [
        all(rejected_mask[mask] for mask in iter_masks(m) if (mask >> i) & 1)
        for i in range(m)
    ]


def test_criterion_6_shortcuts_match_full_closure():
    start = time.perf_counter()
    alpha = 0.05
    rng = np.random.default_rng(2025)
    # per-size integration targets keep the two-minute budget; exclusion
    # margins below widen accordingly
    for m, xie_err, dun_err in ((2, 1e-5, 1e-5), (3, 1e-5, 1e-4), (4, 3e-5, 1e-4)):
        checked_seq = 0
        checked_ss = 0
        attempts = 0
        while (checked_seq < 200 or checked_ss < 200) and attempts < 320:
            attempts += 1
            corr = random_correlation(rng, m)
            init = positive_weights(rng, m)
            p = rng.uniform(0.0, 0.2, m)
            seed = 10_000 * m + attempts

            # sequential shortcut against the full enumeration, same seed
            # so shared subset estimates are identical floats
            short = xie_shortcut(init, p, corr, alpha, seed=seed, target_error=xie_err)
            problem = TestProblem(
                xie_scheme(init), CorrelationModel.full(corr), p, alpha, "xie", seed=seed
            )
            full = run_closure(problem, target_error=xie_err, compute_scales=False)
            # only subsets of 3+ members are estimated by quadrature; the
            # smallest such weight sum bounds the noise amplification
            if m >= 3:
                smallest = min(
                    float(np.sum(np.sort(init)[: k])) for k in range(3, m + 1)
                )
                margin = 1e-5 + 3.0 * xie_err / smallest
            else:
                margin = 1e-5
            if np.min(np.abs(np.asarray(full.adjusted) - alpha)) > margin:
                assert list(short["rejected"]) == list(full.rejected)
                checked_seq += 1

            # single-step test against closure over its fixed cutoffs,
            # with the scaling re-solved from an independent randomization;
            # the loose root tolerance is paid for in the margins
            single = weighted_dunnett_single_step(
                init, p, corr, alpha, seed=seed, target_error=dun_err, root_tol=1e-4
            )
            c_check = parametric_c(
                tuple(range(m)), init, alpha, corr,
                seed=seed + 7919, target_error=dun_err, root_tol=1e-4,
            )
            cutoffs = c_check * init * alpha
            margins = 1e-5 + (3.0 * abs(single["c_I"] - c_check) + 5e-4) * init * alpha
            if np.all(np.abs(p - cutoffs) > margins):
                brute = _closure_over_fixed_cutoffs(p, cutoffs, m)
                assert list(single["rejected"]) == brute
                checked_ss += 1
        assert checked_seq >= 200, f"m={m}: only {checked_seq} off-boundary instances"
        assert checked_ss >= 200, f"m={m}: only {checked_ss} off-boundary instances"
    elapsed = time.perf_counter() - start
    assert elapsed < 120.0, f"took {elapsed:.0f}s"


def test_criterion_7_property_suite():
    rng = np.random.default_rng(777)

    # the exact test never exceeds its weighted Bonferroni bound
    for k in range(1000):
        m = int(rng.integers(2, 6))
        corr = random_correlation(rng, m)
        w = rng.dirichlet(np.ones(m)) * rng.uniform(0.5, 1.0)
        if rng.random() < 0.2:
            w[rng.integers(m)] = 0.0
        if w.sum() == 0.0:
            continue
        p = rng.uniform(0.0, 1.0, m) ** 2
        pb = bonferroni_pvalue(range(m), w, p)
        pe = parametric_pvalue(range(m), w, p, corr, seed=k, target_error=1e-5)
        assert pe <= pb + 3e-5 / w.sum() + 1e-12, (m, pe, pb)

    # every solved scaling hits its level when re-estimated independently
    for k in range(20):
        m = int(rng.integers(2, 5))
        corr = random_correlation(rng, m)
        w = rng.dirichlet(np.ones(m)) * rng.uniform(0.5, 1.0)
        err = 3e-5 if m == 4 else 1e-5
        c = parametric_c(range(m), w, ALPHA, corr, seed=k, target_error=err)
        target = ALPHA * w.sum()
        recheck = union_exceedance(
            np.minimum(c * ALPHA * w, 1.0), corr, seed=k + 5000, target_error=err
        )
        tol = 3.0 * recheck.error + 3.0 * err + target * 1e-4
        assert abs(recheck.value - target) <= tol, (m, c, recheck.value, target)

    # a union estimate stays between its largest term and the term sum
    for k in range(200):
        m = int(rng.integers(2, 7))
        corr = random_correlation(rng, m)
        u = rng.uniform(0.0, 0.05, m)
        if rng.random() < 0.3:
            u[rng.integers(m)] = 0.0
        est = union_exceedance(u, corr, seed=k, target_error=1e-5)
        slack = est.error + 1e-9
        assert est.value >= u.max() - slack, (m, est.value, u)
        assert est.value <= min(u.sum(), 1.0) + slack, (m, est.value, u)


def test_criterion_8_familywise_error_controlled_under_complete_null():
    start = time.perf_counter()
    all_null6 = [True] * 6
    no_shift6 = [0.0] * 6

    # gatekeeping configuration, generator block-diagonal: primaries
    # equicorrelated at 0.5, no cross-block correlation
    gen = np.eye(6)
    gen[:3, :3] = 0.5
    np.fill_diagonal(gen, 1.0)
    gen6 = CorrelationMatrix(gen)
    graph_scheme = scheme_from_graph(gatekeeping_graph())
    partial = primaries_block_model()
    # the proportional method needs strictly positive weights and the
    # full correlation, so it runs on the equal-weight scheme with the
    # generator supplied as known
    runs6 = [
        ("bonferroni", graph_scheme, partial, 1e-5),
        ("parametric-common", graph_scheme, partial, 1e-5),
        ("parametric-subsets", graph_scheme, partial, 1e-5),
        ("xie", xie_scheme([1.0 / 6] * 6), CorrelationModel.full(gen6), 1e-5),
    ]
    for method, scheme, model, err in runs6:
        scen = SimScenario(
            scheme, model, gen6, ALPHA, method, all_null6, no_shift6, 100_000, 501
        )
        report = simulate(scen, target_error=err)
        bound = ALPHA + 3.0 * report.fwer_stderr
        assert report.fwer_estimate <= bound, (
            f"{method}: estimated rate {report.fwer_estimate:.5f} "
            f"exceeds {bound:.5f}"
        )

    # five random four-hypothesis configurations; the partitioned methods
    # know the two two-member blocks, the proportional method knows all
    rng = np.random.default_rng(88)
    for cfg in range(5):
        corr4 = random_correlation(rng, 4)
        scheme4 = xie_scheme(positive_weights(rng, 4))
        v = corr4.values
        partial4 = CorrelationModel(
            4,
            ((0, 1), (2, 3)),
            (
                CorrelationMatrix(v[np.ix_((0, 1), (0, 1))]),
                CorrelationMatrix(v[np.ix_((2, 3), (2, 3))]),
            ),
        )
        full4 = CorrelationModel.full(corr4)
        for method in ("bonferroni", "parametric-common", "parametric-subsets", "xie"):
            model = full4 if method == "xie" else partial4
            err = 3e-5 if method == "xie" else 1e-5
            scen = SimScenario(
                scheme4, model, corr4, ALPHA, method,
                [True] * 4, [0.0] * 4, 100_000, 600 + cfg,
            )
            report = simulate(scen, target_error=err)
            bound = ALPHA + 3.0 * report.fwer_stderr
            assert report.fwer_estimate <= bound, (
                f"config {cfg} {method}: estimated rate "
                f"{report.fwer_estimate:.5f} exceeds {bound:.5f}"
            )
    elapsed = time.perf_counter() - start
    assert elapsed < 600.0, f"took {elapsed:.0f}s"
