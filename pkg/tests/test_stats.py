import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from roisaliency.data import DataError
from roisaliency.stats import (
    bh_fdr,
    bootstrap_jsd,
    histogram,
    jsd,
    wilcoxon_one_tailed,
)


# ---------------------------------------------------------------------------
# independent oracles (implemented differently from the library code)
# ---------------------------------------------------------------------------

def oracle_ranks(values):
    """Average ranks via unique/cumsum, unlike the library's group scan."""
    uniq, inverse, counts = np.unique(values, return_inverse=True, return_counts=True)
    below = np.cumsum(counts) - counts
    rank_of_unique = below + (counts + 1) / 2.0
    return rank_of_unique[inverse]


def oracle_wilcoxon(diffs, direction):
    """Full enumeration over all 2^n sign assignments."""
    d = np.asarray(diffs, dtype=np.float64)
    d = d[d != 0]
    ranks = oracle_ranks(np.abs(d))
    w_obs = ranks[d > 0].sum()
    n = len(d)
    hits = 0
    for signs in itertools.product((False, True), repeat=n):
        w = ranks[np.array(signs)].sum()
        if direction == "greater":
            hits += w >= w_obs - 1e-9
        else:
            hits += w <= w_obs + 1e-9
    return hits / 2.0**n


def oracle_bh_reject(ps, alpha):
    """Classic step-up: largest k with p_(k) <= k*alpha/m."""
    ps = np.asarray(ps, dtype=np.float64)
    m = len(ps)
    order = np.argsort(ps, kind="stable")
    k = 0
    for i in range(m):
        if ps[order[i]] <= (i + 1) * alpha / m:
            k = i + 1
    reject = np.zeros(m, dtype=bool)
    reject[order[:k]] = True
    return reject


class TestHistogram:
    def test_edges(self):
        np.testing.assert_allclose(histogram([0.0, 1.0], 2), [0.5, 0.5])

    def test_constant(self):
        h = histogram([0.3] * 7, 10)
        assert h[3] == 1.0
        assert h.sum() == 1.0

    def test_sums_to_one(self):
        values = np.random.default_rng(0).uniform(size=201)
        assert histogram(values, 20).sum() == pytest.approx(1.0, abs=1e-12)

    def test_rejects_out_of_range(self):
        with pytest.raises(DataError):
            histogram([1.2], 10)
        with pytest.raises(DataError):
            histogram([], 10)


class TestJsd:
    def test_identity_zero(self):
        p = np.array([0.25, 0.5, 0.25])
        assert jsd(p, p) == 0.0

    def test_disjoint_is_one(self):
        assert jsd([1.0, 0.0], [0.0, 1.0]) == pytest.approx(1.0, abs=1e-15)

    def test_symmetry(self):
        rng = np.random.default_rng(1)
        for _ in range(50):
            p = rng.dirichlet(np.ones(8))
            q = rng.dirichlet(np.ones(8))
            assert jsd(p, q) == pytest.approx(jsd(q, p), abs=1e-12)

    def test_bounds(self):
        rng = np.random.default_rng(2)
        for _ in range(50):
            p = rng.dirichlet(np.ones(5))
            q = rng.dirichlet(np.ones(5))
            assert 0.0 <= jsd(p, q) <= 1.0 + 1e-12

    def test_zero_iff_equal(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            p = rng.dirichlet(np.ones(6))
            q = p.copy()
            q[0] += 0.01
            q[1] -= 0.01
            if q[1] < 0:
                continue
            assert jsd(p, p) <= 1e-12
            assert jsd(p, q) > 1e-12

    def test_rejects_unnormalized(self):
        with pytest.raises(DataError):
            jsd([0.5, 0.6], [0.5, 0.5])

    def test_rejects_length_mismatch(self):
        with pytest.raises(DataError):
            jsd([1.0], [0.5, 0.5])


class TestBootstrapJsd:
    def test_identical_constants_zero_interval(self):
        rng = np.random.default_rng(0)
        iv = bootstrap_jsd([0.3] * 5, [0.3] * 9, replicates=200, bins=20, alpha=0.05, rng=rng)
        assert iv.lower == iv.upper == iv.point == 0.0

    def test_disjoint_support_unit_interval(self):
        rng = np.random.default_rng(1)
        iv = bootstrap_jsd([0.0] * 6, [1.0] * 6, replicates=300, bins=20, alpha=0.05, rng=rng)
        assert iv.lower == pytest.approx(1.0, abs=1e-12)
        assert iv.upper == pytest.approx(1.0, abs=1e-12)
        assert iv.point == pytest.approx(1.0, abs=1e-12)

    def test_point_inside_interval_sandwich(self):
        rng_data = np.random.default_rng(2)
        for trial in range(5):
            v0 = rng_data.uniform(size=80)
            v1 = rng_data.uniform(size=80) ** 2
            iv = bootstrap_jsd(
                v0, v1, replicates=3000, bins=10, alpha=0.05, rng=np.random.default_rng(trial)
            )
            assert iv.lower - 0.05 <= iv.point <= iv.upper + 0.05
            assert 0.0 <= iv.lower <= iv.upper <= 1.0

    def test_deterministic_given_seed(self):
        v0 = np.random.default_rng(3).uniform(size=40)
        v1 = np.random.default_rng(4).uniform(size=30)
        a = bootstrap_jsd(v0, v1, replicates=500, bins=20, alpha=0.1, rng=np.random.default_rng(9))
        b = bootstrap_jsd(v0, v1, replicates=500, bins=20, alpha=0.1, rng=np.random.default_rng(9))
        assert a == b


class TestWilcoxon:
    def test_five_positive_shifts(self):
        # only the all-positive assignment reaches the maximal rank sum: 1/32
        res = wilcoxon_one_tailed([0.3, 0.1, 0.9, 0.5, 0.2], "greater")
        assert res.p_value == pytest.approx(0.03125, abs=1e-15)
        assert res.method == "exact"

    def test_single_positive_shift(self):
        res = wilcoxon_one_tailed([0.7], "greater")
        assert res.p_value == pytest.approx(0.5, abs=1e-15)

    def test_mirror_symmetry(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            d = rng.normal(size=rng.integers(1, 12))
            pg = wilcoxon_one_tailed(d, "greater").p_value
            pl = wilcoxon_one_tailed(-d, "less").p_value
            assert pg == pytest.approx(pl, abs=1e-12)

    def test_zeros_dropped(self):
        with_zeros = wilcoxon_one_tailed([0.0, 0.3, 0.0, -0.2, 0.8], "greater")
        without = wilcoxon_one_tailed([0.3, -0.2, 0.8], "greater")
        assert with_zeros.p_value == without.p_value
        assert with_zeros.n == 3

    def test_all_zero_degenerate(self):
        res = wilcoxon_one_tailed([0.0, 0.0], "less")
        assert res.degenerate
        assert res.p_value == 1.0

    def test_matches_enumeration_continuous(self):
        rng = np.random.default_rng(6)
        for _ in range(100):
            n = int(rng.integers(1, 11))
            d = rng.normal(size=n)
            direction = "greater" if rng.random() < 0.5 else "less"
            res = wilcoxon_one_tailed(d, direction)
            assert res.p_value == pytest.approx(oracle_wilcoxon(d, direction), abs=1e-12)

    def test_matches_enumeration_with_ties(self):
        rng = np.random.default_rng(7)
        for _ in range(100):
            n = int(rng.integers(2, 11))
            d = rng.integers(-3, 4, size=n).astype(float)
            if np.all(d == 0):
                continue
            direction = "greater" if rng.random() < 0.5 else "less"
            res = wilcoxon_one_tailed(d, direction)
            assert res.p_value == pytest.approx(oracle_wilcoxon(d, direction), abs=1e-12)

    def test_normal_approximation_continuity(self):
        # the exact/normal switch should not produce wildly different answers
        rng = np.random.default_rng(8)
        d = rng.normal(loc=0.3, size=25)
        exact = wilcoxon_one_tailed(d, "greater")
        assert exact.method == "exact"
        d26 = np.concatenate([d, [1e-9]])
        approx = wilcoxon_one_tailed(d26, "greater")
        assert approx.method == "normal"
        assert abs(exact.p_value - approx.p_value) < 0.02

    def test_p_in_half_open_interval(self):
        rng = np.random.default_rng(9)
        for n in (5, 40):
            d = np.abs(rng.normal(size=n)) + 0.1  # strongly positive
            for direction in ("greater", "less"):
                p = wilcoxon_one_tailed(d, direction).p_value
                assert 0.0 < p <= 1.0

    def test_bad_direction(self):
        with pytest.raises(DataError):
            wilcoxon_one_tailed([1.0], "two-sided")


class TestBhFdr:
    def test_all_rejected(self):
        qs, reject = bh_fdr([0.01, 0.02, 0.03, 0.04, 0.05], 0.05)
        assert reject.all()

    def test_single_p(self):
        qs, reject = bh_fdr([0.03], 0.05)
        assert qs[0] == 0.03
        assert reject[0]
        qs, reject = bh_fdr([0.08], 0.05)
        assert not reject[0]

    def test_hand_case(self):
        qs, reject = bh_fdr([0.03, 0.5], 0.05)
        np.testing.assert_allclose(qs, [0.06, 0.5])
        assert not reject.any()

    def test_matches_step_up_procedure(self):
        rng = np.random.default_rng(10)
        for _ in range(100):
            m = int(rng.integers(1, 30))
            ps = rng.uniform(size=m) ** rng.uniform(0.3, 3.0)
            alpha = float(rng.uniform(0.01, 0.2))
            _, reject = bh_fdr(ps, alpha)
            np.testing.assert_array_equal(reject, oracle_bh_reject(ps, alpha))

    def test_qs_clamped_to_one(self):
        qs, _ = bh_fdr([0.9, 0.95, 1.0], 0.05)
        assert np.all(qs <= 1.0)

    def test_rejects_bad_p(self):
        with pytest.raises(DataError):
            bh_fdr([1.5], 0.05)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 2**20), st.integers(1, 20))
    def test_monotone_in_sorted_order(self, seed, m):
        ps = np.random.default_rng(seed).uniform(size=m)
        qs, _ = bh_fdr(ps, 0.05)
        order = np.argsort(ps, kind="stable")
        assert np.all(np.diff(qs[order]) >= -1e-15)
