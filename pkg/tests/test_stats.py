import math
from dataclasses import astuple

import numpy as np
import pytest
from hypothesis import given, strategies as st

from leam.mapsim import normalize_distribution
from leam.stats import (DIFFERENT_IDENTITY, SAME_IDENTITY, age_bucket, coefficient_of_variation, group_by,
                        mann_whitney_u, pairwise_bc_emd_table, summarize, u_distribution, u_statistic)

from oracles import enumerate_u_pvalue

samples = st.lists(st.floats(-100, 100, allow_nan=False), min_size=1, max_size=8)


def test_summarize_examples():
    s = summarize([1, 3])
    assert (s.n, s.mean, s.std, s.cv, s.min, s.max) == (2, 2.0, 1.0, 50.0, 1.0, 3.0)
    c = summarize([4.2, 4.2, 4.2])
    assert c.std == 0.0 and c.cv == 0.0
    assert round(coefficient_of_variation(5.75, 56.70), 2) == 10.14
    assert math.isnan(summarize([-1.0, 1.0]).cv)
    with pytest.raises(ValueError):
        summarize([])


@given(st.lists(st.floats(-1e6, 1e6, allow_nan=False), min_size=1, max_size=20), st.randoms())
def test_summarize_properties(values, rnd):
    s = summarize(values)
    shuffled = list(values)
    rnd.shuffle(shuffled)
    np.testing.assert_array_equal(astuple(summarize(shuffled)), astuple(s))
    assert s.min <= s.mean + 1e-9 * max(1.0, abs(s.mean)) and s.mean <= s.max + 1e-9 * max(1.0, abs(s.mean))
    if s.mean > 1e-12:
        assert s.cv >= 0


def test_mann_whitney_examples():
    r = mann_whitney_u([1, 2], [3, 4])
    assert r.u == 0.0 and r.p == pytest.approx(1 / 3, abs=1e-4) and r.method == "exact"
    r = mann_whitney_u([10], [1], alternative="greater")
    assert r.u == 1.0 and r.p == 0.5
    r = mann_whitney_u([1, 2, 2, 5], [5, 2, 1, 2])
    assert r.u == 8.0 and r.method == "asymptotic"
    with pytest.raises(ValueError):
        mann_whitney_u([], [1])
    with pytest.raises(ValueError):
        mann_whitney_u([1], [2], alternative="bigger")
    with pytest.raises(ValueError):
        mann_whitney_u([1, 1], [1, 2], method="exact")


def test_u_distribution():
    assert list(u_distribution(2, 2)) == [1, 1, 2, 1, 1]
    for n, m in [(1, 1), (3, 4), (6, 6)]:
        counts = u_distribution(n, m)
        assert sum(counts) == math.comb(n + m, n)
        assert list(counts) == list(counts[::-1])


@given(samples, samples)
def test_u_complement(x, y):
    assert u_statistic(x, y) + u_statistic(y, x) == len(x) * len(y)
    assert u_statistic(x, x) == len(x) ** 2 / 2


@given(st.integers(1, 6), st.integers(1, 6), st.integers(0, 2**32 - 1),
       st.sampled_from(["two-sided", "greater", "less"]))
def test_exact_matches_enumeration(n, m, seed, alternative):
    rng = np.random.default_rng(seed)
    pooled = rng.permutation(n + m).astype(float)
    x, y = pooled[:n], pooled[n:]
    r = mann_whitney_u(x, y, alternative)
    u, p = enumerate_u_pvalue(x, y, alternative)
    assert r.u == u and abs(r.p - p) <= 1e-12


@given(st.integers(0, 2**32 - 1), st.sampled_from(["two-sided", "greater", "less"]))
def test_normal_approximation_is_close(seed, alternative):
    rng = np.random.default_rng(seed)
    x, y = rng.normal(size=6), rng.normal(0.5, 1, size=6)
    exact = mann_whitney_u(x, y, alternative, method="exact").p
    approx = mann_whitney_u(x, y, alternative, method="asymptotic").p
    assert abs(exact - approx) <= 0.05


def test_identical_samples_are_not_significant():
    x = np.random.default_rng(0).normal(size=40)
    assert mann_whitney_u(x, x.copy()).p >= 0.99


def test_group_by_examples():
    recs = [{"gender": "F", "drop": "1.0"}, {"gender": "F", "drop": "3.0"}]
    g = group_by(recs, "gender")
    assert [(s.group, s.count, s.mean) for s in g.groups] == [("F", 2, 2.0)] and g.excluded == 0
    recs += [{"gender": "M", "drop": "5.0"}, {"gender": "M", "drop": "7.0"}, {"drop": "9.0"},
             {"gender": "M", "drop": "nan"}]
    g = group_by(recs, "gender")
    assert [(s.group, s.mean) for s in g.groups] == [("F", 2.0), ("M", 6.0)] and g.excluded == 2
    assert np.mean([s.mean for s in g.groups]) == 4.0
    strat = group_by([{"gender": "F", "mode": "leam", "drop": 1}, {"gender": "F", "mode": "random", "drop": 2}],
                     "gender", within=("mode",))
    assert [(s.stratum, s.mean) for s in strat.groups] == [(("leam",), 1.0), (("random",), 2.0)]


def test_age_difference_buckets():
    assert age_bucket(30, 33) == "0-4" and age_bucket(40, 30) == "10-14"
    recs = [{"age_anchor": "30", "age_positive": "37", "drop": 1.0}, {"age_anchor": "", "drop": 2.0}]
    g = group_by(recs, "age-difference")
    assert [(s.group, s.count) for s in g.groups] == [("5-9", 1)] and g.excluded == 1


def _maps(seed, k):
    rng = np.random.default_rng(seed)
    return [normalize_distribution(rng.random((8, 8))) for _ in range(k)]


def test_pairwise_same_identity_identical_maps():
    m = _maps(0, 1)[0]
    rows = pairwise_bc_emd_table({("a", "conv1", "m"): [m, m]}, SAME_IDENTITY)
    assert len(rows) == 1 and rows[0].pairs == 1
    assert rows[0].mean_bc == pytest.approx(1.0, abs=1e-12) and rows[0].mean_emd == 0.0


def test_pairwise_ordering_and_determinism():
    groups = {}
    for i, ident in enumerate(["c", "a", "b", "d"]):
        for layer in ["conv2", "conv1"]:
            for model in ["y", "x"]:
                groups[(ident, layer, model)] = _maps(hash((i, layer, model)) % 1000, 2)
    rev = dict(reversed(list(groups.items())))
    a = pairwise_bc_emd_table(groups, DIFFERENT_IDENTITY, emd_grid=4, sample=2, seed=5)
    b = pairwise_bc_emd_table(rev, DIFFERENT_IDENTITY, emd_grid=4, sample=2, seed=5)
    c = pairwise_bc_emd_table(groups, DIFFERENT_IDENTITY, emd_grid=4, sample=2, seed=5, jobs=2)
    assert a == b == c
    assert [(r.layer, r.model) for r in a] == [("conv1", "x"), ("conv1", "y"), ("conv2", "x"), ("conv2", "y")]
    assert all(0 < r.mean_bc <= 1 and r.sample_size == 2 and r.seed == 5 for r in a)
    same = pairwise_bc_emd_table(groups, SAME_IDENTITY, emd_grid=4)
    assert all(r.pairs == 4 for r in same)
    with pytest.raises(ValueError):
        pairwise_bc_emd_table(groups, "cousins")


def test_single_image_identity_is_skipped():
    rows = pairwise_bc_emd_table({("a", "conv1", "m"): _maps(1, 1)}, SAME_IDENTITY)
    assert rows[0].pairs == 0 and math.isnan(rows[0].mean_bc)
