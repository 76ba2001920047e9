import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from sandpile_lab.exceptions import BoxMismatch, NotStabilizing
from sandpile_lab.lattice import ChipGrid, Odometer
from sandpile_lab.leastaction import (
    check_least_action,
    is_stabilizing,
    permutation_audit,
    stabilizing_candidates,
    toppling_multiplicity,
)
from sandpile_lab.stabilizer import random_legal_run, stabilize


def delta(d=2, k=1, n=1, site=None):
    field = ChipGrid.point(0, d, k).counts.copy()
    field[tuple(k + c for c in (site or (0,) * d))] = n
    return field


class TestIsStabilizing:
    def test_true_odometer(self):
        assert is_stabilizing(ChipGrid.point(4, 2), Odometer.from_array(delta())).ok

    def test_zero_fails_at_origin(self):
        verdict = is_stabilizing(ChipGrid.point(4, 2), Odometer.from_array(delta(n=0)))
        assert not verdict.ok and verdict.site == (0, 0)

    def test_far_extra_topple(self):
        odometer = stabilize(ChipGrid.point(16, 2)).odometer.embed(6)
        extra = Odometer.from_array(odometer.topples + delta(k=6, site=(5, 5)))
        assert is_stabilizing(ChipGrid.point(16, 2), extra).ok

    def test_first_violation_in_raster_order(self):
        eta = ChipGrid.from_array(np.array([[0, 0, 0], [0, 4, 0], [5, 0, 0]]))
        assert is_stabilizing(eta, Odometer.from_array(np.zeros((3, 3), int))).site == (0, 0)

    def test_dimension_mismatch(self):
        with pytest.raises(BoxMismatch):
            is_stabilizing(ChipGrid.point(4, 2), Odometer.from_array(np.zeros((3, 3, 3), int)))


class TestLeastAction:
    def test_equality_case(self):
        assert check_least_action(ChipGrid.point(4, 2), Odometer.from_array(delta()))

    def test_non_stabilizing_candidate_raises(self):
        with pytest.raises(NotStabilizing):
            check_least_action(ChipGrid.point(4, 2), Odometer.from_array(delta(n=0)))

    def test_rejection_sampled_candidates(self, rng):
        # odometer plus a random nonnegative bump, kept only when stabilizing
        eta = ChipGrid.point(16, 2)
        base = stabilize(eta).odometer.embed(5)
        accepted = 0
        while accepted < 200:
            extra = np.zeros(base.box.shape, dtype=np.int64)
            sites = rng.integers(1, 10, size=(int(rng.integers(1, 4)), 2))
            for x, y in sites:
                extra[x, y] += int(rng.integers(1, 3))
            v = Odometer.from_array(base.topples + extra)
            if is_stabilizing(eta, v).ok:
                accepted += 1
                assert check_least_action(eta, v, base)

    def test_constructive_candidates(self, rng):
        eta = ChipGrid.from_array(rng.integers(0, 8, size=(9, 9)))
        odometer = stabilize(eta).odometer
        k = odometer.box.k
        for v in stabilizing_candidates(eta, rng, 40, base=odometer):
            assert is_stabilizing(eta, v).ok
            kk = max(k, v.box.k)
            assert np.all(odometer.embed(kk).topples <= v.embed(kk).topples)

    def test_odometer_is_minimum_of_candidates(self, rng):
        eta = ChipGrid.from_array(rng.integers(0, 8, size=(7, 7)))
        odometer = stabilize(eta).odometer
        cands = list(stabilizing_candidates(eta, rng, 30, base=odometer)) + [odometer]
        k = max(c.box.k for c in cands)
        lowest = np.min([c.embed(k).topples for c in cands], axis=0)
        np.testing.assert_array_equal(lowest, odometer.embed(k).topples)

    @given(arrays(np.int64, (5, 5), elements=st.integers(0, 7)), st.integers(0, 2**32 - 1))
    def test_property(self, values, seed):
        eta = ChipGrid.from_array(values)
        odometer = stabilize(eta).odometer
        for v in stabilizing_candidates(eta, np.random.default_rng(seed), 4, base=odometer):
            assert check_least_action(eta, v, odometer)


class TestPermutations:
    def test_single_topple(self):
        res = random_legal_run(ChipGrid.point(4, 2), 9, record=True)
        assert res.sequence == ((0, 0),)

    def test_sixteen_multiset(self):
        counts = toppling_multiplicity(random_legal_run(ChipGrid.point(16, 2), 3, record=True).sequence)
        assert counts == {(0, 0): 5, (1, 0): 1, (-1, 0): 1, (0, 1): 1, (0, -1): 1}

    def test_random_grids(self, rng):
        for _ in range(10):
            eta = ChipGrid.from_array(rng.integers(0, 9, size=(11, 11)))
            a, b = (int(x) for x in rng.integers(2**31, size=2))
            assert permutation_audit(eta, a, b)

    def test_multiplicity_equals_odometer(self, rng):
        eta = ChipGrid.from_array(rng.integers(0, 9, size=(11, 11)))
        res = random_legal_run(eta, 17, record=True)
        counts = toppling_multiplicity(res.sequence)
        k = res.odometer.box.k
        expected = {tuple(int(i) - k for i in idx): int(c)
                    for idx, c in np.ndenumerate(res.odometer.topples) if c}
        assert dict(counts) == expected
