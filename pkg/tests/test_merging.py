"""Tests for the group-merging procedure against an independent reference."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from partlift.extension import Group3D
from partlift.geometry import PointIndexSet
from partlift.merging import merge_groups


def reference_merge(groups: list[set[int]], threshold: float) -> list[set[int]]:
    """Naive reimplementation with python sets.

    Phase 1 is the same greedy scan (it is order-defined); phase 2 uses the
    closed form: each accumulated set keeps only points absent from all
    later accumulated sets.
    """
    order = sorted(range(len(groups)), key=lambda i: -len(groups[i]))
    accumulated: list[set[int]] = []
    for i in order:
        g = set(groups[i])
        for k, m in enumerate(accumulated):
            inter = len(g & m)
            union = len(g | m)
            if union and inter / union > threshold:
                accumulated[k] = m | g
                break
        else:
            accumulated.append(g)
    final = []
    for k, m in enumerate(accumulated):
        later = set().union(*accumulated[k + 1:]) if k + 1 < len(accumulated) else set()
        kept = m - later
        if kept:
            final.append(kept)
    return final


def _groups(*index_lists):
    return [Group3D(PointIndexSet(ixs), 1) for ixs in index_lists]


class TestMergeGroups:
    def test_empty_input(self):
        assert merge_groups([], 0.3) == []

    def test_single_group_passthrough(self):
        parts = merge_groups(_groups([1, 2, 3]), 0.3)
        assert len(parts) == 1
        assert parts[0].points.indices.tolist() == [1, 2, 3]
        assert parts[0].part_id == 0

    def test_identical_groups_merge(self):
        parts = merge_groups(_groups([1, 2, 3], [1, 2, 3]), 0.9)
        assert len(parts) == 1

    def test_threshold_bounds(self):
        for bad in (0.0, 1.0, -0.1, 1.5):
            with pytest.raises(ValueError):
                merge_groups(_groups([1]), bad)

    def test_worked_example_big_pair_and_small_subset(self):
        # A has 100 points, B has 95 with IoU(A, B) = 0.9 (90 shared),
        # C is 10 points inside A. At T=0.3, B merges into A; C stays its
        # own set because IoU(C, A union B) is small; dedup then moves C's
        # points out of the merged set, leaving them only in the finer C.
        a = list(range(100))
        b = list(range(10, 100)) + list(range(100, 105))
        c = list(range(20, 30))
        inter = len(set(a) & set(b))
        union = len(set(a) | set(b))
        assert abs(inter / union - 90 / 105) < 1e-12  # sanity on the fixture
        parts = merge_groups(_groups(a, b, c), 0.3)
        assert len(parts) == 2
        merged = set(a) | set(b)
        assert set(parts[0].points.indices.tolist()) == merged - set(c)
        assert set(parts[1].points.indices.tolist()) == set(c)

    def test_matches_reference_on_worked_example(self):
        groups = [set(range(100)),
                  set(range(10, 105)),
                  set(range(20, 30))]
        ours = merge_groups(_groups(*[sorted(g) for g in groups]), 0.3)
        ref = reference_merge(groups, 0.3)
        assert [set(p.points.indices.tolist()) for p in ours] == ref

    @pytest.mark.parametrize("seed", range(30))
    def test_randomized_equivalence_with_reference(self, seed):
        rng = np.random.default_rng(seed)
        n_groups = int(rng.integers(1, 9))
        universe = int(rng.integers(20, 200))
        groups = []
        for _ in range(n_groups):
            size = int(rng.integers(1, max(2, universe // 2)))
            groups.append(set(rng.choice(universe, size=size, replace=False).tolist()))
        threshold = float(rng.uniform(0.05, 0.95))
        ours = merge_groups(_groups(*[sorted(g) for g in groups]), threshold)
        ref = reference_merge(groups, threshold)
        assert [set(p.points.indices.tolist()) for p in ours] == ref

    @given(
        st.lists(
            st.sets(st.integers(0, 60), min_size=1, max_size=30),
            min_size=1, max_size=8,
        ),
        st.floats(0.05, 0.95),
    )
    @settings(max_examples=60, deadline=None)
    def test_disjointness_and_conservation(self, raw_groups, threshold):
        parts = merge_groups(_groups(*[sorted(g) for g in raw_groups]), threshold)
        all_points = set().union(*raw_groups)
        covered: set[int] = set()
        for part in parts:
            points = set(part.points.indices.tolist())
            assert points, "no empty parts"
            assert not (points & covered), "parts must be pairwise disjoint"
            covered |= points
        assert covered == all_points, "merging must neither invent nor lose points"

    def test_part_ids_are_ordinals(self):
        parts = merge_groups(_groups([1, 2], [50, 51], [90]), 0.3)
        assert [p.part_id for p in parts] == list(range(len(parts)))

    def test_area_ties_keep_creation_order(self):
        # two disjoint same-size groups: phase 1 keeps input order, so the
        # first created group is deduped against the later one
        a = _groups([1, 2, 3], [11, 12, 13], [1, 2, 3, 11])
        parts = merge_groups(a, 0.5)
        ref = reference_merge([{1, 2, 3}, {11, 12, 13}, {1, 2, 3, 11}], 0.5)
        assert [set(p.points.indices.tolist()) for p in parts] == ref
