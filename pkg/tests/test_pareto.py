import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ddtd.field import DensityField, Mesh, Sample, SampleStatus
from ddtd.pareto import (
    crowding_distance, dominates, hypervolume, non_dominated_sort,
    normalized_hypervolume, read_front_csv, reference_point, select_elites,
    write_front_csv,
)
from oracles import brute_dominates, brute_ranks, monte_carlo_hypervolume

MESH = Mesh((1, 1))


def make_samples(objs, start_id=0):
    return [
        Sample(DensityField(MESH, np.ones(4)), id=start_id + i, objectives=np.asarray(o, float),
               status=SampleStatus.OK)
        for i, o in enumerate(objs)
    ]


def test_dominates_examples():
    assert dominates((1, 2), (2, 3))
    assert not dominates((1, 2), (1, 2))
    assert not dominates((1, 3), (2, 2))
    with pytest.raises(ValueError):
        dominates((1, 2), (1, 2, 3))


def test_sort_examples():
    assert list(non_dominated_sort([(1, 2), (2, 1), (2, 2)]).ranks) == [1, 1, 2]
    assert list(non_dominated_sort([(1, 1)]).ranks) == [1]
    assert list(non_dominated_sort([(1, 1), (2, 2), (3, 3)]).ranks) == [1, 2, 3]
    with pytest.raises(ValueError):
        non_dominated_sort([])


def test_sort_matches_bruteforce_with_ties(rng):
    for _ in range(50):
        pts = rng.integers(0, 4, size=(rng.integers(1, 30), rng.integers(2, 4))).astype(float)
        assert list(non_dominated_sort(pts).ranks) == brute_ranks(pts.tolist())


def test_crowding_examples():
    assert np.all(np.isinf(crowding_distance([(1, 2), (2, 1)])))
    assert np.all(np.isinf(crowding_distance([(1, 2)])))
    d = crowding_distance([(1, 3), (2, 2), (3, 1)])
    assert np.isinf(d[0]) and np.isinf(d[2])
    assert d[1] == pytest.approx(2.0)


def test_crowding_zero_range_contributes_nothing():
    d = crowding_distance([(1, 5), (2, 5), (3, 5)])
    assert d[1] == pytest.approx(1.0)


def test_select_elites_examples():
    s = make_samples([(1, 2), (2, 1), (2, 2)])
    assert [e.id for e in select_elites(s, 400)] == [0, 1]
    s = make_samples([(1, 1)] * 5)
    assert [e.id for e in select_elites(s, 400)] == [0]
    t = np.linspace(0, 1, 500)
    s = make_samples(np.c_[t, 1 - t])
    elites = select_elites(s, 400)
    assert len(elites) == 400
    assert list(non_dominated_sort([e.objectives for e in elites]).ranks) == [1] * 400
    # extremes always survive truncation
    assert {0, 499} <= {e.id for e in elites}


def test_select_elites_rejects_unevaluated():
    s = make_samples([(1, 1)])
    s.append(Sample(DensityField(MESH, np.ones(4)), id=9))
    with pytest.raises(RuntimeError):
        select_elites(s, 10)


def test_select_elites_skips_failed():
    s = make_samples([(1, 1), (0, 0)])
    s[1].status = SampleStatus.FAILED
    assert [e.id for e in select_elites(s, 10)] == [0]


def test_select_elites_dominance_free(rng):
    for _ in range(20):
        objs = rng.random((60, 3))
        elites = select_elites(make_samples(objs), 10)
        for a in elites:
            for b in elites:
                assert not dominates(a.objectives, b.objectives)


def test_hypervolume_examples():
    assert hypervolume([(1, 1)], (2, 2)) == pytest.approx(1.0, abs=1e-12)
    assert hypervolume([(1, 2), (2, 1)], (3, 3)) == pytest.approx(3.0, abs=1e-12)
    assert hypervolume([(1, 2), (2, 1), (1.5, 1.5)], (3, 3)) == pytest.approx(3.25, abs=1e-12)


def test_hypervolume_grid_oracle():
    # exact cell counting on a half-integer lattice for the third example
    pts = np.array([(1, 2), (2, 1), (1.5, 1.5)])
    xs = np.arange(1.0, 3.0, 0.5) + 0.25
    cells = [(x, y) for x in xs for y in xs]
    covered = sum(any(x >= p[0] and y >= p[1] for p in pts) for x, y in cells)
    assert covered * 0.25 == 3.25


def test_hypervolume_excludes_points_outside_reference():
    assert hypervolume([(1, 1), (3, 0)], (2, 2)) == pytest.approx(1.0)
    assert hypervolume([(3, 3)], (2, 2)) == 0.0
    assert hypervolume(np.empty((0, 2)), (2, 2)) == 0.0


def test_hypervolume_3d_unit_cubes():
    assert hypervolume([(0, 0, 0)], (1, 1, 1)) == pytest.approx(1.0)
    # two unit cubes overlapping in a 1x1x0.5 slab
    assert hypervolume([(0, 0, 0), (0, 0, 0.5)], (1, 1, 1)) == pytest.approx(1.0)
    assert hypervolume([(0, 1, 0), (1, 0, 0)], (2, 2, 2)) == pytest.approx(4 + 4 - 2)


def test_hypervolume_3d_inclusion_exclusion(rng):
    for _ in range(30):
        pts = rng.random((3, 3))
        ref = np.ones(3)
        single = [np.prod(ref - p) for p in pts]
        pair = [np.prod(ref - np.maximum(pts[i], pts[j])) for i, j in [(0, 1), (0, 2), (1, 2)]]
        triple = np.prod(ref - pts.max(axis=0))
        assert hypervolume(pts, ref) == pytest.approx(sum(single) - sum(pair) + triple, rel=1e-12)


def test_hypervolume_monte_carlo_small(rng):
    pts = rng.random((10, 3))
    hv = hypervolume(pts, np.ones(3))
    est, se = monte_carlo_hypervolume(pts, np.ones(3), 200_000, rng)
    assert abs(hv - est) <= 4 * se


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(*[st.floats(0, 1)] * 3), min_size=1, max_size=15),
       st.tuples(*[st.floats(0, 1)] * 3))
def test_hypervolume_monotone(points, extra):
    ref = (1.1, 1.1, 1.1)
    base = hypervolume(points, ref)
    assert hypervolume(points + [extra], ref) >= base - 1e-12


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(*[st.floats(0, 1)] * 2), min_size=2, max_size=15))
def test_removing_dominated_point_keeps_hypervolume(points):
    ref = (1.1, 1.1)
    ranks = non_dominated_sort(points).ranks
    front = [p for p, r in zip(points, ranks) if r == 1]
    assert hypervolume(front, ref) == pytest.approx(hypervolume(points, ref), rel=1e-12, abs=1e-15)


@settings(max_examples=200)
@given(st.lists(st.tuples(*[st.integers(0, 3)] * 3), min_size=3, max_size=3))
def test_dominance_strict_partial_order(triple):
    a, b, c = triple
    assert not dominates(a, a)
    if dominates(a, b):
        assert not dominates(b, a)
        if dominates(b, c):
            assert dominates(a, c)
    assert dominates(a, b) == brute_dominates(a, b)


def test_normalized_hypervolume():
    assert normalized_hypervolume([(1, 1)], (2, 2), 1.0) == pytest.approx(1.0)
    assert normalized_hypervolume([(1, 1)], (2, 2), 0.5) == pytest.approx(2.0)
    assert normalized_hypervolume([(3, 3)], (2, 2), 1.0) == 0.0
    with pytest.raises(ValueError):
        normalized_hypervolume([(1, 1)], (2, 2), 0.0)


def test_reference_point_contains_every_point():
    objs = np.array([[1.0, 0.2, -0.004], [2.0, 0.1, -0.001], [1.5, 0.3, -0.002]])
    ref = reference_point(objs)
    assert np.allclose(ref[:2], [2.2, 0.33])
    assert ref[2] == pytest.approx(-0.0009)
    assert np.all(objs < ref)
    assert np.all(reference_point([[0.0, 1.0], [0.0, 2.0]]) > [0.0, 2.0])


def test_front_csv_roundtrip(tmp_path):
    s = make_samples([(1.0, 2.5, -3e-4), (0.1, 0.2, 0.3)], start_id=7)
    s[1].iteration_born = 4
    write_front_csv(s, tmp_path / "front.csv")
    lines = (tmp_path / "front.csv").read_text().splitlines()
    assert lines[0] == "id,iteration_born,J1,J2,J3"
    rows = read_front_csv(tmp_path / "front.csv")
    assert rows[1][0] == 8 and rows[1][1] == 4
    assert np.array_equal(rows[0][2], s[0].objectives)
