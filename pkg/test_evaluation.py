#!/usr/bin/env python3
"""
Tests for boundary-map scoring and segmentation back-ends.

Covers pixel error and its threshold search, the Rand merge/split scores,
connected components and watershed segmentation, and the precision-recall
sweeps built on them.
"""

import heapq
import sys
from collections import Counter, deque
from pathlib import Path

import numpy as np
import pytest

# Add the src directory to Python path so we can import our modules
sys.path.insert(0, str(Path(__file__).parent / "src"))

from em_boundary_net.core.evaluation import (
    best_pixel_error,
    best_rand_f,
    contingency,
    pixel_error,
    rand_pr_curve,
    rand_scores,
    summarize_map,
    threshold_grid,
)
from em_boundary_net.models.errors import ConfigurationError, ShapeError, UndefinedScoreError
from em_boundary_net.segmentation import SegmenterFactory
from em_boundary_net.segmentation.connected_components import connected_components_2d
from em_boundary_net.segmentation.watershed import watershed_2d


@pytest.fixture
def column_map():
    """An 8 x 8 x 1 map with one boundary column at x = 4, and its truth."""
    boundary_map = np.full((8, 8, 1), 0.1, dtype=np.float32)
    boundary_map[4] = 0.9
    truth = np.ones((8, 8, 1), dtype=np.uint32)
    truth[4] = 0
    truth[5:] = 2
    return boundary_map, truth


def test_pixel_error_extremes():
    """Perfect and inverted maps give error 0 and 1 at t = 0.5."""
    labels = np.random.default_rng(0).integers(0, 2, (6, 5, 2)).astype(np.uint8)
    assert pixel_error(labels.astype(np.float32), labels, 0.5) == 0.0
    assert pixel_error(1.0 - labels.astype(np.float32), labels, 0.5) == 1.0


def test_pixel_error_matches_scalar_loop():
    """Counts every disagreeing pixel once."""
    rng = np.random.default_rng(1)
    boundary_map = rng.random((7, 6, 3))
    labels = rng.integers(0, 2, (7, 6, 3))
    wrong = sum(1 for p in np.ndindex(labels.shape)
                if (boundary_map[p] >= 0.3) != bool(labels[p]))
    assert pixel_error(boundary_map, labels, 0.3) == pytest.approx(wrong / labels.size)


def test_pixel_error_dims_mismatch():
    """Maps and labels of different dims are rejected."""
    with pytest.raises(ShapeError):
        pixel_error(np.zeros((3, 3, 1)), np.zeros((3, 4, 1)), 0.5)


def test_threshold_grid_is_exact():
    """The grid holds k / n exactly, endpoints included."""
    grid = threshold_grid(0.01)
    assert len(grid) == 101
    assert grid[0] == 0.0 and grid[-1] == 1.0
    assert grid[37] == 37 / 100


def test_best_pixel_error_matches_exhaustive_search():
    """The line search finds the first threshold of minimum error."""
    rng = np.random.default_rng(2)
    boundary_map = rng.integers(0, 101, (10, 9, 2)) / 100
    labels = (boundary_map + rng.normal(0, 0.2, boundary_map.shape) > 0.5).astype(np.uint8)
    errors = [pixel_error(boundary_map, labels, t) for t in threshold_grid(0.01)]
    expected = int(np.argmin(errors))
    t, error = best_pixel_error(boundary_map, labels, step=0.01)
    assert t == threshold_grid(0.01)[expected]
    assert error == errors[expected]


def test_contingency_ignores_boundary():
    """Pixels labelled 0 in either volume are not counted."""
    proposal = np.array([0, 1, 1, 2, 2]).reshape(5, 1, 1)
    truth = np.array([1, 1, 0, 1, 3]).reshape(5, 1, 1)
    table = contingency(proposal, truth).toarray()
    assert table.tolist() == [[1, 0], [1, 1]]


def test_rand_scores_identity():
    """A segmentation scored against itself is perfect."""
    truth = np.random.default_rng(3).integers(0, 5, (6, 6, 2))
    scores = rand_scores(truth, truth)
    assert (scores.merge, scores.split, scores.f) == (1.0, 1.0, 1.0)


def test_rand_scores_oversegmentation():
    """Splitting one object in two halves the split score only."""
    truth = np.ones((4, 1, 1), dtype=np.uint32)
    proposal = np.array([1, 1, 2, 2]).reshape(4, 1, 1)
    scores = rand_scores(proposal, truth)
    assert scores.merge == 1.0
    assert scores.split == 0.5
    assert scores.f == pytest.approx(2 / 3)


def test_rand_scores_singletons():
    """Four singletons against one object."""
    truth = np.ones((4, 1, 1), dtype=np.uint32)
    proposal = np.arange(1, 5).reshape(4, 1, 1)
    scores = rand_scores(proposal, truth)
    assert scores.merge == 1.0
    assert scores.split == 0.25
    assert scores.f == pytest.approx(0.4)


def test_rand_scores_swap_merge_and_split():
    """Exchanging proposal and truth exchanges merge and split."""
    rng = np.random.default_rng(4)
    a = rng.integers(0, 4, (8, 8, 1))
    b = rng.integers(0, 6, (8, 8, 1))
    forward, reverse = rand_scores(a, b), rand_scores(b, a)
    assert forward.merge == reverse.split
    assert forward.split == reverse.merge


def rand_oracle(proposal, truth):
    """(merge, split, f) from overlaps tallied pixel by pixel, None when nothing is counted."""
    counted = [(p, t) for p, t in zip(proposal.ravel().tolist(), truth.ravel().tolist())
               if p != 0 and t != 0]
    if not counted:
        return None
    overlap = sum(n * n for n in Counter(counted).values())
    merge = overlap / sum(n * n for n in Counter(p for p, _ in counted).values())
    split = overlap / sum(n * n for n in Counter(t for _, t in counted).values())
    return merge, split, 2.0 * merge * split / (merge + split)


def test_rand_scores_match_pair_counts():
    """100 random pairs match the tallied formulas exactly; swapping the pair swaps merge and split."""
    rng = np.random.default_rng(6)
    for _ in range(100):
        dims = (int(rng.integers(1, 9)), int(rng.integers(1, 9)), int(rng.integers(1, 3)))
        proposal = rng.integers(0, int(rng.integers(1, 7)), dims)
        truth = rng.integers(0, int(rng.integers(1, 7)), dims)
        expected = rand_oracle(proposal, truth)
        if expected is None:
            with pytest.raises(UndefinedScoreError):
                rand_scores(proposal, truth)
            continue
        scores, swapped = rand_scores(proposal, truth), rand_scores(truth, proposal)
        assert (scores.merge, scores.split, scores.f) == expected
        assert (swapped.merge, swapped.split, swapped.f) == (scores.split, scores.merge, scores.f)
        if truth.any():
            identity = rand_scores(truth, truth)
            assert (identity.merge, identity.split, identity.f) == (1.0, 1.0, 1.0)


def test_split_never_grows_under_refinement():
    """Cutting one proposal segment in two never raises the split score."""
    rng = np.random.default_rng(7)
    for _ in range(100):
        truth = rng.integers(1, 4, (4, 4, 1))
        proposal = rng.integers(1, 4, (4, 4, 1))
        members = np.flatnonzero(proposal == rng.choice(np.unique(proposal)))
        refined = proposal.copy()
        refined.flat[members[rng.random(members.size) < 0.5]] = proposal.max() + 1
        before, after = rand_scores(proposal, truth), rand_scores(refined, truth)
        assert after.split <= before.split
        assert (after.merge, after.split, after.f) == rand_oracle(refined, truth)


def test_rand_scores_undefined():
    """No pixel labelled in both volumes is an undefined score."""
    truth = np.array([1, 1, 0, 0]).reshape(4, 1, 1)
    proposal = np.array([0, 0, 1, 1]).reshape(4, 1, 1)
    with pytest.raises(UndefinedScoreError):
        rand_scores(proposal, truth)


def test_connected_components_extremes():
    """t above every value gives one component per slice; t = 0 gives none."""
    boundary_map = np.random.default_rng(5).random((6, 6, 3)) * 0.9
    labels = connected_components_2d(boundary_map, 1.0)
    assert labels.dtype == np.uint32
    for z in range(3):
        assert len(np.unique(labels[:, :, z])) == 1
    assert len(np.unique(labels)) == 3
    assert not connected_components_2d(boundary_map, 0.0).any()


def test_connected_components_split_by_line():
    """A boundary line cuts each slice in two; labels never repeat across z."""
    boundary_map = np.zeros((5, 5, 2))
    boundary_map[:, 2] = 1.0
    labels = connected_components_2d(boundary_map, 0.5)
    assert not labels[:, 2].any()
    first = set(np.unique(labels[:, :, 0])) - {0}
    second = set(np.unique(labels[:, :, 1])) - {0}
    assert len(first) == 2 and len(second) == 2
    assert not first & second


def test_connected_components_diagonal_is_not_connected():
    """Neighbourhoods are 4-connected."""
    boundary_map = np.ones((2, 2, 1))
    boundary_map[0, 0] = boundary_map[1, 1] = 0.0
    assert len(np.unique(connected_components_2d(boundary_map, 0.5))) == 3


def two_wells():
    """A 7 x 7 plane with wells at (1, 3) and (5, 3) and a ridge at x = 3."""
    plane = np.full((7, 7, 1), 0.4)
    plane[1, 3] = plane[5, 3] = 0.0
    plane[3] = 0.9
    return plane


def test_watershed_two_wells():
    """Two seeds separated by a ridge above t_high give two basins."""
    labels = watershed_2d(two_wells(), t_low=0.2, t_high=0.8, min_size=0)
    assert len(set(np.unique(labels)) - {0}) == 2
    assert not labels[3].any()
    assert labels[0, 0, 0] != labels[6, 0, 0]


def test_watershed_merges_small_basins():
    """Adjacent basins below min_size merge into one."""
    labels = watershed_2d(two_wells(), t_low=0.2, t_high=1.0, min_size=30)
    assert labels.all()
    assert len(np.unique(labels)) == 1


def test_watershed_isolated_small_basins_become_boundary():
    """A small basin touching no other basin is dropped."""
    labels = watershed_2d(two_wells(), t_low=0.2, t_high=0.8, min_size=100)
    assert not labels.any()


def test_watershed_rejects_bad_parameters():
    """Threshold order and sizes are validated."""
    with pytest.raises(ConfigurationError):
        watershed_2d(two_wells(), t_low=0.6, t_high=0.4)
    with pytest.raises(ConfigurationError):
        watershed_2d(two_wells(), t_low=0.2, t_high=0.8, min_size=-1)


def neighbours(x, y, shape):
    for nx, ny in ((x - 1, y), (x + 1, y), (x, y - 1), (x, y + 1)):
        if 0 <= nx < shape[0] and 0 <= ny < shape[1]:
            yield nx, ny


def flood_components(plane, t):
    """4-connected components of plane < t by breadth-first flooding."""
    labels = np.zeros(plane.shape, dtype=np.int64)
    count = 0
    for start in np.ndindex(plane.shape):
        if plane[start] >= t or labels[start]:
            continue
        count += 1
        labels[start] = count
        queue = deque([start])
        while queue:
            for nx, ny in neighbours(*queue.popleft(), plane.shape):
                if plane[nx, ny] < t and not labels[nx, ny]:
                    labels[nx, ny] = count
                    queue.append((nx, ny))
    return labels


def flood_basins(plane, t_low, t_high):
    """Priority flood from the seed components; a pixel joins the first basin to reach it."""
    labels = flood_components(plane, t_low)
    heap = [(plane[x, y], x, y) for x, y in zip(*(a.tolist() for a in np.nonzero(labels)))]
    heapq.heapify(heap)
    while heap:
        _, x, y = heapq.heappop(heap)
        for nx, ny in neighbours(x, y, plane.shape):
            if labels[nx, ny] or plane[nx, ny] >= t_high:
                continue
            labels[nx, ny] = labels[x, y]
            heapq.heappush(heap, (plane[nx, ny], nx, ny))
    return labels


def same_partition(a, b):
    """Equal boundary sets and a one-to-one match between the nonzero labels."""
    if not np.array_equal(a == 0, b == 0):
        return False
    pairs = set(zip(a[a > 0].tolist(), b[b > 0].tolist()))
    return len(pairs) == len(np.unique(a[a > 0])) == len(np.unique(b[b > 0]))


def test_connected_components_match_flood_fill():
    """Random maps segment into the flood-fill partition, with labels 1..N over the volume."""
    rng = np.random.default_rng(9)
    for _ in range(30):
        boundary_map = rng.random((12, 10, 3))
        t = float(rng.choice([0.3, 0.5, 0.7]))
        labels = connected_components_2d(boundary_map, t)
        for z in range(3):
            assert same_partition(labels[:, :, z], flood_components(boundary_map[:, :, z], t))
        used = np.unique(labels[labels > 0])
        assert used.tolist() == list(range(1, used.size + 1))
        assert sum(flood_components(boundary_map[:, :, z], t).max() for z in range(3)) == used.size


def test_watershed_matches_priority_flood():
    """Random maps give the basins of a reference priority flood from the same seeds."""
    rng = np.random.default_rng(10)
    for _ in range(30):
        boundary_map = rng.random((12, 12, 2))
        t_low = float(rng.choice([0.1, 0.2]))
        t_high = float(rng.choice([0.7, 0.9]))
        labels = watershed_2d(boundary_map, t_low=t_low, t_high=t_high, min_size=0)
        for z in range(2):
            assert same_partition(labels[:, :, z],
                                  flood_basins(boundary_map[:, :, z], t_low, t_high))


def test_segmenter_factory():
    """Back-ends are looked up by name."""
    factory = SegmenterFactory()
    assert factory.names() == ["cc", "ws"]
    assert factory.get_segmenter("cc") is factory.get_segmenter("cc")
    with pytest.raises(ConfigurationError, match="Unsupported"):
        factory.get_segmenter("graphcut")


def test_rand_pr_curve(column_map):
    """Points are scored per grid entry; undefined ones are set aside."""
    boundary_map, truth = column_map
    report = rand_pr_curve(boundary_map, truth, "cc",
                           [{"t": 0.0}, {"t": 0.95}, {"t": 0.5}])
    assert len(report.points) == 2
    assert [p.params for p in report.skipped] == [{"t": 0.0}]
    assert [p.scores.split for p in report.points] == sorted(p.scores.split for p in report.points)
    merged = next(p for p in report.points if p.params == {"t": 0.95})
    assert merged.scores.split == 1.0
    assert merged.scores.merge == pytest.approx((32 ** 2 + 24 ** 2) / 56 ** 2)

    csv = report.to_csv().splitlines()
    assert csv[0] == "t,split,merge,f"
    assert len(csv) == 4
    assert csv[-1] == "0,nan,nan,nan"


def test_rand_pr_curve_parallel_matches_serial(column_map):
    """Grid points scored concurrently give the same report."""
    boundary_map, truth = column_map
    grid = [{"t": k / 10} for k in range(11)]
    serial = rand_pr_curve(boundary_map, truth, "cc", grid)
    parallel = rand_pr_curve(boundary_map, truth, "cc", grid, workers=4)
    assert serial.to_csv() == parallel.to_csv()


def test_best_rand_f_first_wins_ties(column_map):
    """The earliest grid point of the highest f is returned."""
    boundary_map, truth = column_map
    params, scores = best_rand_f(boundary_map, truth, "cc", [{"t": 0.95}, {"t": 0.5}, {"t": 0.4}])
    assert params == {"t": 0.5}
    assert scores.f == 1.0


def test_best_rand_f_all_undefined(column_map):
    """A grid without a single defined point has no best."""
    boundary_map, truth = column_map
    with pytest.raises(UndefinedScoreError):
        best_rand_f(boundary_map, truth, "cc", [{"t": 0.0}])


def test_summarize_map(column_map):
    """Pixel error and best Rand F per back-end for a perfect map."""
    boundary_map, truth = column_map
    grids = {"cc": [{"t": 0.5}], "ws": [{"t_low": 0.3, "t_high": 0.8, "min_size": 0.0}]}
    summary, reports = summarize_map("column", boundary_map, truth, (truth == 0).astype(np.uint8),
                                     grids=grids)
    assert summary.pixel_error == 0.0
    assert summary.threshold == pytest.approx(0.11)
    assert set(reports) == {"cc", "ws"}
    assert summary.best_rand["cc"].scores.f == 1.0
    assert summary.best_rand["ws"].scores.f == 1.0
