"""
Boundary-map scoring for EM Boundary Net.

This module implements:
1. Pixel error, with a line search over the binarization threshold
2. Rand merge/split scores of a proposal segmentation against the truth
3. Precision-recall sweeps over a segmentation back-end's parameter grid
4. Per-map summaries combining all of the above
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.sparse import coo_matrix

from ..config.settings import Settings, get_settings
from ..models.errors import ShapeError, UndefinedScoreError
from ..models.evaluation import CurvePoint, CurveReport, MapSummary, RandScores
from ..segmentation.segmenter_factory import SegmenterFactory

logger = logging.getLogger(__name__)


def _check_dims(a: np.ndarray, b: np.ndarray, what: str) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{what} dims differ", a.shape, b.shape)


def pixel_error(boundary_map: np.ndarray, labels: np.ndarray, t: float) -> float:
    """
    Fraction of pixels where (map >= t) disagrees with the boundary label.

    Args:
        boundary_map: Boundary probabilities
        labels: Binary boundary labels
        t: Threshold

    Returns:
        Error in [0, 1]
    """
    boundary_map = np.asarray(boundary_map)
    labels = np.asarray(labels)
    _check_dims(boundary_map, labels, "map and labels")
    return float(np.count_nonzero((boundary_map >= t) != (labels != 0)) / labels.size)


def threshold_grid(step: float = 0.01) -> np.ndarray:
    """Thresholds 0, step, ..., 1 (exact k / n values)."""
    steps = int(round(1.0 / step))
    return np.arange(steps + 1) / steps


def best_pixel_error(boundary_map: np.ndarray, labels: np.ndarray,
                     step: Optional[float] = None) -> Tuple[float, float]:
    """
    Line search for the threshold minimizing pixel error.

    Args:
        boundary_map: Boundary probabilities
        labels: Binary boundary labels
        step: Grid resolution (settings.threshold_step if not provided)

    Returns:
        Tuple of (threshold, error); the lowest threshold wins ties
    """
    step = step or get_settings().threshold_step
    best_t, best_error = 0.0, np.inf
    for t in threshold_grid(step):
        error = pixel_error(boundary_map, labels, t)
        if error < best_error:
            best_t, best_error = float(t), error
    return best_t, best_error


def contingency(proposal: np.ndarray, truth: np.ndarray) -> coo_matrix:
    """
    Overlap counts n_ij between proposal segment i and truth segment j.

    Pixels labelled 0 in either volume are not counted.
    """
    proposal = np.asarray(proposal).ravel()
    truth = np.asarray(truth).ravel()
    counted = (proposal != 0) & (truth != 0)
    p = proposal[counted]
    t = truth[counted]
    _, p_index = np.unique(p, return_inverse=True)
    _, t_index = np.unique(t, return_inverse=True)
    shape = (int(p_index.max()) + 1 if p.size else 0, int(t_index.max()) + 1 if t.size else 0)
    table = coo_matrix((np.ones(p.size, dtype=np.int64), (p_index, t_index)), shape=shape)
    table.sum_duplicates()
    return table


def rand_scores(proposal: np.ndarray, truth: np.ndarray) -> RandScores:
    """
    Rand merge and split scores.

    merge = sum n_ij^2 / sum_i (sum_j n_ij)^2
    split = sum n_ij^2 / sum_j (sum_i n_ij)^2

    Args:
        proposal: Proposed segmentation
        truth: Ground-truth segmentation of equal dims

    Returns:
        RandScores

    Raises:
        UndefinedScoreError: If no pixel is labelled in both volumes
    """
    _check_dims(np.asarray(proposal), np.asarray(truth), "proposal and truth")
    table = contingency(proposal, truth)
    if table.nnz == 0:
        raise UndefinedScoreError("no pixel is non-boundary in both segmentations")
    counts = table.data.astype(np.int64)
    overlap = int(np.sum(counts * counts))
    rows = np.asarray(table.sum(axis=1), dtype=np.int64).ravel()
    cols = np.asarray(table.sum(axis=0), dtype=np.int64).ravel()
    merge = overlap / int(np.sum(rows * rows))
    split = overlap / int(np.sum(cols * cols))
    return RandScores.from_scores(merge, split)


def _score_point(segmenter, boundary_map: np.ndarray, truth: np.ndarray,
                 params: Dict[str, float]) -> CurvePoint:
    proposal = segmenter.segment(boundary_map, **params)
    try:
        return CurvePoint(params=params, scores=rand_scores(proposal, truth))
    except UndefinedScoreError as e:
        logger.warning(f"Skipping {segmenter.name} point {params}: {e}")
        return CurvePoint(params=params, note=str(e))


def rand_pr_curve(boundary_map: np.ndarray, truth: np.ndarray, algo: str,
                  param_grid: Optional[Sequence[Dict[str, float]]] = None,
                  workers: int = 1, settings: Optional[Settings] = None) -> CurveReport:
    """
    Segment and score once per grid entry.

    Args:
        boundary_map: Boundary probabilities
        truth: Ground-truth segmentation of equal dims
        algo: Segmentation back-end name ("cc" or "ws")
        param_grid: Parameter settings (the back-end's default grid if not provided)
        workers: Grid points evaluated concurrently
        settings: Application settings

    Returns:
        CurveReport with points sorted by split score; undefined points are
        listed separately
    """
    segmenter = SegmenterFactory(settings).get_segmenter(algo)
    grid = list(param_grid) if param_grid is not None else segmenter.default_grid()
    if not grid:
        raise ValueError("parameter grid is empty")
    boundary_map = np.asarray(boundary_map)
    _check_dims(boundary_map, np.asarray(truth), "map and truth")

    if workers > 1 and len(grid) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            points = list(pool.map(lambda p: _score_point(segmenter, boundary_map, truth, p), grid))
    else:
        points = [_score_point(segmenter, boundary_map, truth, p) for p in grid]

    scored = [p for p in points if p.scores is not None]
    return CurveReport(
        algo=algo,
        points=sorted(scored, key=lambda p: p.scores.split),
        skipped=[p for p in points if p.scores is None],
        ordered=scored,
    )


def best_rand_f(boundary_map: np.ndarray, truth: np.ndarray, algo: str,
                param_grid: Optional[Sequence[Dict[str, float]]] = None,
                workers: int = 1) -> Tuple[Dict[str, float], RandScores]:
    """
    Grid point with the highest Rand F-score.

    Returns:
        Tuple of (params, scores); the first grid entry wins ties

    Raises:
        UndefinedScoreError: If every grid point is undefined
    """
    report = rand_pr_curve(boundary_map, truth, algo, param_grid, workers=workers)
    best = report.best()
    if best is None:
        raise UndefinedScoreError(f"every {algo} grid point has undefined Rand scores")
    return best.params, best.scores


def summarize_map(name: str, boundary_map: np.ndarray, truth: np.ndarray,
                  boundary_labels: np.ndarray, algos: Sequence[str] = ("cc", "ws"),
                  grids: Optional[Dict[str, Sequence[Dict[str, float]]]] = None,
                  workers: int = 1) -> Tuple[MapSummary, Dict[str, CurveReport]]:
    """
    Best pixel error and best Rand F per back-end for one map.

    Returns:
        Tuple of (summary, curve report per back-end)
    """
    threshold, error = best_pixel_error(boundary_map, boundary_labels)
    summary = MapSummary(name=name, threshold=threshold, pixel_error=error)
    reports = {}
    for algo in algos:
        report = rand_pr_curve(boundary_map, truth, algo, (grids or {}).get(algo), workers=workers)
        reports[algo] = report
        best = report.best()
        if best is not None:
            summary.best_rand[algo] = best
    logger.info(f"{name}: pixel error {error:.4f} at t={threshold:.2f}")
    return summary, reports
