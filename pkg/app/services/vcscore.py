"""
View-selection and view-combination scoring.

The pairwise score of views i and j sums a piecewise Gaussian of the baseline
angle over the tracks both views observe; a combination's score is the mean
pairwise score over its unordered pairs. Combinations are ranked by score and
split into favorable / normal / unfavorable terciles.
"""

from __future__ import annotations

import itertools
import math
from typing import Sequence

import numpy as np
from loguru import logger

from app.core.config import settings
from app.core.errors import CombinationLimitError, DegenerateTrackError, UsageError
from app.geometry.camera import Camera
from app.geometry.tracks import TrackSet
from app.schemas.vcscore import CombinationRanking, GaussianParams, RankedCombination

DEGENERATE_DISTANCE = 1e-9
GROUPS = ("favorable", "normal", "unfavorable")


def _center(cam_or_center) -> np.ndarray:
    if isinstance(cam_or_center, Camera):
        return cam_or_center.center
    return np.asarray(cam_or_center, dtype=np.float64)


def baseline_angles(c_i, c_j, points: np.ndarray) -> np.ndarray:
    """Angles in degrees between the (normalized) directions from each point to both centers."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    a = _center(c_i) - points
    b = _center(c_j) - points
    na = np.linalg.norm(a, axis=1)
    nb = np.linalg.norm(b, axis=1)
    if np.any(na < DEGENERATE_DISTANCE) or np.any(nb < DEGENERATE_DISTANCE):
        raise DegenerateTrackError("degenerate track: point coincides with a camera center")
    cos = np.einsum("ij,ij->i", a, b) / (na * nb)
    return np.degrees(np.arccos(np.clip(cos, -1.0, 1.0)))


def baseline_angle(c_i, c_j, p) -> float:
    return float(baseline_angles(c_i, c_j, np.asarray(p).reshape(1, 3))[0])


def piecewise_gaussian(theta, g: GaussianParams = GaussianParams()) -> np.ndarray:
    """Peaks at theta0 with spread sigma1 below it and sigma2 above it."""
    theta = np.asarray(theta, dtype=np.float64)
    sigma = np.where(theta <= g.theta0, g.sigma1, g.sigma2)
    return np.exp(-((theta - g.theta0) ** 2) / (2.0 * sigma ** 2))


def pairwise_score(i: int, j: int, cams: Sequence[Camera], tracks: TrackSet,
                   g: GaussianParams = GaussianParams()) -> float:
    points = tracks.common(i, j)
    if len(points) == 0:
        return 0.0
    return float(piecewise_gaussian(baseline_angles(cams[i], cams[j], points), g).sum())


def pairwise_matrix(cams: Sequence[Camera], tracks: TrackSet, g: GaussianParams = GaussianParams()) -> np.ndarray:
    """Symmetric (n, n) matrix of pairwise scores; the diagonal is unused (0)."""
    n = len(cams)
    tracks.validate_views(n)
    scores = np.zeros((n, n))
    for i, j in itertools.combinations(range(n), 2):
        scores[i, j] = scores[j, i] = pairwise_score(i, j, cams, tracks, g)
    return scores


def vc_score(views: Sequence[int], cams: Sequence[Camera] | None = None, tracks: TrackSet | None = None,
             g: GaussianParams = GaussianParams(), matrix: np.ndarray | None = None) -> float:
    """Mean pairwise score over all unordered pairs of `views`."""
    views = sorted(set(int(v) for v in views))
    if len(views) < 2:
        raise UsageError(f"a view combination needs at least 2 views, got {len(views)}")
    if matrix is None:
        if cams is None or tracks is None:
            raise UsageError("vc_score needs cameras and tracks or a pairwise matrix")
        pairs = [pairwise_score(i, j, cams, tracks, g) for i, j in itertools.combinations(views, 2)]
    else:
        pairs = [matrix[i, j] for i, j in itertools.combinations(views, 2)]
    return float(np.mean(pairs))


def tercile_sizes(n: int) -> list[int]:
    """Sizes of three contiguous groups covering n items; earlier groups take the remainder."""
    return [n // 3 + (1 if i < n % 3 else 0) for i in range(3)]


def _candidates(view_ids: list[int], k: int, sample: int | None, rng: np.random.Generator) -> tuple[list[tuple[int, ...]], bool]:
    total = math.comb(len(view_ids), k)
    if total <= settings.MAX_COMBINATIONS and (sample is None or sample >= total):
        return list(itertools.combinations(view_ids, k)), False
    if sample is None:
        raise CombinationLimitError(
            f"C({len(view_ids)},{k}) = {total} combinations exceeds the limit of "
            f"{settings.MAX_COMBINATIONS}; request sampling mode (sample=S)"
        )
    chosen: set[tuple[int, ...]] = set()
    sample = min(sample, total)
    while len(chosen) < sample:
        pick = rng.choice(len(view_ids), size=k, replace=False)
        chosen.add(tuple(sorted(view_ids[p] for p in pick)))
    return sorted(chosen), True


def _rank(scored: list[tuple[tuple[int, ...], float]], k: int, sampled: bool) -> CombinationRanking:
    scored.sort(key=lambda item: (-item[1], item[0]))
    labels: list[str] = []
    for label, size in zip(GROUPS, tercile_sizes(len(scored))):
        labels += [label] * size
    return CombinationRanking(
        k=k,
        sampled=sampled,
        combinations=[RankedCombination(views=v, score=s, group=lab) for (v, s), lab in zip(scored, labels)],
    )


def rank_combinations(view_ids: Sequence[int], k: int, cams: Sequence[Camera], tracks: TrackSet,
                      g: GaussianParams = GaussianParams(), sample: int | None = None,
                      seed: int | None = None) -> CombinationRanking:
    """
    Score every k-combination of `view_ids`, sort descending (ties by
    lexicographic view ids) and label terciles.

    - Raises CombinationLimitError when C(n, k) exceeds settings.MAX_COMBINATIONS
      unless `sample` requests S random distinct combinations instead.
    """
    view_ids = sorted(set(int(v) for v in view_ids))
    if not 1 <= k <= len(view_ids):
        raise UsageError(f"k={k} must lie in [1, {len(view_ids)}]")
    if k < 2:
        raise UsageError("view combinations need k >= 2")
    rng = np.random.default_rng(settings.SEED if seed is None else seed)
    combos, sampled = _candidates(view_ids, k, sample, rng)
    matrix = pairwise_matrix(cams, tracks, g)
    ranking = _rank([(c, vc_score(c, g=g, matrix=matrix)) for c in combos], k, sampled)
    logger.info(f"ranked {len(ranking.combinations)} combinations of {k} views"
                f"{' (sampled)' if sampled else ''}; best {ranking.best.views} = {ranking.best.score:.4f}")
    return ranking


def rank_across_scenes(scenes: Sequence[tuple[Sequence[Camera], TrackSet]], k: int,
                       g: GaussianParams = GaussianParams()) -> CombinationRanking:
    """Rank combinations by their VC score averaged over scenes sharing one camera layout."""
    if not scenes:
        raise UsageError("need at least one scene to rank")
    n = len(scenes[0][0])
    if any(len(cams) != n for cams, _ in scenes):
        raise UsageError("all scenes must share the same number of cameras")
    if not 2 <= k <= n:
        raise UsageError(f"k={k} must lie in [2, {n}]")
    combos, sampled = _candidates(list(range(n)), k, None, np.random.default_rng(settings.SEED))
    matrices = [pairwise_matrix(cams, tracks, g) for cams, tracks in scenes]
    scored = [(c, float(np.mean([vc_score(c, g=g, matrix=m) for m in matrices]))) for c in combos]
    return _rank(scored, k, sampled)


def best_sources(target: int, candidates: Sequence[int], k: int, matrix: np.ndarray) -> list[int]:
    """The k candidates with the highest pairwise score to `target`; ties go to lower ids."""
    ordered = sorted(candidates, key=lambda v: (-matrix[target, v], v))
    return sorted(ordered[:k])
