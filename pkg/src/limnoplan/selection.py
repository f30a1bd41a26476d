"""Feature ranking and greedy forward selection.

A regression forest fit on the training pool supplies impurity-based
importance scores; sorting them descending gives the ranking. Forward
selection then refits the ridge forecaster on growing prefixes of that
ranking and keeps the shortest prefix whose test error stays within
tolerance of the all-features fit. Per-lake rankings can be averaged
into one cross-lake ranking.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

from .dataset import SplitSeries, sdd_values
from .errors import SchemaError
from .evaluation import DEFAULT_TOLERANCE, backward_eval
from .imputation import CompletedMatrix
from .models import DEFAULT_RIDGE_PENALTY, ForestConfig, fit_forest, mdi_importances


@dataclass
class FeatureRanking:
    """Importance scores and the descending name order they induce."""

    scores: dict[str, float]
    order: list[str]


@dataclass
class SelectionResult:
    k_star: int
    subset: list[str]
    nmae_by_k: dict[int, float]
    full_nmae: float


def _sorted_order(scores: dict[str, float]) -> list[str]:
    # Descending score, ties broken by name.
    return [name for name, _ in sorted(scores.items(), key=lambda kv: (-kv[1], kv[0]))]


def minimal_feature_count(
    nmae_by_k: dict[int, float], full_nmae: float, tolerance: float = DEFAULT_TOLERANCE
) -> int:
    """Smallest prefix length within (1+tolerance) of the all-features error."""
    threshold = (1.0 + tolerance) * full_nmae
    return next(k for k in sorted(nmae_by_k) if nmae_by_k[k] <= threshold)


def rank_features(
    split: SplitSeries,
    completed: CompletedMatrix,
    forest_config: ForestConfig = ForestConfig(),
) -> FeatureRanking:
    """Forest-importance ranking fit on all pre-test rows."""
    X = completed.values[split.pre_rows]
    y = sdd_values(split.pre)
    model = fit_forest(X, y, forest_config, feature_schema=completed.feature_schema)
    importances = mdi_importances(model)
    scores = {name: float(s) for name, s in zip(completed.feature_schema, importances)}
    return FeatureRanking(scores=scores, order=_sorted_order(scores))


def forward_selection(
    split: SplitSeries,
    completed: CompletedMatrix,
    ranking: FeatureRanking,
    tolerance: float = DEFAULT_TOLERANCE,
    penalty: float = DEFAULT_RIDGE_PENALTY,
) -> SelectionResult:
    """Shortest ranking prefix within tolerance of the full-feature fit.

    Every prefix trains on the whole pre-test pool; only the feature
    count varies here.
    """
    schema = set(completed.feature_schema)
    if set(ranking.order) != schema:
        raise SchemaError("ranking does not cover the completed matrix's schema")

    p = len(ranking.order)
    nmae_by_k = {
        k: backward_eval(split, completed, split.n_pre, ranking.order[:k], penalty).nmae
        for k in range(1, p + 1)
    }
    full_nmae = nmae_by_k[p]
    k_star = minimal_feature_count(nmae_by_k, full_nmae, tolerance)
    return SelectionResult(
        k_star=k_star,
        subset=ranking.order[:k_star],
        nmae_by_k=nmae_by_k,
        full_nmae=full_nmae,
    )


def aggregate_ranking(per_lake: Sequence[FeatureRanking]) -> FeatureRanking:
    """Feature-wise mean of per-lake scores, re-sorted.

    Each lake's scores are normalized to unit sum first (all-zero score
    vectors stay zero), so data-rich lakes cannot dominate the average.
    """
    if not per_lake:
        raise SchemaError("no rankings to aggregate")
    names = sorted(per_lake[0].scores)
    for ranking in per_lake[1:]:
        if sorted(ranking.scores) != names:
            raise SchemaError("rankings disagree on the feature schema")

    totals = dict.fromkeys(names, 0.0)
    for ranking in per_lake:
        weight = sum(ranking.scores.values())
        for name in names:
            totals[name] += ranking.scores[name] / weight if weight > 0 else 0.0
    scores = {name: totals[name] / len(per_lake) for name in names}
    return FeatureRanking(scores=scores, order=_sorted_order(scores))
