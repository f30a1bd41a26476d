"""Joint search for the minimal (history length, feature count) pair.

For every grid size n and ranking prefix length k, the ridge forecaster
is trained on the n most recent pre-test rows with the top-k features
and scored on the fixed test block. A configuration is feasible when
its nMAE stays within (1 + tolerance) of the full-pool, all-features
reference; pairs with n < k+1 are excluded as ill-posed. The lake's
minimal configuration is the lexicographically smallest feasible pair
(n first, then k), falling back to the full configuration when nothing
smaller qualifies, so every lake gets a well-defined answer.

nMAE values are stored per (n, k) independent of the tolerance, so a
grid can be re-thresholded at a new tolerance without any refitting.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .dataset import SplitSeries
from .errors import EvaluationError
from .evaluation import DEFAULT_TOLERANCE, SizeGridSpec, backward_eval
from .imputation import CompletedMatrix
from .models import DEFAULT_RIDGE_PENALTY
from .selection import FeatureRanking


@dataclass
class FeasibilityGrid:
    """Test nMAE per (n, k) plus the acceptance threshold."""

    lake_id: int
    n_grid: list[int]
    p: int
    n_pre: int
    feature_order: list[str]
    nmae: dict[tuple[int, int], float]
    excluded: set[tuple[int, int]]
    full_nmae: float
    tolerance: float

    @property
    def tau(self) -> float:
        return (1.0 + self.tolerance) * self.full_nmae

    def is_feasible(self, n: int, k: int) -> bool:
        return (n, k) in self.nmae and self.nmae[(n, k)] <= self.tau

    def feasible_pairs(self) -> list[tuple[int, int]]:
        tau = self.tau
        return sorted(pair for pair, value in self.nmae.items() if value <= tau)

    def rethreshold(self, tolerance: float) -> "FeasibilityGrid":
        """Same evaluations, new tolerance; no refitting happens."""
        if tolerance <= 0:
            raise EvaluationError("tolerance must be positive")
        return replace(self, tolerance=tolerance)


@dataclass(frozen=True)
class MinimalConfig:
    """A lake's minimal sufficient configuration."""

    lake_id: int
    n_hat: int
    k_hat: int
    selected_features: list[str]
    fallback: bool


@dataclass(frozen=True)
class JointSummary:
    median_n: float
    iqr_n: float
    median_k: float
    iqr_k: float
    feature_frequency: dict[str, float]
    fallback_count: int
    n_lakes: int


def feasibility_grid(
    split: SplitSeries,
    completed: CompletedMatrix,
    ranking: FeatureRanking,
    grid_spec: SizeGridSpec = SizeGridSpec(),
    tolerance: float = DEFAULT_TOLERANCE,
    penalty: float = DEFAULT_RIDGE_PENALTY,
) -> FeasibilityGrid:
    """Evaluate every admissible (n, k) cell of the grid."""
    if tolerance <= 0:
        raise EvaluationError("tolerance must be positive")
    p = len(completed.feature_schema)
    order = ranking.order
    if len(order) != p:
        raise EvaluationError("ranking does not cover the feature schema")
    n_grid = grid_spec.resolve(split.n_pre, p)

    full = backward_eval(split, completed, split.n_pre, order, penalty).nmae

    nmae: dict[tuple[int, int], float] = {}
    excluded: set[tuple[int, int]] = set()
    for n in n_grid:
        for k in range(1, p + 1):
            if n < k + 1:
                excluded.add((n, k))
                continue
            if n == split.n_pre and k == p:
                nmae[(n, k)] = full
                continue
            nmae[(n, k)] = backward_eval(split, completed, n, order[:k], penalty).nmae

    return FeasibilityGrid(
        lake_id=split.pre.lake_id,
        n_grid=n_grid,
        p=p,
        n_pre=split.n_pre,
        feature_order=list(order),
        nmae=nmae,
        excluded=excluded,
        full_nmae=full,
        tolerance=tolerance,
    )


def minimal_config(grid: FeasibilityGrid, lake_id: int | None = None) -> MinimalConfig:
    """Lexicographic minimum of the feasible set (n first, then k).

    An empty feasible set falls back to the full configuration
    (N_pre, p), flagged, so the result is total.
    """
    if lake_id is None:
        lake_id = grid.lake_id
    tau = grid.tau
    for n in sorted(grid.n_grid):
        for k in range(1, grid.p + 1):
            value = grid.nmae.get((n, k))
            if value is not None and value <= tau:
                return MinimalConfig(
                    lake_id=lake_id,
                    n_hat=n,
                    k_hat=k,
                    selected_features=grid.feature_order[:k],
                    fallback=False,
                )
    return MinimalConfig(
        lake_id=lake_id,
        n_hat=grid.n_pre,
        k_hat=grid.p,
        selected_features=list(grid.feature_order),
        fallback=True,
    )


def aggregate_configs(
    configs: Sequence[MinimalConfig], exclude_fallback: bool = False
) -> JointSummary:
    """Median/IQR of the per-lake minima plus lone-predictor frequencies.

    Fallback lakes enter the medians at their full configuration unless
    excluded. IQR is Q3 - Q1 with linearly interpolated quantiles.
    Frequencies are tabulated over lakes whose minimum uses a single
    predictor and sum to 1 whenever any such lake exists.
    """
    kept = [c for c in configs if not (exclude_fallback and c.fallback)]
    if not kept:
        raise EvaluationError("no configurations to aggregate")

    n_values = np.array([c.n_hat for c in kept], dtype=float)
    k_values = np.array([c.k_hat for c in kept], dtype=float)

    def iqr(values: np.ndarray) -> float:
        q1, q3 = np.percentile(values, [25, 75])
        return float(q3 - q1)

    single = [c for c in kept if c.k_hat == 1]
    frequency: dict[str, float] = {}
    for config in single:
        name = config.selected_features[0]
        frequency[name] = frequency.get(name, 0.0) + 1.0
    frequency = {name: count / len(single) for name, count in sorted(frequency.items())}

    return JointSummary(
        median_n=float(np.median(n_values)),
        iqr_n=iqr(n_values),
        median_k=float(np.median(k_values)),
        iqr_k=iqr(k_values),
        feature_frequency=frequency,
        fallback_count=sum(1 for c in kept if c.fallback),
        n_lakes=len(kept),
    )
