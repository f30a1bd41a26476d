"""Forecast metrics and the recent-history training protocol.

A held-out recent block stays fixed while training uses the `n` most
recent pre-test rows; sweeping n over a size grid yields a sample
curve whose reference point uses the full training pool. The minimal
sample count is the smallest grid size whose test error stays within
the configured tolerance of that reference.

Errors are normalized by the test block's mean target (nMAE) so lakes
of different baseline clarity are comparable.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .dataset import SplitSeries, covariate_matrix, sdd_values
from .errors import EvaluationError
from .imputation import CompletedMatrix
from .models import DEFAULT_RIDGE_PENALTY, RidgeModel, fit_ridge, predict_ridge

DEFAULT_TOLERANCE = 0.05


@dataclass(frozen=True)
class EvalMetrics:
    mae: float
    nmae: float
    r2: float
    n_test: int
    test_mean_sdd: float


@dataclass(frozen=True)
class SizeGridSpec:
    """Training-size grid: n_min..N_pre by stride, N_pre always included.

    n_min defaults to p+2 (one degree of freedom beyond the smallest
    legal full-feature fit).
    """

    n_min: int | None = None
    stride: int = 1

    def resolve(self, n_pre: int, n_features: int) -> list[int]:
        if self.stride < 1:
            raise EvaluationError("stride must be >= 1")
        lo = self.n_min if self.n_min is not None else n_features + 2
        lo = max(2, lo)
        if lo > n_pre:
            lo = n_pre
        sizes = list(range(lo, n_pre + 1, self.stride))
        if sizes[-1] != n_pre:
            sizes.append(n_pre)
        return sizes


@dataclass
class SampleCurve:
    grid: list[int]
    nmae_at: dict[int, float]
    reference_nmae: float
    n_star: int | None
    tolerance: float


def mae(y: np.ndarray, y_hat: np.ndarray) -> float:
    y = np.asarray(y, dtype=float)
    y_hat = np.asarray(y_hat, dtype=float)
    if y.shape != y_hat.shape or y.size == 0:
        raise EvaluationError(f"need equal nonzero lengths, got {y.shape} and {y_hat.shape}")
    return float(np.mean(np.abs(y - y_hat)))


def nmae(y: np.ndarray, y_hat: np.ndarray) -> float:
    y = np.asarray(y, dtype=float)
    denom = y.mean() if y.size else 0.0
    if denom <= 0:
        raise EvaluationError(f"nMAE normalizer (mean target) must be positive, got {denom}")
    return mae(y, y_hat) / float(denom)


def r_squared(y: np.ndarray, y_hat: np.ndarray) -> float:
    """1 - SSE/SST about the mean of y; negative on bad test fits."""
    y = np.asarray(y, dtype=float)
    y_hat = np.asarray(y_hat, dtype=float)
    if y.shape != y_hat.shape or y.size < 2:
        raise EvaluationError(f"need equal lengths >= 2, got {y.shape} and {y_hat.shape}")
    sst = float(np.sum((y - y.mean()) ** 2))
    if sst == 0:
        raise EvaluationError("target has zero variance; coefficient of determination undefined")
    sse = float(np.sum((y - y_hat) ** 2))
    return 1.0 - sse / sst


def score_predictions(y: np.ndarray, y_hat: np.ndarray) -> EvalMetrics:
    # r2 is NaN when the test block is degenerate (constant or single row).
    try:
        r2 = r_squared(y, y_hat)
    except EvaluationError:
        r2 = float("nan")
    return EvalMetrics(
        mae=mae(y, y_hat),
        nmae=nmae(y, y_hat),
        r2=r2,
        n_test=int(y.size),
        test_mean_sdd=float(y.mean()),
    )


def _feature_columns(schema: Sequence[str], features: Sequence[str]) -> list[int]:
    if not features:
        raise EvaluationError("feature subset is empty")
    missing = [f for f in features if f not in schema]
    if missing:
        raise EvaluationError(f"unknown feature(s): {', '.join(missing)}")
    return [schema.index(f) for f in features]


def fit_reference(
    split: SplitSeries,
    completed: CompletedMatrix,
    features: Sequence[str],
    n: int | None = None,
    penalty: float = DEFAULT_RIDGE_PENALTY,
) -> tuple[RidgeModel, np.ndarray, np.ndarray]:
    """Fit on the last n pre-test rows; also return that window's X, y."""
    cols = _feature_columns(completed.feature_schema, features)
    n_pre = split.n_pre
    if n is None:
        n = n_pre
    if not len(cols) + 1 <= n <= n_pre:
        raise EvaluationError(
            f"training size {n} outside [{len(cols) + 1}, {n_pre}] for {len(cols)} feature(s)"
        )
    X_pre = completed.values[split.pre_rows][:, cols]
    y_pre = sdd_values(split.pre)
    X_train, y_train = X_pre[-n:], y_pre[-n:]
    model = fit_ridge(X_train, y_train, penalty, feature_schema=features)
    return model, X_train, y_train


def backward_eval(
    split: SplitSeries,
    completed: CompletedMatrix,
    n: int,
    features: Sequence[str],
    penalty: float = DEFAULT_RIDGE_PENALTY,
) -> EvalMetrics:
    """Train on the n most recent pre-test rows, score the test block."""
    cols = _feature_columns(completed.feature_schema, features)
    model, _, _ = fit_reference(split, completed, features, n=n, penalty=penalty)
    X_test = completed.values[split.test_rows][:, cols]
    y_test = sdd_values(split.test)
    return score_predictions(y_test, predict_ridge(model, X_test))


def sample_curve(
    split: SplitSeries,
    completed: CompletedMatrix,
    grid_spec: SizeGridSpec = SizeGridSpec(),
    tolerance: float = DEFAULT_TOLERANCE,
    penalty: float = DEFAULT_RIDGE_PENALTY,
) -> SampleCurve:
    """Test nMAE over the size grid with the full feature set.

    The reference is the full-pool fit (n = N_pre, always on the grid);
    the minimal sample count is the smallest grid size within
    (1 + tolerance) of it.
    """
    if tolerance <= 0:
        raise EvaluationError("tolerance must be positive")
    p = len(completed.feature_schema)
    grid = grid_spec.resolve(split.n_pre, p)
    if grid[0] < p + 1:
        raise EvaluationError(
            f"grid starts at {grid[0]} but the full {p}-feature fit needs at least {p + 1} rows"
        )

    nmae_at = {
        n: backward_eval(split, completed, n, completed.feature_schema, penalty).nmae
        for n in grid
    }
    reference = nmae_at[split.n_pre]
    n_star = minimal_size(grid, nmae_at, reference, tolerance)
    return SampleCurve(
        grid=grid, nmae_at=nmae_at, reference_nmae=reference, n_star=n_star, tolerance=tolerance
    )


def minimal_size(
    grid: Sequence[int],
    nmae_at: dict[int, float],
    reference: float,
    tolerance: float = DEFAULT_TOLERANCE,
) -> int | None:
    """Smallest grid size whose nMAE is within (1+tolerance) of the reference."""
    threshold = (1.0 + tolerance) * reference
    for n in sorted(grid):
        if nmae_at[n] <= threshold:
            return n
    return None


def complete_case_eval(
    split: SplitSeries,
    n: int | None,
    features: Sequence[str],
    penalty: float = DEFAULT_RIDGE_PENALTY,
) -> EvalMetrics:
    """Deletion baseline: same protocol, but rows with any missing
    selected covariate are dropped instead of imputed.

    n counts the most recent *complete* pre-test rows used for
    training; None uses all of them.
    """
    k = len(features)
    X_pre_raw = covariate_matrix(split.pre)
    X_test_raw = covariate_matrix(split.test)
    cols = _feature_columns(split.pre.feature_schema, features)

    pre_ok = ~np.isnan(X_pre_raw[:, cols]).any(axis=1)
    test_ok = ~np.isnan(X_test_raw[:, cols]).any(axis=1)
    n_complete = int(pre_ok.sum())
    if n is None:
        n = n_complete
    if n > n_complete:
        raise EvaluationError(
            f"asked for {n} complete training rows, only {n_complete} remain after deletion"
        )
    if n < k + 1:
        raise EvaluationError(
            f"complete-case deletion leaves {n} training rows for {k} feature(s) (need >= {k + 1})"
        )
    if not test_ok.any():
        raise EvaluationError("complete-case deletion removed every test row")

    X_train = X_pre_raw[pre_ok][:, cols][-n:]
    y_train = sdd_values(split.pre)[pre_ok][-n:]
    model = fit_ridge(X_train, y_train, penalty, feature_schema=features)

    X_test = X_test_raw[test_ok][:, cols]
    y_test = sdd_values(split.test)[test_ok]
    return score_predictions(y_test, predict_ridge(model, X_test))
