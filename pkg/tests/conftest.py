"""Shared fixture builders for the test suite."""

from __future__ import annotations

from datetime import date, timedelta

import numpy as np
import pytest

from limnoplan.dataset import LakeSeries, Record, covariate_matrix
from limnoplan.imputation import CompletedMatrix, initialize_fill


def make_record(lake_id, day, sdd, covs, name="Testpond", flag=False):
    return Record(
        lake_id=lake_id,
        lake_name=name,
        timestamp=day,
        sdd=sdd,
        covariates=dict(covs),
        sdd_to_bottom=flag,
    )


def series_from_arrays(
    lake_id: int,
    sdd: np.ndarray,
    X: np.ndarray,
    schema: list[str],
    start: date = date(2000, 1, 1),
    step_days: int = 14,
    name: str = "Testpond",
) -> LakeSeries:
    """LakeSeries from plain arrays; NaN cells become missing entries."""
    records = []
    for i in range(len(sdd)):
        covs = {
            schema[j]: (None if np.isnan(X[i, j]) else float(X[i, j]))
            for j in range(len(schema))
        }
        value = None if np.isnan(sdd[i]) else float(sdd[i])
        records.append(
            make_record(lake_id, start + timedelta(days=i * step_days), value, covs, name=name)
        )
    return LakeSeries(lake_id=lake_id, records=records, feature_schema=list(schema))


def completed_from_series(series: LakeSeries) -> CompletedMatrix:
    """Completion of a series that must already be gap-free."""
    matrix = covariate_matrix(series)
    assert not np.isnan(matrix).any(), "fixture expected to be gap-free"
    return initialize_fill(matrix, list(series.feature_schema))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
