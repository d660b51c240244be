"""Metrics, weekly aggregation, calendar helpers, and evaluation data IO.

Conventions: daily series aggregate to weekly by summing (covid, counts of
deaths) or averaging (flu, ILI-style levels). Normalized deviation divides
total absolute error by total absolute truth, so it is scale-invariant.
"""

from __future__ import annotations

import csv
import datetime
import logging
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .rng import stream

logger = logging.getLogger(__name__)

DISEASES = ("covid", "flu")


def weekly_aggregate(daily, disease: str) -> np.ndarray:
    """Collapse a daily series into whole weeks; a trailing partial week is
    dropped (and logged), never extrapolated."""
    if disease not in DISEASES:
        raise ValueError(f"unknown disease {disease!r}")
    daily = np.asarray(daily, dtype=np.float64)
    if daily.ndim != 1 or daily.size == 0:
        raise ValueError("need a non-empty 1-D daily series")
    weeks, extra = divmod(daily.size, 7)
    if extra:
        logger.warning("dropping trailing partial week (%d days)", extra)
    if weeks == 0:
        raise ValueError("series shorter than one week")
    blocks = daily[:weeks * 7].reshape(weeks, 7)
    return blocks.sum(axis=1) if disease == "covid" else blocks.mean(axis=1)


@dataclass
class MetricReport:
    nd: float
    rmse: float
    mae: float
    n_pairs: int

    def rows(self, region: str) -> list:
        return [(region, "nd", self.nd), (region, "rmse", self.rmse),
                (region, "mae", self.mae)]


def compute_metrics(predictions, truth, rmse_no_sqrt: bool = False) -> MetricReport:
    """Normalized deviation, root-mean-square error, and mean absolute error
    over a flat collection of (prediction, truth) pairs.

    rmse_no_sqrt reports the raw mean of squared errors under the rmse slot,
    for comparison against results that used the unrooted form.
    """
    predictions = np.asarray(predictions, dtype=np.float64).ravel()
    truth = np.asarray(truth, dtype=np.float64).ravel()
    if predictions.shape != truth.shape:
        raise ValueError("prediction and truth counts differ")
    if predictions.size == 0:
        raise ValueError("no pairs to score")
    err = predictions - truth
    abs_truth_total = float(np.abs(truth).sum())
    if abs_truth_total == 0.0:
        logger.warning("all-zero truth: normalized deviation undefined")
        nd = math.nan
    else:
        nd = float(np.abs(err).sum() / abs_truth_total)
    mae = float(np.abs(err).mean())
    mse = float((err ** 2).mean())
    rmse = mse if rmse_no_sqrt else math.sqrt(mse)
    return MetricReport(nd=nd, rmse=rmse, mae=mae, n_pairs=predictions.size)


def epiweek(day: datetime.date) -> int:
    """Epidemic-week label YYYYWW for the Sunday-to-Saturday week of `day`.

    A week belongs to the year holding most of its days, which is the year
    of its Wednesday; week numbers count Wednesdays within that year.
    """
    sunday = day - datetime.timedelta(days=(day.weekday() + 1) % 7)
    wednesday = sunday + datetime.timedelta(days=3)
    return wednesday.year * 100 + (wednesday.timetuple().tm_yday + 6) // 7


def add_observation_noise(target, noise_factor: float, seed: int) -> np.ndarray:
    """Corrupt a series with gaussian noise scaled to its own spread,
    clamped at zero (counts cannot go negative)."""
    if noise_factor < 0:
        raise ValueError("noise factor must be non-negative")
    target = np.asarray(target, dtype=np.float64)
    scale = noise_factor * float(target.std())
    noise = stream(seed, "obs-noise").normal(0.0, 1.0, size=target.shape)
    return np.maximum(0.0, target + scale * noise)


def normalize_features(features: np.ndarray):
    """Z-score each column; returns (normalized, mean, std).

    Statistics come from the given window only, so normalizing a training
    window never peeks at later data. Constant columns pass through.
    """
    features = np.asarray(features, dtype=np.float64)
    mean = features.mean(axis=0)
    std = features.std(axis=0)
    std = np.where(std < 1e-8, 1.0, std)
    return (features - mean) / std, mean, std


# ---------------------------------------------------------------------------
# CSV interfaces
# ---------------------------------------------------------------------------


def _parse_date(text: str, path, line_no: int) -> datetime.date:
    try:
        return datetime.date.fromisoformat(text)
    except ValueError as exc:
        raise ValueError(f"{path}:{line_no}: bad date {text!r}") from exc


def load_target_csv(path) -> dict:
    """`date,region,value` daily rows -> {region: (start_date, values)}.

    Rows may arrive unsorted; days must be consecutive once sorted.
    """
    by_region: dict = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["date", "region", "value"]:
            raise ValueError(f"{path}: expected header date,region,value")
        for line_no, row in enumerate(reader, start=2):
            if len(row) != 3:
                raise ValueError(f"{path}:{line_no}: expected 3 columns")
            day = _parse_date(row[0], path, line_no)
            try:
                value = float(row[2])
            except ValueError as exc:
                raise ValueError(f"{path}:{line_no}: bad value {row[2]!r}") from exc
            by_region.setdefault(row[1], []).append((day, value))
    out = {}
    for region, rows in by_region.items():
        rows.sort()
        days = [d for d, _ in rows]
        for a, b in zip(days, days[1:]):
            if (b - a).days != 1:
                raise ValueError(
                    f"{path}: region {region!r} has a gap between {a} and {b}")
        out[region] = (days[0], np.array([v for _, v in rows]))
    return out


def write_target_csv(path, data: dict) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["date", "region", "value"])
        for region in sorted(data):
            start, values = data[region]
            for i, v in enumerate(values):
                writer.writerow([(start + datetime.timedelta(days=i)).isoformat(),
                                 region, repr(float(v))])


def load_feature_csv(path) -> dict:
    """Long-format `date,region,feature_name,value` rows ->
    {region: (start_date, feature_names, matrix)}; every (day, feature)
    cell must be present exactly once."""
    cells: dict = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["date", "region", "feature_name", "value"]:
            raise ValueError(
                f"{path}: expected header date,region,feature_name,value")
        for line_no, row in enumerate(reader, start=2):
            if len(row) != 4:
                raise ValueError(f"{path}:{line_no}: expected 4 columns")
            day = _parse_date(row[0], path, line_no)
            key = (row[1], day, row[2])
            if key in cells:
                raise ValueError(f"{path}:{line_no}: duplicate cell {key}")
            try:
                cells[key] = float(row[3])
            except ValueError as exc:
                raise ValueError(f"{path}:{line_no}: bad value {row[3]!r}") from exc
    regions = sorted({r for r, _, _ in cells})
    out = {}
    for region in regions:
        days = sorted({d for r, d, _ in cells if r == region})
        names = sorted({f for r, _, f in cells if r == region})
        for a, b in zip(days, days[1:]):
            if (b - a).days != 1:
                raise ValueError(
                    f"{path}: region {region!r} has a gap between {a} and {b}")
        matrix = np.empty((len(days), len(names)))
        for i, day in enumerate(days):
            for j, name in enumerate(names):
                if (region, day, name) not in cells:
                    raise ValueError(
                        f"{path}: region {region!r} missing {name!r} on {day}")
                matrix[i, j] = cells[(region, day, name)]
        out[region] = (days[0], names, matrix)
    return out


def write_feature_csv(path, data: dict) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["date", "region", "feature_name", "value"])
        for region in sorted(data):
            start, names, matrix = data[region]
            for i in range(matrix.shape[0]):
                day = (start + datetime.timedelta(days=i)).isoformat()
                for j, name in enumerate(names):
                    writer.writerow([day, region, name, repr(float(matrix[i, j]))])


def write_forecast_csv(path, rows: Sequence) -> None:
    """Rows of (region, anchor_week, horizon_weeks, prediction)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["region", "anchor_week", "horizon_weeks", "prediction"])
        for region, anchor, horizon, pred in rows:
            writer.writerow([region, anchor, horizon, repr(float(pred))])


def load_forecast_csv(path) -> list:
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["region", "anchor_week", "horizon_weeks", "prediction"]:
            raise ValueError(f"{path}: unexpected forecast header {header}")
        for row in reader:
            rows.append((row[0], int(row[1]), int(row[2]), float(row[3])))
    return rows


def write_metrics_csv(path, rows: Sequence) -> None:
    """Rows of (region, metric, value)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["region", "metric", "value"])
        for region, metric, value in rows:
            writer.writerow([region, metric, repr(float(value))])


def load_metrics_csv(path) -> list:
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["region", "metric", "value"]:
            raise ValueError(f"{path}: unexpected metrics header {header}")
        for row in reader:
            rows.append((row[0], row[1], float(row[2])))
    return rows
