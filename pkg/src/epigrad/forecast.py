"""Rolling real-time forecasting harness.

Each anchor gets a physically truncated copy of the data: calibration,
feature normalization, and simulation all see the window only, so future
observations cannot leak. After calibrating from scratch the simulator
rolls 28 days past the window and the last 28 days become the 1-4
week-ahead forecasts.

Covid targets are daily cumulative deaths (what calibration compares), so
forecast values are weekly sums of the differenced series; flu targets are
level-like and aggregate by weekly mean directly.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import autodiff as ad
from . import calibnet as cn
from .evaluation import epiweek, normalize_features, weekly_aggregate
from .simulator import run_simulation
from .training import (Episode, Scenario, TrainConfig, calibrate_direct,
                       calibrate_network, params_from_blocks, target_series)

logger = logging.getLogger(__name__)

HORIZON_DAYS = 28
HORIZON_WEEKS = 4
MIN_WINDOW_DAYS = 14


@dataclass
class Forecast:
    region: str
    anchor_week: int          # calendar label (or week index when undated)
    anchor_day: int           # training window length in days
    horizons: np.ndarray      # exactly 4 week-ahead point predictions

    def __post_init__(self):
        self.horizons = np.asarray(self.horizons, dtype=np.float64)
        if self.horizons.shape != (HORIZON_WEEKS,):
            raise ValueError("a forecast carries exactly 4 horizon values")


def to_incident(series) -> np.ndarray:
    """Cumulative daily series -> per-day increments (first day kept)."""
    series = np.asarray(series, dtype=np.float64)
    return np.diff(series, prepend=0.0)


def _weekly_forecast_values(daily: np.ndarray, disease: str) -> np.ndarray:
    return weekly_aggregate(daily, disease)


def anchor_label(episode: Episode, anchor_day: int) -> int:
    if episode.start_date is not None:
        import datetime
        last = episode.start_date + datetime.timedelta(days=anchor_day - 1)
        return epiweek(last)
    return anchor_day // 7


def real_time_forecast(episode: Episode, scenario: Scenario, mode: str,
                       anchors: Sequence[int], config: TrainConfig,
                       net_config: Optional[cn.CalibNetConfig] = None
                       ) -> list:
    """Calibrate-and-roll for each anchor window length (days).

    Anchors must sit on week boundaries; anchors outside the usable data
    range are skipped with a warning. Reporting runs in hard mode.
    """
    if mode not in ("c", "dc"):
        raise ValueError(f"unknown calibration mode {mode!r}")
    if net_config is None and mode == "dc":
        net_config = cn.CalibNetConfig.for_disease(
            episode.disease, input_dim=episode.features.shape[1])
    forecasts = []
    for anchor in anchors:
        if anchor % 7 != 0:
            raise ValueError(f"anchor {anchor} is not a whole number of weeks")
        if anchor < MIN_WINDOW_DAYS or anchor > episode.steps:
            logger.warning("anchor %d outside usable range [%d, %d]; skipped",
                           anchor, MIN_WINDOW_DAYS, episode.steps)
            continue
        window = episode.truncated(anchor)
        feats, _, _ = normalize_features(window.features)
        train_ep = Episode(feats, window.target, window.disease, window.name,
                           window.start_date)
        steps_total = anchor + HORIZON_DAYS

        if mode == "c":
            result = calibrate_direct(train_ep, scenario, config)
            theta = ad.constant(result.theta)
        else:
            result = calibrate_network(train_ep, scenario, config, net_config)
            theta = ad.constant(
                cn.forward(feats, steps_total // 7, net_config,
                           result.weights).data)

        params = params_from_blocks(theta, episode.disease,
                                    scenario.base_params)
        out = run_simulation(scenario.population, scenario.network, params,
                             steps_total, mode="hard", seed=config.seed,
                             temperature=config.temperature)
        daily = target_series(out, episode.disease).data
        tail = daily[anchor:]
        if episode.disease == "covid":
            # difference against the last training day so week sums count
            # newly accumulated deaths only
            tail = np.diff(daily, prepend=0.0)[anchor:]
        forecasts.append(Forecast(
            region=episode.name,
            anchor_week=anchor_label(episode, anchor),
            anchor_day=anchor,
            horizons=_weekly_forecast_values(tail, episode.disease)))
    return forecasts


def forecast_truth_pairs(episode: Episode, forecasts: Sequence[Forecast]):
    """Align forecasts with ground truth; horizons past the data are dropped.

    Returns (predictions, truth) arrays over all evaluable (anchor, horizon)
    pairs.
    """
    if episode.disease == "covid":
        truth_daily = to_incident(episode.target)
    else:
        truth_daily = np.asarray(episode.target, dtype=np.float64)
    preds, truths = [], []
    for fc in forecasts:
        for tau in range(1, HORIZON_WEEKS + 1):
            end = fc.anchor_day + 7 * tau
            if end > episode.steps:
                continue
            block = truth_daily[end - 7:end]
            value = block.sum() if episode.disease == "covid" else block.mean()
            preds.append(fc.horizons[tau - 1])
            truths.append(value)
    return np.array(preds), np.array(truths)


def forecast_rows(forecasts: Sequence[Forecast]) -> list:
    """Flatten to (region, anchor_week, horizon_weeks, prediction) rows."""
    rows = []
    for fc in forecasts:
        for tau in range(1, HORIZON_WEEKS + 1):
            rows.append((fc.region, fc.anchor_week, tau, float(fc.horizons[tau - 1])))
    return rows
