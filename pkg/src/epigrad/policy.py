"""Vaccination policy engine.

Two dose-scheduling strategies over an age-prioritized queue: `standard`
gives second doses on schedule ahead of new first doses; `delayed` gives
every eligible first dose before any second dose. A daily dose budget of
floor(rate * n) is spent on the front of the priority list.

The default vaccine is non-sterilizing: it reduces an agent's chance of
dying from an infection acquired after protection kicks in, but leaves
transmission untouched. Protection is evaluated at exposure time and
doses take effect only after an onset delay. Experiments run the two
policies under paired seeds so the mortality ratio is not swamped by
simulation noise.
"""

from __future__ import annotations

import csv
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .population import ContactNetwork, Population
from .rng import stream
from .simulator import EpiParams, I, M, run_simulation

logger = logging.getLogger(__name__)

STRATEGIES = ("standard", "delayed")
VACCINE_MODES = ("non-sterilizing", "sterilizing")


@dataclass
class PolicyConfig:
    strategy: str = "standard"
    first_dose_efficacy: float = 0.5
    second_dose_efficacy: float = 0.9      # config default, not a literature value
    onset_delay: int = 12                  # days from dose to protection
    second_dose_interval: int = 21         # minimum gap before dose 2
    vaccination_rate: float = 0.003        # fraction of population per day
    burn_in_days: int = 20
    burn_in_infections: int = 10
    horizon_days: int = 74
    vaccine_mode: str = "non-sterilizing"
    test_probability: float = 0.2          # daily detection chance while infectious
    quarantine_compliance: float = 0.5     # outgoing-rate factor once detected

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}")
        if self.vaccine_mode not in VACCINE_MODES:
            raise ValueError(f"unknown vaccine mode {self.vaccine_mode!r}")
        for name in ("first_dose_efficacy", "second_dose_efficacy",
                     "vaccination_rate", "test_probability",
                     "quarantine_compliance"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        if self.onset_delay < 1 or self.second_dose_interval < 1:
            raise ValueError("delays and intervals must be at least one day")
        if self.burn_in_days < 0 or self.burn_in_infections < 0:
            raise ValueError("burn-in settings must be nonnegative")
        if self.horizon_days < 1:
            raise ValueError("horizon must be at least one day")

    @property
    def total_days(self) -> int:
        return self.burn_in_days + self.horizon_days


class VaccinationState:
    """Per-agent dose bookkeeping."""

    def __init__(self, n: int):
        self.doses = np.zeros(n, dtype=np.int64)
        self.day1 = np.full(n, -1, dtype=np.int64)
        self.day2 = np.full(n, -1, dtype=np.int64)

    def give_dose(self, agent: int, day: int):
        if self.doses[agent] == 0:
            self.doses[agent] = 1
            self.day1[agent] = day
        elif self.doses[agent] == 1:
            if day <= self.day1[agent]:
                raise ValueError("second dose must come after the first")
            self.doses[agent] = 2
            self.day2[agent] = day
        else:
            raise ValueError("agent already fully dosed")

    def efficacy(self, day: int, config: PolicyConfig) -> np.ndarray:
        """Protection level per agent on `day` (0 before onset)."""
        eff = np.zeros(self.doses.shape[0])
        active1 = (self.doses >= 1) & (day >= self.day1 + config.onset_delay)
        eff[active1] = config.first_dose_efficacy
        active2 = (self.doses == 2) & (day >= self.day2 + config.onset_delay)
        eff[active2] = config.second_dose_efficacy
        return eff


def _age_descending(ids: np.ndarray, ages: np.ndarray) -> np.ndarray:
    # stable: age bin descending, then agent id ascending
    return ids[np.lexsort((ids, -ages[ids]))]


def vaccination_queue(ages: np.ndarray, state: VaccinationState, strategy: str,
                      day: int, config: PolicyConfig,
                      alive: Optional[np.ndarray] = None) -> np.ndarray:
    """Full priority order for today; callers take the daily budget off the front."""
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}")
    ages = np.asarray(ages)
    if alive is None:
        alive = np.ones(ages.shape[0], dtype=bool)
    first = np.flatnonzero((state.doses == 0) & alive)
    second_ok = (state.doses == 1) & alive & \
        (day - state.day1 >= config.second_dose_interval)
    second = np.flatnonzero(second_ok)
    tiers = (second, first) if strategy == "standard" else (first, second)
    return np.concatenate([_age_descending(t, ages) for t in tiers])


def daily_doses(n: int, config: PolicyConfig) -> int:
    return int(math.floor(config.vaccination_rate * n))


def apply_vaccine_effect(state: VaccinationState, day: int,
                         config: PolicyConfig):
    """(susceptibility multiplier, mortality multiplier) for every agent.

    Non-sterilizing vaccines damp the mortality route only; sterilizing
    ones damp susceptibility only.
    """
    shield = 1.0 - state.efficacy(day, config)
    ones = np.ones_like(shield)
    if config.vaccine_mode == "sterilizing":
        return shield, ones
    return ones, shield


class VaccinationController:
    """Simulator hook adapter: daily testing, dosing, and effect lookup."""

    def __init__(self, config: PolicyConfig, ages: np.ndarray, seed: int):
        self.config = config
        self.ages = np.asarray(ages)
        self.seed = seed
        self.n = self.ages.shape[0]
        self.state = VaccinationState(self.n)
        self.detected = np.zeros(self.n, dtype=bool)
        self.doses_given = 0

    def before_step(self, t: int, pop: Population):
        cfg = self.config
        if cfg.test_probability > 0.0:
            u = stream(self.seed, "pcr", t).random(self.n)
            hits = (pop.stage == I) & ~self.detected & (u < cfg.test_probability)
            self.detected |= hits
        if t < cfg.burn_in_days:
            return
        budget = daily_doses(self.n, cfg)
        if budget == 0:
            return
        order = vaccination_queue(self.ages, self.state, cfg.strategy, t, cfg,
                                  alive=pop.stage != M)
        for agent in order[:budget]:
            self.state.give_dose(int(agent), t)
            self.doses_given += 1

    def susceptibility_multiplier(self, t: int):
        if self.config.vaccine_mode != "sterilizing":
            return None
        return apply_vaccine_effect(self.state, t, self.config)[0]

    def source_multiplier(self, t: int):
        if not self.detected.any():
            return None
        mult = np.ones(self.n)
        mult[self.detected] = self.config.quarantine_compliance
        return mult

    def mortality_multiplier(self, t: int):
        if self.config.vaccine_mode != "non-sterilizing":
            return None
        return apply_vaccine_effect(self.state, t, self.config)[1]


@dataclass
class PolicyOutcome:
    efficacy: float
    seeds: tuple
    mortality: dict               # policy label -> seed-averaged cumulative deaths
    infections: dict              # policy label -> seed-averaged ever-infected
    relative_mortality: float     # P2 / P1; NaN when P1 saw no deaths
    trajectories: dict = field(default_factory=dict)   # label -> (seeds, days+1)


def _run_one(population: Population, net: ContactNetwork, params: EpiParams,
             config: PolicyConfig, seed: int):
    n = population.n
    sim_params = replace(params, i0=config.burn_in_infections / n)
    controller = VaccinationController(config, population.age, seed)
    out = run_simulation(population, net, sim_params, config.total_days,
                         mode="hard", seed=seed, temperature=0.5,
                         controller=controller)
    deaths_by_day = out.census[:, M]
    return float(deaths_by_day[-1]), float(out.ever_infected_count), deaths_by_day


def run_policy_experiment(population: Population, net: ContactNetwork,
                          params: EpiParams, config_p1: PolicyConfig,
                          config_p2: PolicyConfig, efficacy: float,
                          seeds: Sequence[int], workers: int = 1
                          ) -> PolicyOutcome:
    """Paired-seed comparison of two dose schedules at one efficacy level.

    Relative mortality is the ratio of seed-averaged cumulative deaths
    (ratio of averages, which stays stable at low counts).
    """
    if not seeds:
        raise ValueError("at least one seed required")
    jobs = []
    for seed in seeds:
        for cfg in (config_p1, config_p2):
            jobs.append((replace(cfg, first_dose_efficacy=efficacy), seed))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(
                lambda job: _run_one(population, net, params, *job), jobs))
    else:
        results = [_run_one(population, net, params, *job) for job in jobs]

    deaths = {"P1": [], "P2": []}
    infections = {"P1": [], "P2": []}
    trajectories = {"P1": [], "P2": []}
    for idx, (d, inf, traj) in enumerate(results):
        label = "P1" if idx % 2 == 0 else "P2"
        deaths[label].append(d)
        infections[label].append(inf)
        trajectories[label].append(traj)

    m1 = float(np.mean(deaths["P1"]))
    m2 = float(np.mean(deaths["P2"]))
    if m1 == 0.0:
        logger.warning("no P1 deaths across %d seeds; relative mortality "
                       "undefined", len(seeds))
        ratio = float("nan")
    else:
        ratio = m2 / m1
    return PolicyOutcome(
        efficacy=efficacy, seeds=tuple(seeds),
        mortality={"P1": m1, "P2": m2},
        infections={"P1": float(np.mean(infections["P1"])),
                    "P2": float(np.mean(infections["P2"]))},
        relative_mortality=ratio,
        trajectories={k: np.array(v) for k, v in trajectories.items()})


def decision_for(ratio: float) -> str:
    if math.isnan(ratio):
        return "undefined"
    if ratio < 1.0:
        return "P2"
    if ratio > 1.0:
        return "P1"
    return "tie"


def sensitivity_sweep(population: Population, net: ContactNetwork,
                      params: EpiParams, config_p1: PolicyConfig,
                      config_p2: PolicyConfig, efficacies: Sequence[float],
                      seeds: Sequence[int], workers: int = 1) -> list:
    """(efficacy, relative mortality, decision, n_seeds) rows, one per level."""
    if len(efficacies) < 2:
        raise ValueError("a sweep needs at least two efficacy values")
    rows = []
    for eff in efficacies:
        outcome = run_policy_experiment(population, net, params, config_p1,
                                        config_p2, eff, seeds, workers)
        rows.append((float(eff), outcome.relative_mortality,
                     decision_for(outcome.relative_mortality), len(seeds)))
    return rows


def write_sweep_csv(path, rows: Sequence[tuple]):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["efficacy", "relative_mortality", "decision", "seeds"])
        for eff, ratio, decision, n_seeds in rows:
            writer.writerow([repr(float(eff)), repr(float(ratio)),
                             decision, n_seeds])


def load_sweep_csv(path) -> list:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["efficacy", "relative_mortality", "decision", "seeds"]:
            raise ValueError(f"{path}: unexpected sweep header {header}")
        return [(float(e), float(r), d, int(s)) for e, r, d, s in reader]
