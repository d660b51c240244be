"""Flat `section.key = value` run configuration.

Strict by design: unknown keys are rejected, values are converted at load
time, and any key naming a file must point at one that exists. All
diagnostics carry path:line so a bad config is a one-glance fix.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field


def _int(s: str) -> int:
    return int(s, 0)


def _float(s: str) -> float:
    return float(s)


def _str(s: str) -> str:
    return s


def _floats(s: str) -> list:
    return [float(x) for x in s.split(",") if x.strip() != ""]


def _ints(s: str) -> list:
    return [int(x) for x in s.split(",") if x.strip() != ""]


_PATH_KEYS = frozenset({
    "population.edges_csv", "calibrate.target_csv", "calibrate.features_csv",
    "forecast.checkpoint",
})

KNOWN_KEYS = {
    "run.seed": _int,
    "run.out": _str,
    "run.threads": _int,
    "population.n": _int,
    "population.network_k": _int,
    "population.network_p": _float,
    "population.age_distribution": _floats,
    "population.edges_csv": _str,
    "epi.r": _floats,
    "epi.m": _floats,
    "epi.i0": _float,
    "epi.t_e": _float,
    "epi.t_i": _float,
    "epi.tau_ei": _float,
    "epi.tau_ir": _float,
    "epi.tau_im": _float,
    "epi.mortality_age_multiplier": _floats,
    "epi.steps": _int,
    "calibrate.mode": _str,
    "calibrate.disease": _str,
    "calibrate.epochs": _int,
    "calibrate.learning_rate": _float,
    "calibrate.optimizer": _str,
    "calibrate.temperature": _float,
    "calibrate.target_csv": _str,
    "calibrate.features_csv": _str,
    "forecast.anchors": _ints,
    "forecast.mode": _str,
    "forecast.checkpoint": _str,
    "bench.edges": _ints,
    "bench.steps": _int,
    "policy.efficacies": _floats,
    "policy.seeds": _int,
    "policy.second_dose_efficacy": _float,
    "policy.vaccination_rate": _float,
    "policy.burn_in_days": _int,
    "policy.burn_in_infections": _int,
    "policy.horizon_days": _int,
    "policy.vaccine_mode": _str,
    "policy.test_probability": _float,
    "policy.quarantine_compliance": _float,
    "expert.r0": _float,
    "expert.cfr": _float,
    "expert.r0_flu": _float,
    "oracle.n": _int,
    "oracle.steps": _int,
    "oracle.samples": _int,
    "oracle.relaxed_samples": _int,
}


@dataclass
class RunConfig:
    values: dict = field(default_factory=dict)
    path: str = "<none>"

    def get(self, key: str, default=None):
        if key not in KNOWN_KEYS:
            raise KeyError(f"unregistered config key {key!r}")
        return self.values.get(key, default)

    def require(self, key: str):
        value = self.get(key)
        if value is None:
            raise KeyError(f"{self.path}: missing required config key {key!r}")
        return value

    def __contains__(self, key: str) -> bool:
        return key in self.values


def load_config(path) -> RunConfig:
    if not os.path.exists(path):
        raise FileNotFoundError(f"config file not found: {path}")
    values = {}
    base = os.path.dirname(os.path.abspath(path))
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"{path}:{lineno}: expected 'section.key = "
                                 f"value', got {line!r}")
            key, _, rhs = line.partition("=")
            key = key.strip()
            rhs = rhs.strip()
            if key not in KNOWN_KEYS:
                raise ValueError(f"{path}:{lineno}: unknown key {key!r}")
            if key in values:
                raise ValueError(f"{path}:{lineno}: duplicate key {key!r}")
            try:
                value = KNOWN_KEYS[key](rhs)
            except ValueError as exc:
                raise ValueError(
                    f"{path}:{lineno}: bad value for {key}: {exc}") from None
            if key in _PATH_KEYS:
                # relative paths resolve against the config file location
                if not os.path.isabs(value):
                    value = os.path.join(base, value)
                if not os.path.exists(value):
                    raise ValueError(
                        f"{path}:{lineno}: file not found: {value}")
            values[key] = value
    return RunConfig(values=values, path=str(path))
