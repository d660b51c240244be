"""Compartmental baselines and the calibration strategies built on them.

Forward-Euler SEIRM and SIRS steppers work on plain floats or on tape
Values, so the same code serves numeric rollout and gradient-based fitting.
Two parameter hand-off strategies translate a fitted (or literature-sourced)
compartmental description into agent-simulation parameters.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import autodiff as ad
from . import calibnet as cn
from .rng import stream
from .simulator import EpiParams
from .training import TrainConfig, make_optimizer, mse_loss

logger = logging.getLogger(__name__)

# default fitting boxes: plausible epidemiological ranges (latent period
# 2.5-10 days, infectious 3-20 days) that also keep one Euler day from
# overshooting a compartment below zero (gamma + mu <= 0.38)
SEIRM_BOUNDS_DEFAULT = {
    "beta": (0.05, 1.0),
    "alpha": (0.1, 0.4),
    "gamma": (0.05, 0.33),
    "mu": (1e-4, 0.05),
    "i0": (1e-4, 0.02),
}
SIRS_BOUNDS_DEFAULT = {
    "beta": (0.05, 1.0),
    "duration": (1.5, 10.0),
    "immunity": (30.0, 3650.0),
    "i0": (1e-4, 0.05),
}

MODELS = ("seirm", "sirs")


@dataclass
class SeirmParams:
    """Latent-stage compartmental parameters; rates are per day."""

    beta: float
    alpha: float
    gamma: float
    mu: float
    n: float

    def __post_init__(self):
        for name in ("beta", "alpha", "gamma", "mu"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.n <= 0:
            raise ValueError("population size must be positive")

    @property
    def r0(self) -> float:
        if self.gamma + self.mu <= 0:
            raise ValueError("gamma + mu must be positive to define r0")
        return self.beta / (self.gamma + self.mu)


@dataclass
class SirsParams:
    """Waning-immunity compartmental parameters (recovered implied)."""

    beta: float
    duration: float
    immunity: float
    n: float

    def __post_init__(self):
        if self.beta < 0:
            raise ValueError("beta must be non-negative")
        if self.duration <= 0 or self.immunity <= 0:
            raise ValueError("duration and immunity must be positive")
        if self.n <= 0:
            raise ValueError("population size must be positive")

    @property
    def r0(self) -> float:
        return self.beta * self.duration


def _clamp_nonneg(x, name: str):
    if isinstance(x, ad.Value):
        if np.any(x.data < 0):
            logger.warning("clamped negative %s=%g", name, float(np.min(x.data)))
            return ad.relu(x)
        return x
    if x < 0:
        logger.warning("clamped negative %s=%g", name, x)
        return 0.0
    return x


def seirm_step(state, params, dt: float = 1.0):
    """One Euler day; the four flows cancel pairwise so mass is conserved."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    s, e, i, r, m = state
    new_exposed = params.beta * s * i * (dt / params.n)
    activated = params.alpha * e * dt
    recovered = params.gamma * i * dt
    died = params.mu * i * dt
    return (
        _clamp_nonneg(s - new_exposed, "S"),
        _clamp_nonneg(e + new_exposed - activated, "E"),
        _clamp_nonneg(i + activated - recovered - died, "I"),
        _clamp_nonneg(r + recovered, "R"),
        _clamp_nonneg(m + died, "M"),
    )


def sirs_step(state, params, dt: float = 1.0):
    """One Euler day; recovered is implied as n - S - I."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    s, i = state
    returned = (params.n - s - i) * (dt / params.immunity)
    new_infected = params.beta * s * i * (dt / params.n)
    cleared = i * (dt / params.duration)
    return (
        _clamp_nonneg(s + returned - new_infected, "S"),
        _clamp_nonneg(i + new_infected - cleared, "I"),
    )


class _ParamView:
    """Attribute access over a dict whose values may be floats or Values."""

    def __init__(self, mapping: dict, n: float):
        self.__dict__.update(mapping)
        self.n = n


def ode_series(model: str, params: dict, n: float, steps: int):
    """Observable series over `steps` days starting from the seeded state.

    Day 0 is the initial condition. SEIRM reports cumulative deaths (M);
    SIRS reports current infections (I). Parameter values may be floats or
    tape Values; `i0` is the initially infected fraction.
    """
    if model not in MODELS:
        raise ValueError(f"unknown model {model!r}")
    if steps < 1:
        raise ValueError("need at least one step")
    view = _ParamView(params, n)
    i_start = params["i0"] * n
    # zero with the same shape as i_start so batched (vector) states stack
    zero = i_start * 0.0
    if model == "seirm":
        state = (n - i_start, zero, i_start, zero, zero)
        observed = [state[4]]
        for _ in range(steps - 1):
            state = seirm_step(state, view, 1.0)
            observed.append(state[4])
    else:
        state = (n - i_start, i_start)
        observed = [state[1]]
        for _ in range(steps - 1):
            state = sirs_step(state, view, 1.0)
            observed.append(state[1])
    return ad.stack(observed)


@dataclass
class OdeFit:
    model: str
    params: dict
    best_loss: float
    history: list            # (attempt, epoch, loss) finite entries only
    restarts: int
    n: float
    initial_params: dict

    @property
    def r0(self) -> float:
        if self.model == "seirm":
            denom = self.params["gamma"] + self.params["mu"]
            if denom <= 0:
                raise ValueError("gamma + mu must be positive to define r0")
            return self.params["beta"] / denom
        return self.params["beta"] * self.params["duration"]


def fit_ode(model: str, target, n: float, bounds: Optional[dict] = None,
            config: Optional[TrainConfig] = None, n_starts: int = 4) -> OdeFit:
    """Fit compartmental parameters to an observed series by gradient descent.

    Parameters stay inside their bound box via sigmoid reparameterization.
    Several random starts run batched on one tape (their gradients are
    independent, so summing the per-start losses optimizes each start
    separately); the best-loss start wins. A non-finite loss aborts the
    attempt and restarts from the same initializations with a halved
    learning rate, up to three times. Each history entry records the best
    per-start loss of that epoch.
    """
    if model not in MODELS:
        raise ValueError(f"unknown model {model!r}")
    target = np.asarray(target, dtype=np.float64)
    if target.ndim != 1 or target.shape[0] < 2:
        raise ValueError("target length must be at least 2")
    if n_starts < 1:
        raise ValueError("need at least one start")
    if bounds is None:
        bounds = SEIRM_BOUNDS_DEFAULT if model == "seirm" else SIRS_BOUNDS_DEFAULT
    config = config or TrainConfig()
    names = sorted(bounds)
    lo = np.array([bounds[k][0] for k in names])
    hi = np.array([bounds[k][1] for k in names])
    if np.any(lo >= hi):
        raise ValueError("each bound must satisfy lo < hi")
    steps = target.shape[0]

    logits0 = stream(config.seed, "ode-fit").normal(size=(n_starts, len(names)))
    init_theta = lo + (hi - lo) / (1 + np.exp(-logits0))
    lo_t = np.tile(lo, (n_starts, 1))
    span_t = np.tile(hi - lo, (n_starts, 1))
    target_t = np.tile(target[:, None], (1, n_starts))

    best_loss = math.inf
    best_start = 0
    best_params = dict(zip(names, init_theta[0]))
    history: list = []
    restarts = 0

    for attempt in range(4):
        logits = logits0.copy()
        opt = make_optimizer(config.optimizer, {"logits": logits},
                             config.learning_rate / 2 ** attempt)
        diverged = False
        for epoch in range(config.epochs):
            with np.errstate(over="ignore", invalid="ignore"):
                tape = ad.Tape()
                lv = tape.leaf(logits)
                theta = ad.constant(lo_t) + ad.constant(span_t) * ad.sigmoid(lv)
                series = ode_series(
                    model, {k: theta[:, j] for j, k in enumerate(names)},
                    n, steps)
                col_losses = ((series.data - target[:, None]) ** 2).mean(axis=0)
                finite = np.isfinite(col_losses)
                for row in np.flatnonzero(finite):
                    if col_losses[row] < best_loss:
                        best_loss = float(col_losses[row])
                        best_start = int(row)
                        best_params = dict(zip(names, theta.data[row]))
                if not finite.all():
                    diverged = True
                    break
                history.append((attempt, epoch, float(col_losses.min())))
                diff = series - ad.constant(target_t)
                total = (diff * diff).sum() * (1.0 / steps)
                tape.backward(total)
                opt.step({"logits": lv.grad})
        if not diverged:
            break
        if attempt < 3:
            restarts += 1
            logger.warning("fit diverged on attempt %d; restarting with "
                           "halved learning rate", attempt)
    return OdeFit(model=model, params=best_params, best_loss=best_loss,
                  history=history, restarts=restarts, n=n,
                  initial_params=dict(zip(names, init_theta[best_start])))


# ---------------------------------------------------------------------------
# parameter hand-off to the agent simulator
# ---------------------------------------------------------------------------


def surrogate_parameters(fit: OdeFit) -> dict:
    """Translate fitted compartmental parameters into simulator terms.

    Reproduction number carries over directly; SEIRM mortality becomes the
    death fraction among exits from the infectious stage; the seeded
    fraction becomes an initial-infection percentage.
    """
    p = fit.params
    if fit.model == "seirm":
        exits = p["gamma"] + p["mu"]
        return {"r": fit.r0,
                "m": p["mu"] / exits if exits > 0 else 0.0,
                "i0_percent": 100.0 * p["i0"]}
    return {"r": fit.r0, "i0_percent": 100.0 * p["i0"]}


def expert_parameters(disease: str, r0: Optional[float] = None,
                      cfr: Optional[float] = None) -> dict:
    """Fixed literature-sourced parameters; no fitting involved.

    The initially infected percentage is set to the midpoint of its search
    range. Reproduction number (and fatality rate for covid) must be
    supplied by the caller; there are no built-in literature defaults.
    """
    if disease == "covid":
        if r0 is None:
            raise ValueError("expert r0 value required (config key expert.r0)")
        if cfr is None:
            raise ValueError("expert cfr value required (config key expert.cfr)")
        lo, hi = cn.COVID_BOUNDS
        return {"r": r0, "m": cfr, "i0_percent": (lo[2] + hi[2]) / 2}
    if disease == "flu":
        if r0 is None:
            raise ValueError("expert r0 value required (config key expert.r0_flu)")
        lo, hi = cn.FLU_BOUNDS
        return {"r": r0, "i0_percent": (lo[1] + hi[1]) / 2}
    raise ValueError(f"unknown disease {disease!r}")


def to_epi_params(mapping: dict, base: EpiParams) -> EpiParams:
    """Build simulator parameters from a hand-off mapping, keeping the
    progression clocks and curve of `base`."""
    return EpiParams(
        r=mapping["r"],
        m=mapping.get("m", base.m),
        i0=mapping["i0_percent"] / 100.0,
        susceptibility=base.susceptibility,
        t_e=base.t_e, t_i=base.t_i,
        tau_ei=base.tau_ei, tau_ir=base.tau_ir, tau_im=base.tau_im,
        mortality_age_multiplier=base.mortality_age_multiplier,
        curve=base.curve)
