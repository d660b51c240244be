"""Tensorized agent-level SEIRM simulation with a differentiable relaxation.

The discrete event skeleton (who gets exposed when, stage transitions,
mortality routing) always follows hard argmax/threshold decisions driven by
per-(agent, step) noise. In relaxed mode each exposure additionally carries a
Gumbel-Softmax soft indicator as the agent's "infection mass" on the autodiff
tape, and the reported series are built from those masses, so the output is
locally smooth in the transmission parameters under fixed noise. In hard mode
the indicator is the straight-through hard sample.

Per-day step semantics: one update computes transmissions and progressions
from the current state, then applies both; agents exposed at step t cannot
transmit or progress until step t+1. Recovered and dead are absorbing; there
is no reinfection. Exposure pressure never accumulates across days: the edge
rates are recomputed from scratch every step.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

import numpy as np

from . import autodiff as ad
from . import population as popmod
from .population import ContactNetwork, Population, NEVER_EXPOSED
from .rng import stream

logger = logging.getLogger(__name__)

S, E, I, R, M = popmod.S, popmod.E, popmod.I, popmod.R, popmod.M

GUMBEL_EPS = 1e-6
Param = Union[float, np.ndarray, ad.Value]


class InfectiousnessCurve:
    """Gamma-shaped infectiousness versus days since exposure.

    Amplitude is normalized so the first fourteen whole days sum to one;
    the tail beyond the normalization window is kept.
    """

    def __init__(self, shape: float = 2.0, scale: float = 2.5, norm_days: int = 14):
        if shape <= 1.0:
            raise ValueError("curve shape must exceed 1 so day zero carries no weight")
        self.shape = shape
        self.scale = scale
        self.norm_days = norm_days
        self._tables: dict = {}

    def _pdf(self, d: np.ndarray) -> np.ndarray:
        coeff = 1.0 / (math.gamma(self.shape) * self.scale ** self.shape)
        return np.where(d > 0, coeff * d ** (self.shape - 1.0) * np.exp(-d / self.scale), 0.0)

    def table(self, length: int) -> np.ndarray:
        """f(d) for d = 0..length-1."""
        if length not in self._tables:
            norm = self._pdf(np.arange(1, self.norm_days + 1, dtype=np.float64)).sum()
            days = np.arange(length, dtype=np.float64)
            self._tables[length] = self._pdf(days) / norm
        return self._tables[length]


@dataclass
class EpiParams:
    """Transmission and progression parameters for one run.

    r, m and susceptibility may be tape Values for gradient runs; r and m may
    be weekly vectors (entry w applies to steps 7w..7w+6, last entry extends
    beyond the vector). i0 is a fraction of the population; None means the
    population is already seeded by the caller.
    """

    r: Param = 2.5
    m: Param = 0.02
    i0: Optional[Param] = 0.01
    susceptibility: Param = None
    t_e: float = 0.33
    t_i: float = 1.0
    tau_ei: float = 3.0
    tau_ir: float = 5.0
    tau_im: float = 12.0
    mortality_age_multiplier: Optional[np.ndarray] = None
    curve: InfectiousnessCurve = field(default_factory=InfectiousnessCurve)

    def __post_init__(self):
        if self.susceptibility is None:
            self.susceptibility = np.ones(popmod.N_AGE_BINS)
        for name in ("tau_ei", "tau_ir", "tau_im"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be at least one day")
        if self.t_e < 0 or self.t_i < 0:
            raise ValueError("stage transmissibility factors must be non-negative")
        if self.mortality_age_multiplier is not None:
            mult = np.asarray(self.mortality_age_multiplier, dtype=np.float64)
            if mult.shape != (popmod.N_AGE_BINS,) or (mult < 0).any():
                raise ValueError("mortality age multiplier needs 9 non-negative entries")
            self.mortality_age_multiplier = mult


@dataclass
class SimOutput:
    census: np.ndarray            # (steps+1, 5) stage counts, skeleton
    deaths: ad.Value              # (steps,) cumulative-deaths series (m x resolved mass)
    infections: ad.Value          # (steps,) cumulative-infections series (mass)
    yhat_resolved: ad.Value       # scalar: m x resolved mass at the final step
    yhat_ever: ad.Value           # scalar: m x ever-infected mass at the final step
    seeded: np.ndarray
    final: Population
    ever_infected_count: int
    resolved_count: int
    deaths_count: int


def gumbel_softmax_bernoulli(q, noise: np.ndarray, temperature: float,
                             mode: str = "relaxed") -> ad.Value:
    """Relaxed Bernoulli indicator for probabilities q with fixed Gumbel pairs.

    Soft value is the first softmax component of ((log q + g1)/tau,
    (log(1-q) + g2)/tau), computed in its equivalent sigmoid form. Hard mode
    forwards the argmax (an exact Bernoulli(q) sample) and backpropagates the
    soft gradient (straight-through).
    """
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    if mode not in ("relaxed", "hard"):
        raise ValueError(f"unknown mode {mode!r}")
    qv = ad.constant(q)
    noise = np.asarray(noise, dtype=np.float64)
    if noise.shape != qv.data.shape + (2,):
        raise ValueError(f"need one Gumbel pair per probability, got {noise.shape}")
    qc = ad.clip(qv, GUMBEL_EPS, 1.0 - GUMBEL_EPS)
    delta = noise[..., 0] - noise[..., 1]
    arg = (ad.log(qc) - ad.log(1.0 - qc) + ad.constant(delta)) / temperature
    soft = ad.sigmoid(arg)
    if mode == "relaxed":
        return soft
    hard = (arg.data > 0).astype(np.float64)
    return ad.straight_through(soft, hard)


def aggregate(resolved, m) -> ad.Value:
    """Scalar target: m times the (soft) count of agents in {R, M}."""
    if isinstance(resolved, Population):
        count = ad.constant(float(np.count_nonzero((resolved.stage == R) | (resolved.stage == M))))
    else:
        count = ad.constant(resolved)
    return ad.multiply(ad.constant(m) if not isinstance(m, ad.Value) else m, count)


def _as_value(x, tape: Optional[ad.Tape]) -> ad.Value:
    if isinstance(x, ad.Value):
        return x
    return ad.constant(np.asarray(x, dtype=np.float64))


def _step_param(x: ad.Value, t: int) -> ad.Value:
    """Weekly-blocked scalar at step t; scalars pass through."""
    if x.data.ndim == 0:
        return x
    w = min(t // 7, x.data.shape[0] - 1)
    return x[w]


def edge_rate_lambda(r_t: ad.Value, mean_degree: float, sus_gathered: ad.Value,
                     edge_profile: np.ndarray) -> ad.Value:
    """Per-edge exposure rate: (r/<k>) * S_age(dst) * T_stage(src) * f(days)."""
    return (r_t / mean_degree) * sus_gathered * ad.constant(edge_profile)


def transmit_step(pop: Population, net: ContactNetwork, t: int,
                  r_t: ad.Value, susceptibility: ad.Value,
                  params: EpiParams, curve_table: np.ndarray,
                  noise: np.ndarray, temperature: float, mode: str,
                  sus_mult: Optional[np.ndarray] = None,
                  src_mult: Optional[np.ndarray] = None):
    """One transmission sweep from the current state.

    Returns (indicator Value over candidates, candidate ids, newly exposed
    ids). Candidates are susceptible agents with positive accumulated rate;
    newly exposed ids follow the hard argmax skeleton in both modes.
    """
    src_stage = pop.stage[net.src]
    live = ((src_stage == E) | (src_stage == I)) & (pop.stage[net.dst] == S)
    ls = net.src[live]
    ld = net.dst[live]
    empty = np.empty(0, dtype=np.int64)
    if ls.size == 0:
        return None, empty, empty

    days = t - pop.exposure[ls]
    f = curve_table[np.minimum(days, curve_table.shape[0] - 1)]
    profile = f * np.where(src_stage[live] == E, params.t_e, params.t_i)
    if src_mult is not None:
        profile = profile * src_mult[ls]
    if sus_mult is not None:
        profile = profile * sus_mult[ld]

    sus_gathered = ad.gather(susceptibility, pop.age[ld])
    lam_edges = edge_rate_lambda(r_t, net.mean_degree, sus_gathered, profile)
    lam = ad.scatter_add(lam_edges, ld, pop.n)
    candidates = np.flatnonzero(lam.data > 0)
    if candidates.size == 0:
        return None, empty, empty

    q = 1.0 - ad.exp(-ad.gather(lam, candidates))
    indicator = gumbel_softmax_bernoulli(q, noise[candidates], temperature, mode)
    exposed = candidates[indicator.data > 0.5]
    return indicator, candidates, exposed


def progress_step(pop: Population, t: int, params: EpiParams,
                  will_expire: np.ndarray):
    """Threshold-clock transitions from the current state; applies in place.

    Returns (ids newly infectious, ids newly resolved). E moves to I after
    tau_ei days since exposure; I moves to R after tau_ei + tau_ir, or to M
    after tau_ei + tau_im for mortality-tagged agents.
    """
    days = t - pop.exposure
    to_i = (pop.stage == E) & (days >= params.tau_ei)
    in_i = pop.stage == I
    to_r = in_i & ~will_expire & (days >= params.tau_ei + params.tau_ir)
    to_m = in_i & will_expire & (days >= params.tau_ei + params.tau_im)
    pop.stage[to_i] = I
    pop.stage[to_r] = R
    pop.stage[to_m] = M
    resolved = np.flatnonzero(to_r | to_m)
    return np.flatnonzero(to_i), resolved


def run_simulation(base_pop: Population, net: ContactNetwork, params: EpiParams,
                   steps: int, mode: str = "relaxed", seed: int = 0,
                   temperature: float = 0.5, tape: Optional[ad.Tape] = None,
                   controller=None) -> SimOutput:
    """Simulate `steps` daily updates; see module docstring for semantics.

    base_pop is not modified. Pass a tape (with r/m/susceptibility as Values
    on it) for gradient runs; with tape=None everything runs untracked.
    """
    if mode not in ("relaxed", "hard"):
        raise ValueError(f"unknown mode {mode!r}")
    if base_pop.n != net.n:
        raise ValueError("population and network sizes differ")
    pop = base_pop.copy()
    n = pop.n

    r_v = _as_value(params.r, tape)
    m_v = _as_value(params.m, tape)
    sus_v = _as_value(params.susceptibility, tape)
    if sus_v.data.shape != (popmod.N_AGE_BINS,):
        raise ValueError("susceptibility needs one entry per age bin")

    curve_table = params.curve.table(steps + 2)
    mort_mult = params.mortality_age_multiplier
    mort_by_age = np.ones(n) if mort_mult is None else mort_mult[pop.age]
    route_u = stream(seed, "mortality").random(n)
    will_expire = np.zeros(n, dtype=bool)

    def tag_mortality(ids: np.ndarray, t: int, m_now: float):
        if ids.size == 0:
            return
        prob = np.clip(m_now * mort_by_age[ids], 0.0, 1.0)
        if controller is not None:
            scale = controller.mortality_multiplier(t)
            if scale is not None:
                prob = np.clip(prob * scale[ids], 0.0, 1.0)
        will_expire[ids] = route_u[ids] < prob

    # infection masses on the tape; seeded agents carry i0*n/round(i0*n) each
    # so the total seeded mass is smooth in i0 (straight-through flavor)
    mass = ad.constant(np.zeros(n))
    seeded = np.empty(0, dtype=np.int64)
    if params.i0 is not None:
        i0_v = _as_value(params.i0, tape)
        i0_now = float(i0_v.data)
        seeded = popmod.seed_infections(pop, i0_now, seed)
        if seeded.size:
            unit = np.zeros(n)
            unit[seeded] = 1.0
            if isinstance(params.i0, ad.Value) and mode == "relaxed":
                per_seed = i0_v * (n / seeded.size)
            else:
                per_seed = ad.constant(i0_now * n / seeded.size if seeded.size else 1.0)
            mass = mass + per_seed * ad.constant(unit)
            tag_mortality(seeded, 0, float(_step_param(m_v, 0).data))
        else:
            logger.warning("i0=%s seeds no agents for n=%d", i0_now, n)
    else:
        pre = np.flatnonzero(pop.stage != S)
        seeded = pre
        if pre.size:
            unit = np.zeros(n)
            unit[pre] = 1.0
            mass = mass + ad.constant(unit)
            tag_mortality(pre, 0, float(_step_param(m_v, 0).data))

    census = np.zeros((steps + 1, 5), dtype=np.int64)
    census[0] = np.bincount(pop.stage, minlength=5)

    ever_cum = mass.sum()
    resolved_cum = ad.constant(0.0)
    deaths_series = []
    infections_series = []

    for t in range(steps):
        if controller is not None:
            controller.before_step(t, pop)
        noise = stream(seed, "gumbel", t).gumbel(size=(n, 2))
        r_t = _step_param(r_v, t)
        m_t = _step_param(m_v, t)
        sus_mult = controller.susceptibility_multiplier(t) if controller is not None else None
        src_mult = controller.source_multiplier(t) if controller is not None else None

        indicator, candidates, exposed = transmit_step(
            pop, net, t, r_t, sus_v, params, curve_table, noise,
            temperature, mode, sus_mult=sus_mult, src_mult=src_mult)

        _, resolved = progress_step(pop, t, params, will_expire)

        if exposed.size:
            pop.stage[exposed] = E
            pop.exposure[exposed] = t
            tag_mortality(exposed, t, float(m_t.data))
        if indicator is not None:
            keep = (indicator.data > 0.5).astype(np.float64)
            if exposed.size:
                step_mass = indicator * ad.constant(keep)
                mass = mass + ad.scatter_add(step_mass, candidates, n)
                ever_cum = ever_cum + step_mass.sum()
        if resolved.size:
            resolved_cum = resolved_cum + ad.gather(mass, resolved).sum()

        deaths_series.append(m_t * resolved_cum)
        infections_series.append(ever_cum)
        census[t + 1] = np.bincount(pop.stage, minlength=5)

    final_m = _step_param(m_v, max(steps - 1, 0))
    out = SimOutput(
        census=census,
        deaths=ad.stack(deaths_series) if deaths_series else ad.constant(np.zeros(0)),
        infections=ad.stack(infections_series) if infections_series else ad.constant(np.zeros(0)),
        yhat_resolved=final_m * resolved_cum,
        yhat_ever=final_m * ever_cum,
        seeded=seeded,
        final=pop,
        ever_infected_count=int(np.count_nonzero(pop.stage != S)),
        resolved_count=int(np.count_nonzero((pop.stage == R) | (pop.stage == M))),
        deaths_count=int(census[-1, M]),
    )
    return out
