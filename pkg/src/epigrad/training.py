"""Gradient-based calibration of the simulator against observed series.

Three modes share the same loop (forward simulate in relaxed mode, compare
against the target, backpropagate, update):

  * direct  -- optimize weekly parameter blocks themselves via bounded logits
  * network -- optimize sequence-network weights that emit the blocks
  * joint   -- one shared network across several regions, loss averaged

Every forward pass inside an epoch reuses the configured seed, so the
objective is a deterministic function of the parameters and the loss history
is reproducible bit for bit.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import autodiff as ad
from . import calibnet as cn
from .population import ContactNetwork, Population
from .rng import stream
from .simulator import EpiParams, SimOutput, run_simulation

logger = logging.getLogger(__name__)

DISEASES = ("covid", "flu")


@dataclass
class Episode:
    """One region's observed series plus the covariates fed to the network.

    The target itself is never part of the features; features carry side
    information only (case counts, mobility-like signals, calendar encodings).
    """

    features: np.ndarray          # (steps, n_features)
    target: np.ndarray            # (steps,) observed cumulative series
    disease: str = "covid"
    name: str = "region"
    start_date: Optional["object"] = None   # datetime.date of day 0, if known

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.target = np.asarray(self.target, dtype=np.float64)
        if self.features.ndim != 2:
            raise ValueError("features must be 2-D (steps, dims)")
        if self.target.ndim != 1:
            raise ValueError("target must be 1-D")
        if self.features.shape[0] != self.target.shape[0]:
            raise ValueError("features and target lengths differ")
        if self.disease not in DISEASES:
            raise ValueError(f"unknown disease {self.disease!r}")

    @property
    def steps(self) -> int:
        return self.target.shape[0]

    def truncated(self, days: int) -> "Episode":
        """First `days` observations only; later rows physically removed."""
        if not 1 <= days <= self.steps:
            raise ValueError(f"cannot truncate {self.steps} steps to {days}")
        return Episode(self.features[:days].copy(), self.target[:days].copy(),
                       self.disease, self.name, self.start_date)


@dataclass
class Scenario:
    """The fixed simulation substrate a calibration runs against."""

    population: Population
    network: ContactNetwork
    base_params: EpiParams = field(default_factory=EpiParams)

    def __post_init__(self):
        if self.population.n != self.network.n:
            raise ValueError("population and network sizes differ")


@dataclass
class TrainConfig:
    epochs: int = 1000
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    seed: int = 0
    temperature: float = 0.5
    max_grad_norm: Optional[float] = None

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be positive")
        if self.epochs < 0:
            raise ValueError("epochs must be non-negative")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")
        if self.temperature <= 0:
            raise ValueError("temperature must be positive")
        if self.max_grad_norm is not None and self.max_grad_norm <= 0:
            raise ValueError("gradient norm limit must be positive")


@dataclass
class TrainResult:
    """Best-loss snapshot plus the full (epoch, region, loss) history."""

    theta: Optional[np.ndarray]   # bounded weekly parameter blocks at best loss
    weights: Optional[dict]       # network weights at best loss (network modes)
    history: list
    best_loss: float
    best_epoch: int


def mse_loss(predicted: ad.Value, observed) -> ad.Value:
    obs = np.asarray(observed, dtype=np.float64)
    pred = ad.constant(predicted)
    if pred.data.shape != obs.shape:
        raise ValueError(
            f"series length mismatch: {pred.data.shape} vs {obs.shape}")
    if obs.size == 0:
        raise ValueError("cannot score empty series")
    diff = pred - ad.constant(obs)
    return (diff * diff).sum() * (1.0 / obs.size)


# ---------------------------------------------------------------------------
# optimizers over named parameter arrays (updated in place)
# ---------------------------------------------------------------------------


class Adam:
    def __init__(self, params: dict, lr: float = 1e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, grads: dict) -> bool:
        """Apply one update; a non-finite gradient rejects the whole step."""
        for name, g in grads.items():
            if not np.all(np.isfinite(g)):
                logger.warning("non-finite gradient for %r; step rejected", name)
                return False
        self.t += 1
        for name, g in grads.items():
            self.m[name] = self.beta1 * self.m[name] + (1 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1 - self.beta2) * g * g
            m_hat = self.m[name] / (1 - self.beta1 ** self.t)
            v_hat = self.v[name] / (1 - self.beta2 ** self.t)
            self.params[name] -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)
        return True


class Sgd:
    """Plain descent update, kept for fidelity comparisons."""

    def __init__(self, params: dict, lr: float = 1e-3):
        self.params = params
        self.lr = lr
        self.t = 0

    def step(self, grads: dict) -> bool:
        for name, g in grads.items():
            if not np.all(np.isfinite(g)):
                logger.warning("non-finite gradient for %r; step rejected", name)
                return False
        self.t += 1
        for name, g in grads.items():
            self.params[name] -= self.lr * g
        return True


def make_optimizer(name: str, params: dict, lr: float):
    if name == "adam":
        return Adam(params, lr=lr)
    if name == "sgd":
        return Sgd(params, lr=lr)
    raise ValueError(f"unknown optimizer {name!r}")


# ---------------------------------------------------------------------------
# parameter block plumbing shared by every mode
# ---------------------------------------------------------------------------


def disease_bounds(disease: str):
    if disease == "covid":
        return cn.COVID_BOUNDS
    if disease == "flu":
        return cn.FLU_BOUNDS
    raise ValueError(f"unknown disease {disease!r}")


def n_week_blocks(steps: int) -> int:
    return max(1, math.ceil(steps / 7))


def params_from_blocks(theta: ad.Value, disease: str,
                       base: EpiParams) -> EpiParams:
    """Weekly blocks -> simulation parameters.

    Column order follows the bound vectors. The initial-infection column is
    in percent and only its first week matters (seeding happens once); it is
    converted to a fraction here, on the tape.
    """
    if disease == "covid":
        r, m, i0 = theta[:, 0], theta[:, 1], theta[0, 2] * 0.01
    else:
        r, i0 = theta[:, 0], theta[0, 1] * 0.01
        m = base.m
    return EpiParams(
        r=r, m=m, i0=i0,
        susceptibility=base.susceptibility,
        t_e=base.t_e, t_i=base.t_i,
        tau_ei=base.tau_ei, tau_ir=base.tau_ir, tau_im=base.tau_im,
        mortality_age_multiplier=base.mortality_age_multiplier,
        curve=base.curve)


def target_series(out: SimOutput, disease: str) -> ad.Value:
    """The simulated analogue of the observed series for this disease."""
    return out.deaths if disease == "covid" else out.infections


def simulate_blocks(theta: ad.Value, scenario: Scenario, disease: str,
                    steps: int, seed: int, temperature: float,
                    tape: Optional[ad.Tape]) -> ad.Value:
    params = params_from_blocks(theta, disease, scenario.base_params)
    out = run_simulation(scenario.population, scenario.network, params, steps,
                         mode="relaxed", seed=seed, temperature=temperature,
                         tape=tape)
    return target_series(out, disease)


def clip_gradients(grads: dict, max_norm: float) -> dict:
    """Scale the whole gradient down so its global norm is at most max_norm.

    The simulated series responds exponentially to transmission parameters,
    so occasional huge gradients are expected; clipping keeps one bad epoch
    from throwing the optimizer into a saturated corner of the bounds.
    """
    total = math.sqrt(sum(float((np.asarray(g) ** 2).sum())
                          for g in grads.values() if g is not None))
    if total <= max_norm or total == 0.0:
        return grads
    scale = max_norm / total
    return {k: (None if g is None else np.asarray(g) * scale)
            for k, g in grads.items()}


def _step_if_informative(tape: ad.Tape, loss: ad.Value, opt, grads_fn,
                         context: str, max_grad_norm: Optional[float] = None
                         ) -> bool:
    """Backward + update, unless the loss has no tape dependence at all.

    A zero-seeded run produces a constant series; the gradient is genuinely
    zero there, so the update is skipped rather than fabricated.
    """
    if loss.tape is None:
        logger.warning("%s: objective locally flat, update skipped", context)
        return False
    tape.backward(loss)
    grads = grads_fn()
    if max_grad_norm is not None:
        grads = clip_gradients(grads, max_grad_norm)
    return opt.step(grads)


def bounded_theta(logits: ad.Value, disease: str) -> ad.Value:
    lo, hi = disease_bounds(disease)
    weeks = logits.data.shape[0]
    lo_t = np.tile(lo, (weeks, 1))
    span_t = np.tile(hi - lo, (weeks, 1))
    return ad.constant(lo_t) + ad.constant(span_t) * ad.sigmoid(logits)


# ---------------------------------------------------------------------------
# calibration modes
# ---------------------------------------------------------------------------


def calibrate_direct(episode: Episode, scenario: Scenario,
                     config: TrainConfig) -> TrainResult:
    """Optimize the weekly parameter blocks themselves.

    Bounds are enforced by keeping unconstrained logits and mapping through a
    scaled sigmoid, so every block handed to the simulator is feasible.
    """
    if episode.steps % 7 != 0:
        raise ValueError("target length must be a multiple of seven days")
    lo, hi = disease_bounds(episode.disease)
    weeks = episode.steps // 7
    logits = stream(config.seed, "calibrate-direct").normal(size=(weeks, lo.size))

    opt = make_optimizer(config.optimizer, {"logits": logits}, config.learning_rate)
    history: list = []
    best_loss = math.inf
    best_epoch = -1
    best_theta = np.asarray(lo + (hi - lo) / (1 + np.exp(-logits)))

    for epoch in range(config.epochs):
        tape = ad.Tape()
        logits_v = tape.leaf(logits)
        theta = bounded_theta(logits_v, episode.disease)
        series = simulate_blocks(theta, scenario, episode.disease,
                                 episode.steps, config.seed,
                                 config.temperature, tape)
        loss = mse_loss(series, episode.target)
        loss_val = float(loss.data)
        history.append((epoch, episode.name, loss_val))
        if loss_val < best_loss:
            best_loss = loss_val
            best_epoch = epoch
            best_theta = theta.data.copy()
        _step_if_informative(tape, loss, opt,
                             lambda: {"logits": logits_v.grad},
                             episode.name, config.max_grad_norm)

    return TrainResult(theta=best_theta, weights=None, history=history,
                       best_loss=best_loss, best_epoch=best_epoch)


def _network_setup(episode: Episode, config: TrainConfig,
                   net_config: Optional[cn.CalibNetConfig],
                   weights: Optional[dict]):
    if net_config is None:
        net_config = cn.CalibNetConfig.for_disease(
            episode.disease, input_dim=episode.features.shape[1])
    if episode.features.shape[1] != net_config.input_dim:
        raise ValueError(
            f"region {episode.name!r}: feature dim {episode.features.shape[1]} "
            f"!= network input dim {net_config.input_dim}")
    if weights is None:
        weights = cn.init_weights(net_config, seed=config.seed)
    else:
        weights = {k: np.array(v, dtype=np.float64) for k, v in weights.items()}
    return net_config, weights


def calibrate_network(episode: Episode, scenario: Scenario, config: TrainConfig,
                      net_config: Optional[cn.CalibNetConfig] = None,
                      weights: Optional[dict] = None) -> TrainResult:
    """Optimize network weights; the network emits the weekly blocks."""
    net_config, weights = _network_setup(episode, config, net_config, weights)
    weeks = n_week_blocks(episode.steps)

    opt = make_optimizer(config.optimizer, weights, config.learning_rate)
    history: list = []
    best_loss = math.inf
    best_epoch = -1
    best_weights = {k: v.copy() for k, v in weights.items()}
    best_theta: Optional[np.ndarray] = None

    for epoch in range(config.epochs):
        tape = ad.Tape()
        leaves = cn.weights_as_leaves(weights, tape)
        theta = cn.forward(episode.features, weeks, net_config, leaves)
        series = simulate_blocks(theta, scenario, episode.disease,
                                 episode.steps, config.seed,
                                 config.temperature, tape)
        loss = mse_loss(series, episode.target)
        loss_val = float(loss.data)
        history.append((epoch, episode.name, loss_val))
        if loss_val < best_loss:
            best_loss = loss_val
            best_epoch = epoch
            best_weights = {k: v.copy() for k, v in weights.items()}
            best_theta = theta.data.copy()
        _step_if_informative(tape, loss, opt,
                             lambda: {k: v.grad for k, v in leaves.items()},
                             episode.name, config.max_grad_norm)

    return TrainResult(theta=best_theta, weights=best_weights, history=history,
                       best_loss=best_loss, best_epoch=best_epoch)


def append_region_onehot(features_list: Sequence[np.ndarray]) -> list:
    """Tag each region's features with a one-hot identity column block."""
    n = len(features_list)
    out = []
    for j, feats in enumerate(features_list):
        feats = np.asarray(feats, dtype=np.float64)
        hot = np.zeros((feats.shape[0], n))
        hot[:, j] = 1.0
        out.append(np.concatenate([feats, hot], axis=1))
    return out


def calibrate_joint(episodes: Sequence[Episode], scenarios: Sequence[Scenario],
                    config: TrainConfig,
                    net_config: Optional[cn.CalibNetConfig] = None,
                    weights: Optional[dict] = None,
                    seeds: Optional[Sequence[int]] = None) -> TrainResult:
    """One shared network across regions; loss is the mean of region losses.

    Region identity should already be present in the features (see
    append_region_onehot). With a single region this reduces exactly to
    calibrate_network. By default every region's forward uses the same
    seed, so identical regions stay exactly symmetric; pass `seeds` to
    give each region its own simulation stream instead.
    """
    if len(episodes) == 0:
        raise ValueError("need at least one region")
    if len(episodes) != len(scenarios):
        raise ValueError("episodes and scenarios counts differ")
    if seeds is not None and len(seeds) != len(episodes):
        raise ValueError("seeds and episodes counts differ")
    dim = episodes[0].features.shape[1]
    disease = episodes[0].disease
    for ep in episodes[1:]:
        if ep.features.shape[1] != dim:
            raise ValueError(
                f"region {ep.name!r}: feature dim {ep.features.shape[1]} != {dim}")
        if ep.disease != disease:
            raise ValueError(f"region {ep.name!r}: mixed diseases")

    net_config, weights = _network_setup(episodes[0], config, net_config, weights)

    opt = make_optimizer(config.optimizer, weights, config.learning_rate)
    history: list = []
    best_loss = math.inf
    best_epoch = -1
    best_weights = {k: v.copy() for k, v in weights.items()}

    for epoch in range(config.epochs):
        tape = ad.Tape()
        leaves = cn.weights_as_leaves(weights, tape)
        losses = []
        for idx, (ep, sc) in enumerate(zip(episodes, scenarios)):
            theta = cn.forward(ep.features, n_week_blocks(ep.steps),
                               net_config, leaves)
            sim_seed = config.seed if seeds is None else seeds[idx]
            series = simulate_blocks(theta, sc, disease, ep.steps,
                                     sim_seed, config.temperature, tape)
            losses.append(mse_loss(series, ep.target))
        total = ad.stack(losses).sum() * (1.0 / len(losses))
        for ep, region_loss in zip(episodes, losses):
            history.append((epoch, ep.name, float(region_loss.data)))
        total_val = float(total.data)
        if total_val < best_loss:
            best_loss = total_val
            best_epoch = epoch
            best_weights = {k: v.copy() for k, v in weights.items()}
        _step_if_informative(tape, total, opt,
                             lambda: {k: v.grad for k, v in leaves.items()},
                             "joint", config.max_grad_norm)

    return TrainResult(theta=None, weights=best_weights, history=history,
                       best_loss=best_loss, best_epoch=best_epoch)


# ---------------------------------------------------------------------------
# loss-history persistence
# ---------------------------------------------------------------------------


def write_loss_history(path, history: Sequence) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "region", "loss"])
        for epoch, region, loss in history:
            writer.writerow([epoch, region, repr(float(loss))])


def load_loss_history(path) -> list:
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != ["epoch", "region", "loss"]:
            raise ValueError(f"{path}: unexpected loss-history header {header}")
        for row in reader:
            rows.append((int(row[0]), row[1], float(row[2])))
    return rows
