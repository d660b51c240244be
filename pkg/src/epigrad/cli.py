"""Command-line entry point.

Commands: simulate, calibrate (--mode c|dc|jdc), forecast, bench, policy,
oracle. Global flags (--config, --seed, --threads, --out) may appear after
the command name. Every run is deterministic for a fixed seed when
--threads is 1.
"""

from __future__ import annotations

import argparse
import csv
import math
import os
import sys
import time

import numpy as np

from . import calibnet as cn
from . import config as cfgmod
from . import evaluation as ev
from . import forecast as fc
from . import oracle as orc
from . import policy as pol
from . import population as popmod
from . import training as tr
from .simulator import EpiParams, run_simulation


def _common_flags(sub: argparse.ArgumentParser):
    sub.add_argument("--config", default=None, help="run configuration file")
    sub.add_argument("--seed", type=int, default=None, help="root RNG seed")
    sub.add_argument("--threads", type=int, default=None,
                     help="worker threads (1 = bit-reproducible)")
    sub.add_argument("--out", default=None, help="output directory")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="epigrad",
        description="differentiable agent-based epidemic simulation toolkit")
    subs = parser.add_subparsers(dest="command", required=True)

    sub = subs.add_parser("simulate", help="run one forward simulation")
    _common_flags(sub)

    sub = subs.add_parser("calibrate", help="fit parameters to target series")
    _common_flags(sub)
    sub.add_argument("--mode", choices=("c", "dc", "jdc"), default=None,
                     help="direct, network, or joint-network calibration")

    sub = subs.add_parser("forecast", help="rolling real-time forecasts")
    _common_flags(sub)
    sub.add_argument("--anchors", default=None,
                     help="comma-separated window lengths in days")
    sub.add_argument("--mode", choices=("c", "dc"), default=None)
    sub.add_argument("--checkpoint", default=None,
                     help="checkpoint supplying network architecture metadata")

    sub = subs.add_parser("bench", help="time forward runs against edge count")
    _common_flags(sub)
    sub.add_argument("--edges", default=None,
                     help="comma-separated directed edge counts")

    sub = subs.add_parser("policy", help="vaccination schedule sensitivity sweep")
    _common_flags(sub)
    sub.add_argument("--efficacy", default=None,
                     help="comma-separated first-dose efficacy values")
    sub.add_argument("--seeds", type=int, default=None,
                     help="number of paired seeds")

    sub = subs.add_parser("oracle", help="tiny-instance enumeration cross-check")
    _common_flags(sub)
    return parser


# ------------------------------------------------------------- shared setup

def _load_config(args) -> cfgmod.RunConfig:
    if args.config is None:
        return cfgmod.RunConfig()
    return cfgmod.load_config(args.config)


def _resolve(args, cfg: cfgmod.RunConfig):
    seed = args.seed if args.seed is not None else cfg.get("run.seed", 0)
    threads = args.threads if args.threads is not None \
        else cfg.get("run.threads", 1)
    out = args.out if args.out is not None else cfg.get("run.out", ".")
    os.makedirs(out, exist_ok=True)
    return int(seed), int(threads), out


def _scalar_or_vector(values, default):
    if values is None:
        return default
    return values[0] if len(values) == 1 else np.asarray(values)


def _epi_params(cfg: cfgmod.RunConfig) -> EpiParams:
    kw = {}
    kw["r"] = _scalar_or_vector(cfg.get("epi.r"), 2.5)
    kw["m"] = _scalar_or_vector(cfg.get("epi.m"), 0.02)
    if "epi.i0" in cfg:
        kw["i0"] = cfg.get("epi.i0")
    for name in ("t_e", "t_i", "tau_ei", "tau_ir", "tau_im"):
        key = f"epi.{name}"
        if key in cfg:
            kw[name] = cfg.get(key)
    mult = cfg.get("epi.mortality_age_multiplier")
    if mult is not None:
        kw["mortality_age_multiplier"] = np.asarray(mult)
    return EpiParams(**kw)


def _population(cfg: cfgmod.RunConfig, seed: int, offset: int = 0):
    n = cfg.get("population.n", 1000)
    dist = cfg.get("population.age_distribution")
    if dist is None:
        pop = popmod.generate_population(n, seed=seed + offset)
    else:
        pop = popmod.generate_population(n, age_distribution=dist,
                                         seed=seed + offset)
    edges_csv = cfg.get("population.edges_csv")
    if edges_csv is not None:
        net = popmod.load_edge_csv(edges_csv, n)
    else:
        net = popmod.build_contact_network(
            n, k=cfg.get("population.network_k", 10),
            p=cfg.get("population.network_p", 0.01), seed=seed + offset)
    return pop, net


def _write_summary(path, pairs):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["key", "value"])
        for key, value in pairs:
            if isinstance(value, float):
                value = repr(value)
            writer.writerow([key, value])


# ------------------------------------------------------------------ commands

def cmd_simulate(args) -> int:
    cfg = _load_config(args)
    seed, _, out = _resolve(args, cfg)
    pop, net = _population(cfg, seed)
    params = _epi_params(cfg)
    steps = cfg.get("epi.steps", 28)
    result = run_simulation(pop, net, params, steps, mode="hard", seed=seed)
    census_path = os.path.join(out, "census.csv")
    with open(census_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "S", "E", "I", "R", "M"])
        for step, row in enumerate(result.census):
            writer.writerow([step] + [int(x) for x in row])
    _write_summary(os.path.join(out, "summary.csv"), [
        ("n", pop.n), ("steps", steps), ("seed", seed),
        ("ever_infected", result.ever_infected_count),
        ("resolved", result.resolved_count),
        ("deaths", result.deaths_count),
    ])
    print(f"wrote {census_path}")
    return 0


def _load_regions(cfg: cfgmod.RunConfig, disease: str):
    """Episodes keyed by region from the target (and optional feature) CSVs."""
    target_csv = cfg.require("calibrate.target_csv")
    targets = ev.load_target_csv(target_csv)
    features_csv = cfg.get("calibrate.features_csv")
    feats = ev.load_feature_csv(features_csv) if features_csv else None
    episodes = []
    for region in sorted(targets):
        start, series = targets[region]
        if feats is None:
            mat = np.zeros((series.shape[0], 1))
        else:
            if region not in feats:
                raise ValueError(f"region {region!r} missing from "
                                 f"{features_csv}")
            fstart, _, mat = feats[region]
            if fstart != start or mat.shape[0] != series.shape[0]:
                raise ValueError(
                    f"region {region!r}: feature rows do not line up with "
                    f"the target series ({fstart} vs {start}, "
                    f"{mat.shape[0]} vs {series.shape[0]} days)")
        episodes.append(tr.Episode(mat, series, disease=disease, name=region,
                                   start_date=start))
    return episodes


def _train_config(cfg: cfgmod.RunConfig, seed: int) -> tr.TrainConfig:
    return tr.TrainConfig(
        epochs=cfg.get("calibrate.epochs", 300),
        learning_rate=cfg.get("calibrate.learning_rate", 1e-2),
        optimizer=cfg.get("calibrate.optimizer", "adam"),
        seed=seed,
        temperature=cfg.get("calibrate.temperature", 0.5))


def cmd_calibrate(args) -> int:
    cfg = _load_config(args)
    seed, _, out = _resolve(args, cfg)
    mode = args.mode or cfg.get("calibrate.mode")
    if mode not in ("c", "dc", "jdc"):
        raise ValueError("calibration mode required: --mode c|dc|jdc")
    disease = cfg.get("calibrate.disease", "covid")
    episodes = _load_regions(cfg, disease)
    train_cfg = _train_config(cfg, seed)
    scenarios = []
    for idx, ep in enumerate(episodes):
        pop, net = _population(cfg, seed, offset=idx)
        scenarios.append(tr.Scenario(pop, net, _epi_params(cfg)))

    history = []
    checkpoint = {}
    meta = {"mode": mode, "disease": disease, "seed": str(seed)}
    if mode == "c":
        for ep, sc in zip(episodes, scenarios):
            res = tr.calibrate_direct(ep, sc, train_cfg)
            history.extend((e, ep.name, l) for e, _, l in res.history)
            checkpoint[f"theta.{ep.name}"] = res.theta
    elif mode == "dc":
        for ep, sc in zip(episodes, scenarios):
            net_config = cn.CalibNetConfig.for_disease(
                disease, input_dim=ep.features.shape[1])
            res = tr.calibrate_network(ep, sc, train_cfg, net_config)
            history.extend((e, ep.name, l) for e, _, l in res.history)
            for name, arr in res.weights.items():
                checkpoint[f"{ep.name}.{name}"] = arr
            meta["input_dim"] = str(ep.features.shape[1])
    else:
        if len(episodes) > 1:
            # region identity enters as a one-hot feature block; pointless
            # (and would break the dc-reduction property) for one region
            onehot = tr.append_region_onehot([ep.features for ep in episodes])
            episodes = [tr.Episode(f, ep.target, ep.disease, ep.name,
                                   ep.start_date)
                        for f, ep in zip(onehot, episodes)]
        net_config = cn.CalibNetConfig.for_disease(
            disease, input_dim=episodes[0].features.shape[1])
        res = tr.calibrate_joint(episodes, scenarios, train_cfg, net_config)
        history.extend(res.history)
        checkpoint.update(res.weights)
        meta["input_dim"] = str(episodes[0].features.shape[1])

    loss_path = os.path.join(out, "loss_history.csv")
    tr.write_loss_history(loss_path, history)
    ckpt_path = os.path.join(out, "checkpoint.txt")
    cn.save_weights(ckpt_path, checkpoint, meta=meta)
    tail = f" (final loss {history[-1][2]:.6g})" if history else ""
    print(f"wrote {ckpt_path} and {loss_path}{tail}")
    return 0


def cmd_forecast(args) -> int:
    cfg = _load_config(args)
    seed, _, out = _resolve(args, cfg)
    anchors = cfgmod._ints(args.anchors) if args.anchors \
        else cfg.get("forecast.anchors")
    if not anchors:
        raise ValueError("no anchors given: pass --anchors or set "
                         "forecast.anchors")
    mode = args.mode or cfg.get("forecast.mode", "c")
    disease = cfg.get("calibrate.disease", "covid")
    episodes = _load_regions(cfg, disease)
    train_cfg = _train_config(cfg, seed)

    net_config = None
    ckpt = args.checkpoint or cfg.get("forecast.checkpoint")
    if ckpt is not None and mode == "dc":
        _, meta = cn.load_weights(ckpt)
        dim = int(meta.get("input_dim", episodes[0].features.shape[1]))
        net_config = cn.CalibNetConfig.for_disease(disease, input_dim=dim)

    forecast_rows = []
    metric_rows = []
    for idx, ep in enumerate(episodes):
        pop, net = _population(cfg, seed, offset=idx)
        scenario = tr.Scenario(pop, net, _epi_params(cfg))
        forecasts = fc.real_time_forecast(ep, scenario, mode, anchors,
                                          train_cfg, net_config)
        forecast_rows.extend(fc.forecast_rows(forecasts))
        preds, truth = fc.forecast_truth_pairs(ep, forecasts)
        if preds.size:
            metric_rows.extend(ev.compute_metrics(preds, truth).rows(ep.name))
    if not forecast_rows:
        raise ValueError("every anchor was outside the usable data range")
    ev.write_forecast_csv(os.path.join(out, "forecast.csv"), forecast_rows)
    ev.write_metrics_csv(os.path.join(out, "metrics.csv"), metric_rows)
    print(f"wrote {len(forecast_rows)} forecast rows")
    return 0


def cmd_bench(args) -> int:
    cfg = _load_config(args)
    seed, _, out = _resolve(args, cfg)
    edge_counts = cfgmod._ints(args.edges) if args.edges \
        else cfg.get("bench.edges", [10000, 50000, 100000])
    steps = cfg.get("bench.steps", 133)
    k = cfg.get("population.network_k", 10)
    params = _epi_params(cfg)
    rows = []
    for edges in edge_counts:
        n = max(edges // k, k + 1)
        pop = popmod.generate_population(n, seed=seed)
        net = popmod.build_contact_network(n, k=k, p=0.01, seed=seed)
        t0 = time.perf_counter()
        run_simulation(pop, net, params, steps, mode="hard", seed=seed)
        elapsed = time.perf_counter() - t0
        rows.append((net.src.shape[0], elapsed))
        print(f"{net.src.shape[0]} directed edges: {elapsed:.3f}s")
    with open(os.path.join(out, "bench.csv"), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["edges", "seconds"])
        for edges, secs in rows:
            writer.writerow([edges, repr(secs)])
    summary = [("steps", steps), ("runs", len(rows))]
    if len(rows) >= 2:
        xs = np.array([r[0] for r in rows], dtype=np.float64)
        ys = np.array([r[1] for r in rows])
        slope, intercept = np.polyfit(xs, ys, 1)
        pred = slope * xs + intercept
        ss_res = float(((ys - pred) ** 2).sum())
        ss_tot = float(((ys - ys.mean()) ** 2).sum())
        r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
        summary += [("slope_s_per_edge", float(slope)),
                    ("intercept_s", float(intercept)), ("r_squared", r2)]
        print(f"linear fit: slope={slope:.3e} s/edge, R^2={r2:.4f}")
    else:
        print("single edge count: linear fit skipped")
    _write_summary(os.path.join(out, "bench_summary.csv"), summary)
    return 0


def cmd_policy(args) -> int:
    cfg = _load_config(args)
    seed, threads, out = _resolve(args, cfg)
    efficacies = cfgmod._floats(args.efficacy) if args.efficacy \
        else cfg.get("policy.efficacies")
    if not efficacies:
        raise ValueError("no efficacy values: pass --efficacy or set "
                         "policy.efficacies")
    n_seeds = args.seeds if args.seeds is not None \
        else cfg.get("policy.seeds", 10)
    pop, net = _population(cfg, seed)
    params = _epi_params(cfg)
    shared = {}
    for name in ("second_dose_efficacy", "vaccination_rate", "burn_in_days",
                 "burn_in_infections", "horizon_days", "vaccine_mode",
                 "test_probability", "quarantine_compliance"):
        key = f"policy.{name}"
        if key in cfg:
            shared[name] = cfg.get(key)
    p1 = pol.PolicyConfig(strategy="standard", **shared)
    p2 = pol.PolicyConfig(strategy="delayed", **shared)
    if len(efficacies) == 1:
        outcome = pol.run_policy_experiment(pop, net, params, p1, p2,
                                            efficacies[0],
                                            seeds=range(n_seeds),
                                            workers=threads)
        rows = [(efficacies[0], outcome.relative_mortality,
                 pol.decision_for(outcome.relative_mortality), n_seeds)]
    else:
        rows = pol.sensitivity_sweep(pop, net, params, p1, p2, efficacies,
                                     seeds=range(n_seeds), workers=threads)
    path = os.path.join(out, "policy_sweep.csv")
    pol.write_sweep_csv(path, rows)
    for eff, ratio, decision, _ in rows:
        print(f"efficacy {eff:.2f}: relative mortality {ratio:.4f} -> {decision}")
    return 0


def cmd_oracle(args) -> int:
    cfg = _load_config(args)
    seed, _, _ = _resolve(args, cfg)
    n = cfg.get("oracle.n", 6)
    steps = cfg.get("oracle.steps", 3)
    if n > 10 or steps > 3:
        raise ValueError(f"enumeration guard: need n <= 10 and steps <= 3, "
                         f"got n={n}, steps={steps}")
    samples = cfg.get("oracle.samples", 20000)
    relaxed_samples = cfg.get("oracle.relaxed_samples", 2000)
    params = _epi_params(cfg)
    if isinstance(params.r, np.ndarray) or isinstance(params.m, np.ndarray):
        raise ValueError("oracle comparison uses scalar r and m")
    if params.tau_ir != params.tau_im:
        raise ValueError("oracle requires epi.tau_ir == epi.tau_im")

    # ring, deduplicated so n=2 collapses to a single undirected edge
    edges = sorted({tuple(sorted((i, (i + 1) % n))) for i in range(n)})
    net = popmod.network_from_edges(n, edges)
    base = popmod.generate_population(n, seed=seed)
    exact = orc.exact_expectations(
        n=n, edges=edges, ages=base.age.tolist(), seeded=[0], steps=steps,
        r=float(params.r), susceptibility=np.asarray(params.susceptibility).tolist(),
        t_e=params.t_e, t_i=params.t_i, tau_ei=params.tau_ei,
        tau_ir=params.tau_ir, tau_im=params.tau_im, m=float(params.m),
        infectiousness=params.curve.table(steps + 2).tolist())

    def seeded_pop():
        p2 = base.copy()
        p2.stage[0] = popmod.E
        p2.exposure[0] = 0
        return p2

    run_params = EpiParams(
        r=float(params.r), m=float(params.m), i0=None,
        susceptibility=params.susceptibility, t_e=params.t_e, t_i=params.t_i,
        tau_ei=params.tau_ei, tau_ir=params.tau_ir, tau_im=params.tau_im,
        curve=params.curve)
    mc = np.empty(samples)
    for s in range(samples):
        out = run_simulation(seeded_pop(), net, run_params, steps,
                             mode="hard", seed=seed + s)
        mc[s] = out.ever_infected_count
    relaxed = np.empty(relaxed_samples)
    for s in range(relaxed_samples):
        out = run_simulation(seeded_pop(), net, run_params, steps,
                             mode="relaxed", seed=seed + s, temperature=0.1)
        relaxed[s] = float(out.infections.data[-1])

    mc_mean = float(mc.mean())
    rel_mean = float(relaxed.mean())
    mc_se = float(mc.std(ddof=1) / math.sqrt(samples))
    print(f"instance: ring n={n}, steps={steps}, r={params.r}, m={params.m}")
    print(f"exact ever-infected     : {exact.ever_infected:.6f}")
    print(f"monte-carlo ({samples} runs): {mc_mean:.6f} "
          f"(delta {mc_mean - exact.ever_infected:+.6f}, se {mc_se:.6f})")
    print(f"relaxed tau=0.1 ({relaxed_samples} runs): {rel_mean:.6f} "
          f"(delta {rel_mean - exact.ever_infected:+.6f})")
    print(f"exact yhat (m * ever)   : {exact.yhat_ever:.6f}")
    return 0


_COMMANDS = {
    "simulate": cmd_simulate,
    "calibrate": cmd_calibrate,
    "forecast": cmd_forecast,
    "bench": cmd_bench,
    "policy": cmd_policy,
    "oracle": cmd_oracle,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return _COMMANDS[args.command](args)
    except (ValueError, KeyError, FileNotFoundError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
