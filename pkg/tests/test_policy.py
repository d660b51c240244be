"""Dose queues, vaccine effects, and paired-policy experiments.

The queue ordering oracle is the published six-person worked example:
Adam (78, needs dose 1), Betty (78, due dose 2), Charlie (68, dose 1),
David (68, dose 2), Eleanor (40, dose 1), Frank (40, dose 2). Standard
scheduling serves the dose-2 tier first, oldest first; the delayed
strategy serves every dose-1 candidate before any dose 2.
"""

import logging

import numpy as np
import pytest

from epigrad import policy as pol
from epigrad.population import build_contact_network, generate_population
from epigrad.simulator import EpiParams

ADAM, BETTY, CHARLIE, DAVID, ELEANOR, FRANK = range(6)


def _six_agents(day=30):
    # age bins for 78 / 78 / 68 / 68 / 40 / 40 year olds
    ages = np.array([7, 7, 6, 6, 4, 4])
    state = pol.VaccinationState(6)
    for agent in (BETTY, DAVID, FRANK):
        state.give_dose(agent, 0)
    return ages, state, day


def test_standard_queue_matches_worked_example():
    ages, state, day = _six_agents()
    order = pol.vaccination_queue(ages, state, "standard", day,
                                  pol.PolicyConfig())
    assert list(order) == [BETTY, DAVID, FRANK, ADAM, CHARLIE, ELEANOR]


def test_delayed_queue_matches_worked_example():
    ages, state, day = _six_agents()
    order = pol.vaccination_queue(ages, state, "delayed", day,
                                  pol.PolicyConfig(strategy="delayed"))
    assert list(order) == [ADAM, CHARLIE, ELEANOR, BETTY, DAVID, FRANK]


def test_second_dose_needs_full_interval():
    ages, state, _ = _six_agents()
    order = pol.vaccination_queue(ages, state, "standard", 20,
                                  pol.PolicyConfig())
    # nobody is 21 days past dose 1 yet, so only the dose-1 tier shows up
    assert list(order) == [ADAM, CHARLIE, ELEANOR]


def test_dead_agents_leave_queue():
    ages, state, day = _six_agents()
    alive = np.array([True, False, True, True, True, True])
    order = pol.vaccination_queue(ages, state, "standard", day,
                                  pol.PolicyConfig(), alive=alive)
    assert BETTY not in order
    assert list(order)[0] == DAVID


def test_daily_budget():
    cfg = pol.PolicyConfig()
    assert pol.daily_doses(10000, cfg) == 30
    assert pol.daily_doses(100, pol.PolicyConfig(vaccination_rate=0.0)) == 0


def test_dose_bookkeeping_and_errors():
    state = pol.VaccinationState(2)
    state.give_dose(0, 5)
    assert state.doses[0] == 1 and state.day1[0] == 5
    with pytest.raises(ValueError, match="after the first"):
        state.give_dose(0, 5)        # same-day second dose forbidden
    state.give_dose(0, 30)
    assert state.doses[0] == 2 and state.day2[0] == 30
    with pytest.raises(ValueError, match="fully dosed"):
        state.give_dose(0, 40)


def test_efficacy_timeline():
    cfg = pol.PolicyConfig(first_dose_efficacy=0.6, second_dose_efficacy=0.9)
    state = pol.VaccinationState(1)
    state.give_dose(0, 5)
    assert state.efficacy(16, cfg)[0] == 0.0      # 11 days post-dose
    assert state.efficacy(17, cfg)[0] == 0.6      # 12 days post-dose
    state.give_dose(0, 30)
    assert state.efficacy(41, cfg)[0] == 0.6      # second dose not active yet
    assert state.efficacy(42, cfg)[0] == 0.9


def test_vaccine_effect_modes():
    state = pol.VaccinationState(1)
    state.give_dose(0, 0)
    none_cfg = pol.PolicyConfig(first_dose_efficacy=0.0)
    sus, mort = pol.apply_vaccine_effect(state, 20, none_cfg)
    assert sus[0] == 1.0 and mort[0] == 1.0       # efficacy 0: no change

    full = pol.PolicyConfig(first_dose_efficacy=1.0)
    sus, mort = pol.apply_vaccine_effect(state, 20, full)
    assert mort[0] == 0.0                         # cannot take the fatal route
    assert sus[0] == 1.0                          # transmission untouched

    sterile = pol.PolicyConfig(first_dose_efficacy=1.0,
                               vaccine_mode="sterilizing")
    sus, mort = pol.apply_vaccine_effect(state, 20, sterile)
    assert sus[0] == 0.0 and mort[0] == 1.0


def test_config_validation():
    with pytest.raises(ValueError, match="strategy"):
        pol.PolicyConfig(strategy="nightly")
    with pytest.raises(ValueError, match="0, 1"):
        pol.PolicyConfig(first_dose_efficacy=1.5)
    with pytest.raises(ValueError, match="one day"):
        pol.PolicyConfig(onset_delay=0)
    with pytest.raises(ValueError, match="vaccine mode"):
        pol.PolicyConfig(vaccine_mode="leaky")


def test_every_agent_eventually_dosed():
    pop = generate_population(12, seed=0)
    cfg = pol.PolicyConfig(vaccination_rate=0.2, burn_in_days=0,
                           test_probability=0.0)
    ctrl = pol.VaccinationController(cfg, pop.age, seed=0)
    for t in range(40):
        ctrl.before_step(t, pop)
    assert (ctrl.state.doses == 2).all()

    cfg_d = pol.PolicyConfig(strategy="delayed", vaccination_rate=0.2,
                             burn_in_days=0, test_probability=0.0)
    ctrl_d = pol.VaccinationController(cfg_d, pop.age, seed=0)
    for t in range(40):
        ctrl_d.before_step(t, pop)
    assert (ctrl_d.state.doses >= 1).all()


def _experiment_setup(n=400, m=0.2):
    pop = generate_population(n, seed=1)
    net = build_contact_network(n, k=6, p=0.1, seed=1)
    params = EpiParams(r=4.0, m=m, i0=None, tau_ei=2.0, tau_ir=4.0,
                       tau_im=6.0)
    return pop, net, params


def _short_cfg(**over):
    base = dict(burn_in_days=5, horizon_days=20, burn_in_infections=8)
    base.update(over)
    return pol.PolicyConfig(**base)


def test_identical_policies_tie_exactly():
    pop, net, params = _experiment_setup()
    cfg = _short_cfg()
    out = pol.run_policy_experiment(pop, net, params, cfg, cfg, 0.6,
                                    seeds=(0, 1, 2))
    assert out.mortality["P1"] > 0
    assert out.relative_mortality == 1.0
    np.testing.assert_array_equal(out.trajectories["P1"],
                                  out.trajectories["P2"])


def test_inert_policies_tie_exactly():
    pop, net, params = _experiment_setup()
    p1 = _short_cfg(vaccination_rate=0.0)
    p2 = _short_cfg(strategy="delayed", vaccination_rate=0.0)
    out = pol.run_policy_experiment(pop, net, params, p1, p2, 0.8,
                                    seeds=(3, 4))
    assert out.relative_mortality == 1.0


def test_zero_mortality_reports_nan(caplog):
    pop, net, params = _experiment_setup(m=0.0)
    cfg = _short_cfg()
    with caplog.at_level(logging.WARNING):
        out = pol.run_policy_experiment(pop, net, params, cfg, cfg, 0.6,
                                        seeds=(0,))
    assert np.isnan(out.relative_mortality)
    assert "undefined" in caplog.text


def test_quarantine_reduces_spread():
    pop, net, params = _experiment_setup()
    quarantined = _short_cfg(vaccination_rate=0.0, test_probability=1.0,
                             quarantine_compliance=0.0)
    free = _short_cfg(vaccination_rate=0.0, test_probability=0.0)
    a = pol.run_policy_experiment(pop, net, params, quarantined, quarantined,
                                  0.5, seeds=(0, 1, 2))
    b = pol.run_policy_experiment(pop, net, params, free, free, 0.5,
                                  seeds=(0, 1, 2))
    assert a.infections["P1"] < b.infections["P1"]


def test_decision_rule():
    assert pol.decision_for(0.8) == "P2"
    assert pol.decision_for(1.2) == "P1"
    assert pol.decision_for(1.0) == "tie"
    assert pol.decision_for(float("nan")) == "undefined"


def test_sweep_shape_and_csv(tmp_path):
    pop, net, params = _experiment_setup()
    p1 = _short_cfg()
    p2 = _short_cfg(strategy="delayed")
    with pytest.raises(ValueError, match="two efficacy"):
        pol.sensitivity_sweep(pop, net, params, p1, p2, [0.5], seeds=(0,))
    rows = pol.sensitivity_sweep(pop, net, params, p1, p2, [0.5, 0.8],
                                 seeds=(0, 1))
    assert len(rows) == 2
    assert rows[0][0] == 0.5 and rows[0][3] == 2
    assert all(r[2] in ("P1", "P2", "tie", "undefined") for r in rows)

    path = tmp_path / "sweep.csv"
    pol.write_sweep_csv(path, rows)
    assert pol.load_sweep_csv(path) == [
        (e, r, d, s) for e, r, d, s in rows]


def test_workers_do_not_change_results():
    pop, net, params = _experiment_setup()
    cfg1, cfg2 = _short_cfg(), _short_cfg(strategy="delayed")
    a = pol.run_policy_experiment(pop, net, params, cfg1, cfg2, 0.7,
                                  seeds=(0, 1), workers=1)
    b = pol.run_policy_experiment(pop, net, params, cfg1, cfg2, 0.7,
                                  seeds=(0, 1), workers=4)
    assert a.mortality == b.mortality
    assert a.relative_mortality == b.relative_mortality
