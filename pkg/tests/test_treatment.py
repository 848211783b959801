"""Dose policies: bounds, treated rollouts, objective, optimization."""

import math

import numpy as np
import pytest

from leno.domains import eigenbasis_for, unit_square_mesh
from leno.errors import InputError, StageOrderError
from leno.networks import LrSchedule, init_mlp
from leno.simulate import RDParams, make_cohort
from leno import training as tr
from leno import treatment as tx


@pytest.fixture(scope="module")
def small_basis():
    return eigenbasis_for(unit_square_mesh(8), 16)


@pytest.fixture(scope="module")
def decline_cohort(small_basis):
    # cognition falls as neurodegeneration accumulates, so dosing can help
    return make_cohort(
        RDParams(lambda_CN=-0.1), small_basis, 4, times=np.linspace(0, 10, 21),
        inner_dt=5e-3, stages=[0.0, 0.33, 0.66, 1.0],
    )


@pytest.fixture(scope="module")
def trained(small_basis, decline_cohort):
    model = tr.new_model(small_basis)
    cfg = tr.TrainConfig(epochs=600, seed=0, hidden=(64, 64))
    for sp in ("A", "tau", "N"):
        model, _ = tr.train_species(sp, decline_cohort, small_basis, model, cfg)
    model, _ = tr.train_cognitive(decline_cohort, small_basis, model, cfg)
    return model


def linear_model(basis, rate=0.5, alpha=0.3, c_rate=0.0):
    """Hand-built model: each drive is -rate * own coefficients, C-rate const."""
    model = tr.new_model(basis)
    p = basis.n_modes
    for sp in ("A", "tau", "N"):
        k = len(tr.SPECIES_INPUTS[sp])
        net = init_mlp([k * p, p], seed=0)
        net.weights[0][:] = 0.0
        net.weights[0][-p:, :] = -rate * np.eye(p)
        net.biases[0][:] = 0.0
        model.nets[sp] = net
        model.log_alpha[sp] = math.log(alpha)
    cnet = init_mlp([p, 1], seed=1)
    cnet.weights[0][:] = 0.0
    cnet.biases[0][:] = c_rate
    model.nets["C"] = cnet
    return model


def constant_ics(basis, level=0.5):
    return {s: np.full(basis.n_nodes, level) for s in ("A", "tau", "N")}


# ---------------------------------------------------------------------------
# policy construction and dose bounds
# ---------------------------------------------------------------------------

def test_scenario_arm_map():
    assert tx.arms_for("none") == ()
    assert tx.arms_for("anti_A") == ("A",)
    assert tx.arms_for("anti_tau") == ("tau",)
    assert tx.arms_for("combo") == ("A", "tau")
    with pytest.raises(InputError, match="scenario"):
        tx.arms_for("placebo")


def test_inactive_arms_emit_exact_zero():
    t = np.linspace(0, 20, 11)
    assert (tx.new_policy("none").dose("A", t) == 0.0).all()
    assert (tx.new_policy("none").dose("tau", t) == 0.0).all()
    anti_a = tx.new_policy("anti_A", seed=4)
    assert (anti_a.dose("tau", t) == 0.0).all()
    assert (anti_a.dose("A", t) > 0.0).all()


def test_active_doses_strictly_inside_bounds():
    policy = tx.new_policy("combo", d_max_A=0.5, d_max_tau=0.3, seed=2)
    # drive the sigmoids deep into saturation on both sides
    t = np.linspace(-200, 200, 401)
    for arm, d_max in (("A", 0.5), ("tau", 0.3)):
        d = policy.dose(arm, t)
        assert (d > 0.0).all()
        assert (d < d_max).all()


def test_policy_validation():
    with pytest.raises(InputError, match="positive"):
        tx.new_policy("combo", d_max_A=-1.0)
    bad = init_mlp([1, 8, 1], seed=0)  # linear output
    good = init_mlp([1, 8, 1], output_activation="sigmoid", seed=0)
    with pytest.raises(InputError, match="sigmoid"):
        tx.TreatmentPolicy("combo", net_A=bad, net_tau=good)
    wide = init_mlp([2, 8, 1], output_activation="sigmoid", seed=0)
    with pytest.raises(InputError, match="scalar"):
        tx.TreatmentPolicy("combo", net_A=wide, net_tau=good)


def test_constant_policy_emits_requested_dose():
    policy = tx.constant_policy("combo", dose_A=0.1, dose_tau=0.2)
    t = np.linspace(0, 50, 7)
    assert policy.dose("A", t) == pytest.approx(0.1, rel=1e-12)
    assert policy.dose("tau", t) == pytest.approx(0.2, rel=1e-12)
    with pytest.raises(InputError, match="constant dose"):
        tx.constant_policy("anti_A", dose_A=0.7, d_max_A=0.5)


def test_config_validation():
    with pytest.raises(InputError, match="penalties"):
        tx.TreatmentConfig(eta_A=-0.1).validate()
    with pytest.raises(InputError, match="horizon"):
        tx.TreatmentConfig(t_start=5.0, horizon=5.0).validate()
    with pytest.raises(InputError, match="step"):
        tx.TreatmentConfig(n_steps=0).validate()


# ---------------------------------------------------------------------------
# treated rollout
# ---------------------------------------------------------------------------

def test_none_rollout_bitwise_equals_prediction(trained, small_basis, decline_cohort):
    ic = {s: decline_cohort[1].fields[s][0] for s in ("A", "tau", "N")}
    c0 = float(decline_cohort[1].cognitive[0])
    times = np.linspace(0, 10, 21)
    roll = tx.treated_rollout(
        trained, tx.new_policy("none"), small_basis, ic, times, c0=c0
    )
    pred = tr.predict(trained, small_basis, ic, times, c0=c0)
    for s in pred.fields:
        assert np.array_equal(roll.fields[s], pred.fields[s])
    assert np.array_equal(roll.cognitive, pred.cognitive)


def test_constant_dose_lowers_amyloid_pointwise(small_basis):
    model = linear_model(small_basis, rate=0.5, alpha=0.3)
    ic = constant_ics(small_basis)
    times = np.linspace(0, 5, 11)
    policy = tx.constant_policy("anti_A", dose_A=0.2)
    treated = tx.treated_rollout(model, policy, small_basis, ic, times)
    untreated = tx.treated_rollout(
        model, tx.new_policy("none"), small_basis, ic, times
    )
    a_t, a_u = treated.fields["A"], untreated.fields["A"]
    assert (a_t <= a_u + 1e-12).all()
    assert (a_t[-1] < a_u[-1]).all()
    # untargeted species see no dose and identical inputs here (decoupled)
    assert np.array_equal(treated.fields["tau"], untreated.fields["tau"])


def test_treated_mass_reduction_on_trained_model(trained, small_basis, decline_cohort):
    ic = {s: decline_cohort[0].fields[s][0] for s in ("A", "tau", "N")}
    times = np.linspace(0, 10, 21)
    policy = tx.constant_policy("anti_A", dose_A=0.2)
    treated = tx.treated_rollout(trained, policy, small_basis, ic, times)
    untreated = tx.treated_rollout(
        trained, tx.new_policy("none"), small_basis, ic, times
    )
    assert treated.fields["A"][-1].mean() < untreated.fields["A"][-1].mean()


def test_treated_rollout_validation(trained, small_basis, decline_cohort):
    ic = {s: decline_cohort[0].fields[s][0] for s in ("A", "tau", "N")}
    policy = tx.new_policy("none")
    with pytest.raises(StageOrderError):
        tx.treated_rollout(
            tr.new_model(small_basis), policy, small_basis, ic, np.array([0.0, 1.0])
        )
    with pytest.raises(InputError, match="increasing"):
        tx.treated_rollout(trained, policy, small_basis, ic, np.array([0.0, 0.0]))
    with pytest.raises(InputError, match="missing initial"):
        tx.treated_rollout(
            trained, policy, small_basis, {"A": ic["A"]}, np.array([0.0, 1.0])
        )


# ---------------------------------------------------------------------------
# objective
# ---------------------------------------------------------------------------

def test_objective_zero_dose_is_minus_terminal_cognition(small_basis):
    model = linear_model(small_basis, c_rate=-0.02)
    ic = constant_ics(small_basis)
    roll = tx.treated_rollout(
        model, tx.new_policy("none"), small_basis, ic, np.linspace(0, 10, 21), c0=0.8
    )
    config = tx.TreatmentConfig(eta_A=3.7, eta_tau=0.4)
    assert tx.objective(tx.new_policy("none"), roll, config) == -roll.cognitive[-1]


def test_objective_zero_penalty_ignores_doses(small_basis):
    model = linear_model(small_basis, c_rate=-0.02)
    ic = constant_ics(small_basis)
    policy = tx.constant_policy("combo", dose_A=0.3, dose_tau=0.2)
    roll = tx.treated_rollout(
        model, policy, small_basis, ic, np.linspace(0, 10, 21), c0=0.8
    )
    config = tx.TreatmentConfig(eta_A=0.0, eta_tau=0.0)
    assert tx.objective(policy, roll, config) == -roll.cognitive[-1]


def test_objective_constant_dose_quadrature(small_basis):
    # integral of 1.0 * 0.1^2 over [0, 10] is 0.1 exactly
    model = linear_model(small_basis)
    ic = constant_ics(small_basis)
    policy = tx.constant_policy("anti_A", dose_A=0.1)
    roll = tx.treated_rollout(
        model, policy, small_basis, ic, np.linspace(0, 10, 41), c0=0.5
    )
    config = tx.TreatmentConfig(eta_A=1.0, eta_tau=0.0)
    penalty = tx.objective(policy, roll, config) + roll.cognitive[-1]
    assert penalty == pytest.approx(0.1, abs=1e-6)


def test_objective_requires_cognition(small_basis):
    model = linear_model(small_basis)
    roll = tx.treated_rollout(
        model, tx.new_policy("none"), small_basis, constant_ics(small_basis),
        np.linspace(0, 5, 6),
    )
    with pytest.raises(InputError, match="cognitive"):
        tx.objective(tx.new_policy("none"), roll, tx.TreatmentConfig())


# ---------------------------------------------------------------------------
# policy optimization
# ---------------------------------------------------------------------------

def test_optimized_combo_beats_zero_dose(trained, small_basis, decline_cohort):
    ic = {s: decline_cohort[1].fields[s][0] for s in ("A", "tau", "N")}
    c0 = float(decline_cohort[1].cognitive[0])
    config = tx.TreatmentConfig(
        eta_A=0.01, eta_tau=0.01, horizon=10.0, n_steps=25, epochs=120,
        seed=0, schedule=LrSchedule(base=1e-2, interval=60),
    )
    base_policy, base_trace = tx.optimize_policy(
        trained, small_basis, ic, c0, config, "none"
    )
    assert len(base_trace) == 1
    base_roll = tx.treated_rollout(
        trained, base_policy, small_basis, ic, config.grid(), c0=c0
    )
    assert base_trace[0] == -base_roll.cognitive[-1]

    policy, trace = tx.optimize_policy(trained, small_basis, ic, c0, config, "combo")
    assert len(trace) == config.epochs
    assert np.isfinite(trace).all()
    roll = tx.treated_rollout(trained, policy, small_basis, ic, config.grid(), c0=c0)
    obj = tx.objective(policy, roll, config)
    # the returned policy is the best seen during training
    assert obj == pytest.approx(min(trace), rel=1e-9)
    assert obj <= base_trace[0]
    assert roll.cognitive[-1] >= base_roll.cognitive[-1]
    for arm, d_max in (("A", config.d_max_A), ("tau", config.d_max_tau)):
        d = policy.dose(arm, config.grid())
        assert (d > 0.0).all() and (d < d_max).all()


def test_huge_penalty_drives_doses_to_zero(trained, small_basis, decline_cohort):
    ic = {s: decline_cohort[1].fields[s][0] for s in ("A", "tau", "N")}
    c0 = float(decline_cohort[1].cognitive[0])
    config = tx.TreatmentConfig(
        eta_A=1e6, eta_tau=1e6, horizon=10.0, n_steps=25, epochs=120,
        seed=0, schedule=LrSchedule(base=1e-2, interval=60),
    )
    policy, trace = tx.optimize_policy(trained, small_basis, ic, c0, config, "combo")
    for arm, d_max in (("A", config.d_max_A), ("tau", config.d_max_tau)):
        d = policy.dose(arm, config.grid())
        assert d.mean() <= 0.01 * d_max
        assert (d > 0.0).all()


def test_single_arm_optimization_keeps_other_arm_zero(small_basis):
    # constant cognition rate: the objective reduces to the dose penalty
    model = linear_model(small_basis, c_rate=-0.02)
    ic = constant_ics(small_basis)
    config = tx.TreatmentConfig(
        eta_A=1.0, eta_tau=1.0, horizon=5.0, n_steps=10, epochs=40,
        schedule=LrSchedule(base=1e-2, interval=40),
    )
    policy, trace = tx.optimize_policy(model, small_basis, ic, 0.5, config, "anti_tau")
    t = config.grid()
    assert (policy.dose("A", t) == 0.0).all()
    assert (policy.dose("tau", t) > 0.0).all()
    assert np.isfinite(trace).all()
    # penalty-only objective: doses should have moved toward zero
    assert min(trace) < trace[0]


def test_optimize_rejects_untrained_and_bad_config(small_basis):
    ic = constant_ics(small_basis)
    with pytest.raises(StageOrderError):
        tx.optimize_policy(
            tr.new_model(small_basis), small_basis, ic, 0.5,
            tx.TreatmentConfig(), "combo",
        )
    model = linear_model(small_basis)
    with pytest.raises(InputError, match="penalties"):
        tx.optimize_policy(
            model, small_basis, ic, 0.5, tx.TreatmentConfig(eta_A=-1.0), "combo"
        )
