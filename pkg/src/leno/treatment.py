"""Dosing policies on trained operators: treated rollouts and optimization.

A dose arm is a scalar network of time with a sigmoid output scaled by the
arm's upper bound, so active arms emit doses strictly inside (0, d_max) at
every evaluation point while inactive arms emit exactly 0.  The treated
rollout subtracts dose * state from the learned drive of the targeted
species; linear clearance is a scalar multiple of the field, so applying it
to spectral coefficients is exactly equivalent to applying it node-wise.

The objective is terminal cognitive loss plus time-integrated quadratic dose
penalties: -C(T) + integral of eta_A d_A^2 + eta_tau d_tau^2 (trapezoidal).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .domains import EigenBasis
from .errors import InputError, NumericalError
from .networks import (
    AdamState,
    LrSchedule,
    MlpParams,
    adam_step,
    forward,
    forward_tape,
    init_mlp,
    lr_at,
    wrap_params,
)
from .simulate import Trajectory
from .training import SPECIES_INPUTS, LenoModel, PatientTimeScale, _imex_step_np

SCENARIOS = ("none", "anti_A", "anti_tau", "combo")

# time -> dose fraction, sigmoid output
DOSE_SIZES = [1, 128, 128, 1]


def arms_for(scenario: str) -> tuple[str, ...]:
    """Active dose arms of a scenario, in ("A", "tau") order."""
    try:
        return {
            "none": (),
            "anti_A": ("A",),
            "anti_tau": ("tau",),
            "combo": ("A", "tau"),
        }[scenario]
    except KeyError:
        raise InputError(f"unknown scenario {scenario!r}") from None


@dataclass
class TreatmentPolicy:
    """Per-arm dose schedules; nets map time to a fraction of d_max."""

    scenario: str
    net_A: MlpParams
    net_tau: MlpParams
    d_max_A: float = 0.5
    d_max_tau: float = 0.5

    def __post_init__(self):
        arms_for(self.scenario)
        if self.d_max_A <= 0 or self.d_max_tau <= 0:
            raise InputError("dose bounds must be positive")
        for net in (self.net_A, self.net_tau):
            if net.sizes[0] != 1 or net.sizes[-1] != 1:
                raise InputError(f"dose nets map a scalar to a scalar, got {net.sizes}")
            if net.output_activation != "sigmoid":
                raise InputError("dose nets need a sigmoid output")

    def net(self, arm: str) -> MlpParams:
        if arm == "A":
            return self.net_A
        if arm == "tau":
            return self.net_tau
        raise InputError(f"unknown dose arm {arm!r}")

    def d_max(self, arm: str) -> float:
        return self.d_max_A if arm == "A" else self.d_max_tau

    def dose(self, arm: str, times: np.ndarray) -> np.ndarray:
        """Dose schedule sampled at the given times, shape (T,).

        Inactive arms return exact zeros; active arms stay strictly inside
        (0, d_max) even where the sigmoid saturates.
        """
        net = self.net(arm)
        times = np.asarray(times, dtype=np.float64)
        if times.ndim != 1:
            raise InputError("times must be a 1D array")
        if arm not in arms_for(self.scenario):
            return np.zeros(times.size)
        d_max = self.d_max(arm)
        d = d_max * forward(net, times[:, None])[:, 0]
        return np.minimum(d, np.nextafter(d_max, 0.0))


def new_policy(
    scenario: str,
    d_max_A: float = 0.5,
    d_max_tau: float = 0.5,
    seed: int = 0,
) -> TreatmentPolicy:
    return TreatmentPolicy(
        scenario=scenario,
        net_A=init_mlp(DOSE_SIZES, output_activation="sigmoid", seed=seed),
        net_tau=init_mlp(DOSE_SIZES, output_activation="sigmoid", seed=seed + 1),
        d_max_A=d_max_A,
        d_max_tau=d_max_tau,
    )


def constant_policy(
    scenario: str,
    dose_A: float = 0.0,
    dose_tau: float = 0.0,
    d_max_A: float = 0.5,
    d_max_tau: float = 0.5,
) -> TreatmentPolicy:
    """Policy whose active arms emit a constant dose at every time."""
    policy = new_policy(scenario, d_max_A, d_max_tau)
    for arm, dose in (("A", dose_A), ("tau", dose_tau)):
        frac = dose / policy.d_max(arm)
        if not 0 < frac < 1:
            if arm in arms_for(scenario):
                raise InputError(f"constant dose for arm {arm!r} must lie in (0, d_max)")
            continue
        net = policy.net(arm)
        net.weights[-1][:] = 0.0
        net.biases[-1][:] = math.log(frac / (1.0 - frac))
    return policy


@dataclass
class TreatmentConfig:
    """Objective weights and the optimization grid/schedule."""

    eta_A: float = 0.1
    eta_tau: float = 0.1
    d_max_A: float = 0.5
    d_max_tau: float = 0.5
    t_start: float = 0.0
    horizon: float = 10.0
    n_steps: int = 40
    epochs: int = 1000
    seed: int = 0
    schedule: LrSchedule = field(default_factory=LrSchedule)

    def validate(self) -> None:
        if self.eta_A < 0 or self.eta_tau < 0:
            raise InputError("dose penalties must be nonnegative")
        if self.d_max_A <= 0 or self.d_max_tau <= 0:
            raise InputError("dose bounds must be positive")
        if not self.horizon > self.t_start:
            raise InputError("horizon must lie beyond the start time")
        if self.n_steps < 1:
            raise InputError("need at least one rollout step")
        if self.epochs < 1:
            raise InputError("need at least one epoch")

    def grid(self) -> np.ndarray:
        return np.linspace(self.t_start, self.horizon, self.n_steps + 1)


def _project_initials(
    basis: EigenBasis, init_fields: dict[str, np.ndarray]
) -> dict[str, np.ndarray]:
    beta0 = {}
    for s in SPECIES_INPUTS["N"]:
        if s not in init_fields:
            raise InputError(f"missing initial field for {s!r}")
        f0 = np.asarray(init_fields[s], dtype=np.float64)
        if f0.shape != (basis.n_nodes,):
            raise InputError(f"initial field {s!r} has shape {f0.shape}")
        beta0[s] = (f0 @ basis.weighted_modes)[None, :]
    return beta0


def _resolve_gamma(timescale) -> float:
    if isinstance(timescale, PatientTimeScale):
        return timescale.gamma
    if timescale is None:
        return 1.0
    gamma = float(timescale)
    if gamma <= 0:
        raise InputError(f"timescale must be positive, got {gamma}")
    return gamma


def treated_rollout(
    model: LenoModel,
    policy: TreatmentPolicy,
    basis: EigenBasis,
    init_fields: dict[str, np.ndarray],
    times: np.ndarray,
    c0: float | None = None,
    timescale: PatientTimeScale | float | None = None,
    patient_id: str = "treated",
) -> Trajectory:
    """Roll the cascade with dose clearance added to the treated drives.

    The step-n drive of a treated species is its learned drive at state n-1
    minus dose(t_n) times its own state at n-1.  With scenario "none" the
    arithmetic is identical to an untreated prediction.
    """
    model.check_basis(basis)
    model.require_trained("A", "tau", "N")
    if c0 is not None:
        model.require_trained("C")
    times = np.asarray(times, dtype=np.float64)
    if times.ndim != 1 or times.size < 1:
        raise InputError("times must be a nonempty 1D array")
    if times.size > 1 and (np.diff(times) <= 0).any():
        raise InputError("times must be strictly increasing")
    gamma = _resolve_gamma(timescale)

    beta0 = _project_initials(basis, init_fields)
    lam = basis.eigenvalues
    species = SPECIES_INPUTS["N"]
    doses = {arm: policy.dose(arm, times) for arm in arms_for(policy.scenario)}

    state = {s: beta0[s].copy() for s in species}
    out = {s: np.empty((1, times.size, lam.size)) for s in species}
    for s in species:
        out[s][:, 0] = state[s]
    for n in range(1, times.size):
        dt = gamma * (times[n] - times[n - 1])
        drives = {}
        for s in species:
            x = np.concatenate([state[u] for u in SPECIES_INPUTS[s]], axis=1)
            drives[s] = forward(model.nets[s], x)
        for arm, d in doses.items():
            drives[arm] = drives[arm] - d[n] * state[arm]
        for s in species:
            state[s] = _imex_step_np(state[s], drives[s], dt, model.alpha(s), lam)
            out[s][:, n] = state[s]
    fields = {s: out[s][0] @ basis.modes.T for s in species}

    cognitive = None
    if c0 is not None:
        cognitive = np.empty(times.size)
        cognitive[0] = float(c0)
        for n in range(1, times.size):
            dt = gamma * (times[n] - times[n - 1])
            rate = forward(model.nets["C"], out["N"][0, n - 1])
            cognitive[n] = cognitive[n - 1] + dt * float(rate[0])
    return Trajectory(
        patient_id=patient_id,
        times=times.copy(),
        fields=fields,
        cognitive=cognitive,
        timescale=gamma,
    )


def objective(
    policy: TreatmentPolicy, rollout: Trajectory, config: TreatmentConfig
) -> float:
    """-C(T) plus the trapezoidal integral of the quadratic dose penalties."""
    if rollout.cognitive is None:
        raise InputError("rollout has no cognitive trajectory")
    pen = config.eta_A * policy.dose("A", rollout.times) ** 2
    pen = pen + config.eta_tau * policy.dose("tau", rollout.times) ** 2
    quad = 0.0 if rollout.times.size < 2 else float(np.trapezoid(pen, rollout.times))
    return float(-rollout.cognitive[-1] + quad)


def optimize_policy(
    model: LenoModel,
    basis: EigenBasis,
    init_fields: dict[str, np.ndarray],
    c0: float,
    config: TreatmentConfig,
    scenario: str,
    timescale: PatientTimeScale | float | None = None,
) -> tuple[TreatmentPolicy, list[float]]:
    """Fit the active dose arms by gradient descent through the rollout.

    Returns the best-objective policy seen during training together with the
    per-epoch objective trace.  Scenario "none" has nothing to fit; the
    baseline policy and its single objective value come back unchanged.
    """
    model.check_basis(basis)
    model.require_trained("A", "tau", "N", "C")
    config.validate()
    arms = arms_for(scenario)
    policy = new_policy(scenario, config.d_max_A, config.d_max_tau, config.seed)
    times = config.grid()
    gamma = _resolve_gamma(timescale)

    if not arms:
        roll = treated_rollout(
            model, policy, basis, init_fields, times, c0=c0, timescale=gamma
        )
        return policy, [objective(policy, roll, config)]

    beta0 = _project_initials(basis, init_fields)
    lam = basis.eigenvalues
    species = SPECIES_INPUTS["N"]
    etas = {"A": config.eta_A, "tau": config.eta_tau}
    t_cols = [np.array([[t]]) for t in times]
    # trapezoidal quadrature weights on the rollout grid
    w = np.zeros(times.size)
    w[:-1] += 0.5 * np.diff(times)
    w[1:] += 0.5 * np.diff(times)

    opt_params = [p for arm in arms for p in policy.net(arm).flat()]
    adam = AdamState.for_params(opt_params)
    best_val = math.inf
    best = [p.copy() for p in opt_params]
    trace: list[float] = []

    for epoch in range(config.epochs):
        arm_params = {arm: wrap_params(policy.net(arm)) for arm in arms}
        g_params = {s: wrap_params(model.nets[s]) for s in (*species, "C")}
        dose_v = {
            arm: [
                policy.d_max(arm)
                * forward_tape(policy.net(arm), ad.Var(tc), arm_params[arm])
                for tc in t_cols
            ]
            for arm in arms
        }

        state = {s: ad.Var(beta0[s]) for s in species}
        c_v = ad.Var(np.array([[float(c0)]]))
        for n in range(1, times.size):
            dt = gamma * (times[n] - times[n - 1])
            drives = {}
            for s in species:
                x = ad.concat([state[u] for u in SPECIES_INPUTS[s]], axis=1)
                drives[s] = forward_tape(model.nets[s], x, g_params[s])
            for arm in arms:
                drives[arm] = drives[arm] - dose_v[arm][n] * state[arm]
            c_v = c_v + dt * forward_tape(model.nets["C"], state["N"], g_params["C"])
            for s in species:
                state[s] = (state[s] + drives[s] * dt) / (
                    1.0 + model.alpha(s) * (dt * lam)
                )

        obj = -c_v
        for arm in arms:
            for n in range(times.size):
                d = dose_v[arm][n]
                obj = obj + (w[n] * etas[arm]) * (d * d)
        obj = ad.vsum(obj)

        val = obj.item()
        if not math.isfinite(val):
            raise NumericalError(f"treatment optimization diverged at epoch {epoch}")
        trace.append(val)
        if val < best_val:
            best_val = val
            best = [p.copy() for p in opt_params]

        obj.backward()
        grads = [v.grad for arm in arms for v in arm_params[arm]]
        adam_step(opt_params, grads, adam, lr_at(config.schedule, epoch))

    for dst, src in zip(opt_params, best):
        np.copyto(dst, src)
    return policy, trace
