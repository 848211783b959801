"""Sequential training of the spectral reaction operators.

One network per species maps previous-step eigen-coefficients of its input
species to the spectral drive of the semi-implicit step; a scalar-output
network maps neurodegeneration coefficients to the cognition rate. Species
train in cascade order (A, then tau, then N, then C), each minimizing two
relative losses: a data loss on the full rollout from the initial snapshot
and a teacher-forced residual loss on the data coefficients. The species'
diffusivity is co-trained through an exponential reparameterization.

Conventions shared with prediction: the rollout state for step n uses all
inputs at step n-1, intervals are multiplied by the patient timescale, and
the first ceil(60%) of each patient's time points form the training window.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar

from . import autodiff as ad
from .domains import EigenBasis
from .errors import InputError, NumericalError, StageOrderError
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
from .simulate import Trajectory, RDParams, cognition_rate, reaction_terms
from .spectral import residual_series

# cascade wiring: inputs of each species' drive network, in concat order
SPECIES_INPUTS = {"A": ("A",), "tau": ("A", "tau"), "N": ("A", "tau", "N")}

_SEED_STRIDE = {"A": 0, "tau": 1, "N": 2, "C": 3}

# added under the squared norm before sqrt so exact fits keep finite grads
_NORM_FLOOR = 1e-30


def hidden_for(n_modes: int) -> tuple[int, ...]:
    """Hidden widths by basis size: 3x100 for 64-mode runs, 2x128 otherwise."""
    return (100, 100, 100) if n_modes >= 64 else (128, 128)


def train_window(n_times: int, fraction: float = 0.6) -> int:
    """Number of leading time points used for fitting."""
    if n_times < 1:
        raise InputError("n_times must be positive")
    if not 0.0 < fraction <= 1.0:
        raise InputError(f"fraction must lie in (0, 1], got {fraction}")
    return int(np.ceil(fraction * n_times))


@dataclass
class TrainConfig:
    epochs: int = 5000
    schedule: LrSchedule = field(default_factory=LrSchedule)
    seed: int = 0
    weight_data: float = 1.0
    weight_residual: float = 1.0
    rollout: str = "full"  # "full" or "teacher" (ablation)
    train_fraction: float = 0.6
    hidden: tuple[int, ...] | None = None
    alpha_init: float = 1.0
    fix_alpha: float | None = None  # hold the diffusivity constant when set

    def validate(self) -> None:
        if self.epochs < 1:
            raise InputError(f"epochs must be >= 1, got {self.epochs}")
        if self.weight_data < 0 or self.weight_residual < 0:
            raise InputError("loss weights must be nonnegative")
        if self.rollout not in ("full", "teacher"):
            raise InputError(f"unknown rollout mode {self.rollout!r}")
        if not 0.0 < self.train_fraction <= 1.0:
            raise InputError(f"train_fraction must lie in (0, 1], got {self.train_fraction}")
        if self.alpha_init <= 0:
            raise InputError(f"alpha_init must be positive, got {self.alpha_init}")
        if self.fix_alpha is not None and self.fix_alpha < 0:
            raise InputError(f"fix_alpha must be nonnegative, got {self.fix_alpha}")


@dataclass
class PatientTimeScale:
    """Affine time reparameterization s = gamma * t + beta_offset."""

    gamma: float
    beta_offset: float = 0.0

    def __post_init__(self):
        if not self.gamma > 0 or not math.isfinite(self.gamma):
            raise InputError(f"gamma must be positive and finite, got {self.gamma}")


@dataclass
class Metrics:
    """Relative-error metrics; e_res/e_nonlinear are nan when unavailable.

    acc1_excluded counts node evaluations skipped because the truth value
    was exactly zero there.
    """

    acc2: float
    acc1: float
    e_l2: float
    e_res: float
    e_nonlinear: float
    acc1_excluded: int = 0


def average_metrics(items: list[Metrics]) -> Metrics:
    """Uniform per-patient average; exclusion counts add up."""
    if not items:
        raise InputError("no metrics to average")
    mean = lambda vals: float(np.mean(vals))
    return Metrics(
        acc2=mean([m.acc2 for m in items]),
        acc1=mean([m.acc1 for m in items]),
        e_l2=mean([m.e_l2 for m in items]),
        e_res=mean([m.e_res for m in items]),
        e_nonlinear=mean([m.e_nonlinear for m in items]),
        acc1_excluded=sum(m.acc1_excluded for m in items),
    )


@dataclass
class LenoModel:
    """Trained operator collection tied to one eigenbasis.

    nets holds the drive networks keyed "A"/"tau"/"N" plus the scalar
    cognition-rate network keyed "C"; log_alpha holds the unconstrained
    log-diffusivities so alpha = exp(log_alpha) stays positive.
    """

    basis_id: str
    n_modes: int
    nets: dict[str, MlpParams] = field(default_factory=dict)
    log_alpha: dict[str, float] = field(default_factory=dict)

    def alpha(self, species: str) -> float:
        if species not in self.log_alpha:
            raise StageOrderError(f"species {species!r} has no trained diffusivity")
        return math.exp(self.log_alpha[species])

    def trained(self, species: str) -> bool:
        return species in self.nets

    def require_trained(self, *species: str) -> None:
        missing = [s for s in species if s not in self.nets]
        if missing:
            raise StageOrderError(
                f"species {missing} must be trained first (sequential cascade order)"
            )

    def check_basis(self, basis: EigenBasis) -> None:
        if basis.digest != self.basis_id:
            raise InputError("model was trained on a different eigenbasis")

    def validate_sizes(self) -> None:
        p = self.n_modes
        for name, net in self.nets.items():
            d_in = len(SPECIES_INPUTS.get(name, SPECIES_INPUTS["N"])) * p
            d_out = p if name != "C" else 1
            if name == "C":
                d_in = p
            if net.sizes[0] != d_in or net.sizes[-1] != d_out:
                raise InputError(
                    f"net {name!r} has sizes {net.sizes[0]}->{net.sizes[-1]}, "
                    f"expected {d_in}->{d_out} for {p} modes"
                )
        for name, val in self.log_alpha.items():
            if not math.isfinite(val):
                raise InputError(f"log-diffusivity for {name!r} is not finite")


def new_model(basis: EigenBasis) -> LenoModel:
    return LenoModel(basis_id=basis.digest, n_modes=basis.n_modes)


# ---------------------------------------------------------------------------
# relative losses (array evaluation; the training loop builds the same
# quantities on the tape)
# ---------------------------------------------------------------------------

def _as_series(arr: np.ndarray, what: str) -> np.ndarray:
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2:
        raise InputError(f"{what} must be (N, P), got shape {arr.shape}")
    return arr


def loss_data(pred: np.ndarray, data: np.ndarray) -> float:
    """Mean over steps of the relative l2 coefficient error.

    pred and data align at step 1 (the initial snapshot is not scored since
    the rollout starts from it).
    """
    pred = _as_series(pred, "pred")
    data = _as_series(data, "data")
    if pred.shape != data.shape:
        raise InputError(f"shape mismatch: pred {pred.shape}, data {data.shape}")
    norms = np.linalg.norm(data, axis=1)
    if (norms == 0).any():
        raise InputError("zero-norm data step")
    return float(np.mean(np.linalg.norm(pred - data, axis=1) / norms))


def loss_residual(g_outputs: np.ndarray, residuals: np.ndarray) -> float:
    """Mean relative l2 error of drive outputs against discrete residuals."""
    g_outputs = _as_series(g_outputs, "g_outputs")
    residuals = _as_series(residuals, "residuals")
    if g_outputs.shape != residuals.shape:
        raise InputError(
            f"shape mismatch: outputs {g_outputs.shape}, residuals {residuals.shape}"
        )
    norms = np.linalg.norm(residuals, axis=1)
    if (norms == 0).any():
        raise InputError("zero-norm residual step")
    return float(np.mean(np.linalg.norm(g_outputs - residuals, axis=1) / norms))


# ---------------------------------------------------------------------------
# dataset preparation
# ---------------------------------------------------------------------------

@dataclass
class _Group:
    """Patients sharing one visit grid and timescale, projected on the basis."""

    times: np.ndarray                 # (T,)
    scale: float
    beta: dict[str, np.ndarray]       # species -> (M, T, P)
    cog: np.ndarray | None            # (M, T) or None
    members: list[int]                # cohort indices, for bookkeeping

    @property
    def dts(self) -> np.ndarray:
        return self.scale * np.diff(self.times)


def _prepare_groups(
    cohort: list[Trajectory], basis: EigenBasis, need_cog: bool
) -> list[_Group]:
    if not cohort:
        raise InputError("empty cohort")
    buckets: dict[bytes, _Group] = {}
    raw: dict[bytes, list] = {}
    for idx, traj in enumerate(cohort):
        if traj.n_times < 3:
            raise InputError(
                f"patient {traj.patient_id!r} has {traj.n_times} time points, need >= 3"
            )
        if traj.n_nodes != basis.n_nodes:
            raise InputError(
                f"patient {traj.patient_id!r} has {traj.n_nodes} nodes, "
                f"basis has {basis.n_nodes}"
            )
        missing = [s for s in SPECIES_INPUTS["N"] if s not in traj.fields]
        if missing:
            raise InputError(f"patient {traj.patient_id!r} missing fields {missing}")
        if need_cog and traj.cognitive is None:
            raise InputError(f"patient {traj.patient_id!r} has no cognitive series")
        key = traj.times.tobytes() + np.float64(traj.timescale).tobytes()
        raw.setdefault(key, []).append((idx, traj))
    groups = []
    for key, entries in raw.items():
        first = entries[0][1]
        beta = {
            s: np.stack([t.fields[s] @ basis.weighted_modes for _, t in entries])
            for s in SPECIES_INPUTS["N"]
        }
        cog = None
        if all(t.cognitive is not None for _, t in entries):
            cog = np.stack([t.cognitive for _, t in entries])
        groups.append(
            _Group(
                times=first.times,
                scale=float(first.timescale),
                beta=beta,
                cog=cog,
                members=[idx for idx, _ in entries],
            )
        )
    return groups


# ---------------------------------------------------------------------------
# rollout helpers (numpy and tape variants use identical operation order so
# training-time states match prediction bitwise)
# ---------------------------------------------------------------------------

def _imex_step_np(state, g, dt, alpha, lam):
    return (state + g * dt) / (1.0 + alpha * (dt * lam))


def _roll_cascade_np(
    model: LenoModel,
    beta0: dict[str, np.ndarray],
    times: np.ndarray,
    scale: float,
    species_list: tuple[str, ...],
    lam: np.ndarray,
) -> dict[str, np.ndarray]:
    """Roll the listed species jointly from their initial coefficients.

    beta0 values are (M, P); returns species -> (M, T, P).
    """
    n_t = times.size
    state = {s: beta0[s].copy() for s in species_list}
    out = {s: np.empty((beta0[s].shape[0], n_t, lam.size)) for s in species_list}
    for s in species_list:
        out[s][:, 0] = state[s]
    for n in range(1, n_t):
        dt = scale * (times[n] - times[n - 1])
        drives = {}
        for s in species_list:
            x = np.concatenate([state[u] for u in SPECIES_INPUTS[s]], axis=1)
            drives[s] = forward(model.nets[s], x)
        for s in species_list:
            state[s] = _imex_step_np(state[s], drives[s], dt, model.alpha(s), lam)
            out[s][:, n] = state[s]
    return out


def _safe_row_norms(x: ad.Var) -> ad.Var:
    return ad.sqrt(ad.vsum(x * x, axis=1, keepdims=True) + _NORM_FLOOR)


# ---------------------------------------------------------------------------
# species training
# ---------------------------------------------------------------------------

def train_species(
    species: str,
    cohort: list[Trajectory],
    basis: EigenBasis,
    model: LenoModel,
    config: TrainConfig,
    trace_out: list | None = None,
) -> tuple[LenoModel, Metrics]:
    """Fit one species' drive network and diffusivity; upstream must exist.

    Appends the per-epoch combined loss to trace_out when given. Returns the
    mutated model and training-window metrics averaged over patients
    (e_nonlinear is nan here; pass ground-truth params to evaluate for it).
    """
    config.validate()
    if species not in SPECIES_INPUTS:
        raise InputError(f"unknown species {species!r}")
    model.check_basis(basis)
    inputs = SPECIES_INPUTS[species]
    model.require_trained(*inputs[:-1])

    groups = _prepare_groups(cohort, basis, need_cog=False)
    lam = basis.eigenvalues
    p = basis.n_modes

    # per group: training window, frozen upstream rollout, teacher tensors
    prepared = []
    for grp in groups:
        n_train = train_window(grp.times.size, config.train_fraction)
        if n_train < 2:
            raise InputError("training window must contain at least 2 time points")
        t_tr = grp.times[:n_train]
        upstream = _roll_cascade_np(
            model,
            {s: grp.beta[s][:, 0] for s in inputs[:-1]},
            t_tr,
            grp.scale,
            inputs[:-1],
            lam,
        )
        own = grp.beta[species][:, :n_train]          # (M, n_train, P)
        m, n_steps = own.shape[0], n_train - 1
        dts = grp.scale * np.diff(t_tr)
        data_norms = np.linalg.norm(own, axis=2)      # (M, n_train)
        if (data_norms[:, 1:] == 0).any():
            raise InputError("zero-norm data step in training window")
        # teacher-forced inputs/targets, flattened over patients and steps
        x_rows = np.concatenate(
            [grp.beta[s][:, : n_train - 1] for s in inputs], axis=2
        ).reshape(m * n_steps, len(inputs) * p)
        dd = (own[:, 1:] - own[:, :-1]) / dts[None, :, None]
        lam_next = lam * own[:, 1:]                   # multiplied by alpha on the tape
        prepared.append(
            {
                "grp": grp,
                "n_train": n_train,
                "upstream": upstream,
                "own": own,
                "dts": dts,
                "norms": data_norms,
                "x_rows": x_rows,
                "dd_rows": dd.reshape(m * n_steps, p),
                "lam_rows": lam_next.reshape(m * n_steps, p),
                "m": m,
                "n_steps": n_steps,
            }
        )
    m_total = sum(pr["m"] for pr in prepared)

    hidden = config.hidden if config.hidden is not None else hidden_for(p)
    sizes = [len(inputs) * p, *hidden, p]
    net = init_mlp(sizes, seed=config.seed * 7919 + _SEED_STRIDE[species])
    pinned = config.fix_alpha is not None
    la = np.array([[math.log(config.alpha_init)]])
    opt_params = net.flat() if pinned else net.flat() + [la]
    state = AdamState.for_params(opt_params)

    for epoch in range(config.epochs):
        params_v = wrap_params(net)
        la_v = ad.Var(la)
        alpha_v = float(config.fix_alpha) if pinned else ad.exp(la_v)
        pieces = []
        for pr in prepared:
            grp, m, n_steps = pr["grp"], pr["m"], pr["n_steps"]
            if config.weight_data > 0:
                w = config.weight_data / (m_total * n_steps)
                if config.rollout == "full":
                    own_state = ad.Var(pr["own"][:, 0])
                    for n in range(1, pr["n_train"]):
                        dt = pr["dts"][n - 1]
                        parts = [
                            ad.Var(pr["upstream"][s][:, n - 1]) for s in inputs[:-1]
                        ]
                        parts.append(own_state)
                        x = parts[0] if len(parts) == 1 else ad.concat(parts, axis=1)
                        g = forward_tape(net, x, params_v)
                        denom = 1.0 + alpha_v * (dt * lam)
                        own_state = (own_state + g * dt) / denom
                        diff = own_state - pr["own"][:, n]
                        rel = _safe_row_norms(diff) / pr["norms"][:, n : n + 1]
                        pieces.append(ad.vsum(rel) * w)
                else:
                    for n in range(1, pr["n_train"]):
                        dt = pr["dts"][n - 1]
                        x = ad.Var(
                            np.concatenate(
                                [grp.beta[s][:, n - 1] for s in inputs], axis=1
                            )
                        )
                        g = forward_tape(net, x, params_v)
                        denom = 1.0 + alpha_v * (dt * lam)
                        step = (ad.Var(pr["own"][:, n - 1]) + g * dt) / denom
                        diff = step - pr["own"][:, n]
                        rel = _safe_row_norms(diff) / pr["norms"][:, n : n + 1]
                        pieces.append(ad.vsum(rel) * w)
            if config.weight_residual > 0:
                g_rows = forward_tape(net, ad.Var(pr["x_rows"]), params_v)
                r_rows = ad.Var(pr["dd_rows"]) + alpha_v * pr["lam_rows"]
                rel = _safe_row_norms(g_rows - r_rows) / _safe_row_norms(r_rows)
                pieces.append(
                    ad.vsum(rel) * (config.weight_residual / (m_total * n_steps))
                )
        loss = pieces[0]
        for piece in pieces[1:]:
            loss = loss + piece
        value = loss.item()
        if not math.isfinite(value):
            raise NumericalError(f"training diverged at epoch {epoch}")
        if trace_out is not None:
            trace_out.append(value)
        loss.backward()
        grads = [v.grad for v in params_v]
        if not pinned:
            grads.append(la_v.grad)
        adam_step(opt_params, grads, state, lr_at(config.schedule, epoch))

    model.nets[species] = net
    if pinned:
        # exp parameterization cannot store 0; the smallest denormal behaves
        # identically in every denominator
        model.log_alpha[species] = math.log(max(config.fix_alpha, 5e-324))
    else:
        model.log_alpha[species] = float(la[0, 0])

    per_patient = []
    for pr in prepared:
        grp, n_train = pr["grp"], pr["n_train"]
        rolled = _roll_cascade_np(
            model,
            {s: grp.beta[s][:, 0] for s in inputs},
            grp.times[:n_train],
            grp.scale,
            inputs,
            lam,
        )
        for row, idx in enumerate(grp.members):
            truth = slice_trajectory(cohort[idx], 0, n_train)
            pred = Trajectory(
                patient_id=cohort[idx].patient_id,
                times=grp.times[:n_train].copy(),
                fields={s: rolled[s][row] @ basis.modes.T for s in inputs},
                timescale=grp.scale,
            )
            per_patient.append(evaluate(pred, truth, model, basis, species))
    return model, average_metrics(per_patient)


def train_cognitive(
    cohort: list[Trajectory],
    basis: EigenBasis,
    model: LenoModel,
    config: TrainConfig,
    trace_out: list | None = None,
) -> tuple[LenoModel, Metrics]:
    """Fit the scalar cognition-rate network on model-rolled N coefficients.

    The cognition track advances by explicit Euler with the rate evaluated at
    the previous step, matching prediction. Residual supervision uses the
    observed difference quotients on data coefficients.
    """
    config.validate()
    model.check_basis(basis)
    model.require_trained("A", "tau", "N")
    groups = _prepare_groups(cohort, basis, need_cog=True)
    lam = basis.eigenvalues
    p = basis.n_modes

    prepared = []
    for grp in groups:
        n_train = train_window(grp.times.size, config.train_fraction)
        rolled = _roll_cascade_np(
            model,
            {s: grp.beta[s][:, 0] for s in SPECIES_INPUTS["N"]},
            grp.times[:n_train],
            grp.scale,
            SPECIES_INPUTS["N"],
            lam,
        )
        cog = grp.cog[:, :n_train]
        m, n_steps = cog.shape[0], n_train - 1
        if (np.abs(cog[:, 1:]) == 0).any():
            raise InputError("zero cognitive value in training window")
        dts = grp.scale * np.diff(grp.times[:n_train])
        r_rows = ((cog[:, 1:] - cog[:, :-1]) / dts[None, :]).reshape(m * n_steps, 1)
        if config.weight_residual > 0 and (np.abs(r_rows) < 1e-300).any():
            raise InputError(
                "constant cognitive step: residual supervision is undefined, "
                "set weight_residual=0"
            )
        x_rows = grp.beta["N"][:, :n_train][:, :-1].reshape(m * n_steps, p)
        prepared.append(
            {
                "grp": grp,
                "n_train": n_train,
                "n_rolled": rolled["N"],
                "cog": cog,
                "dts": dts,
                "x_rows": x_rows,
                "r_rows": r_rows,
                "m": m,
                "n_steps": n_steps,
            }
        )
    m_total = sum(pr["m"] for pr in prepared)

    hidden = config.hidden if config.hidden is not None else hidden_for(p)
    sizes = [p, *hidden, 1]
    net = init_mlp(sizes, seed=config.seed * 7919 + _SEED_STRIDE["C"])
    opt_params = net.flat()
    state = AdamState.for_params(opt_params)

    for epoch in range(config.epochs):
        params_v = wrap_params(net)
        pieces = []
        for pr in prepared:
            m, n_steps = pr["m"], pr["n_steps"]
            if config.weight_data > 0:
                w = config.weight_data / (m_total * n_steps)
                c_state = ad.Var(pr["cog"][:, 0:1])
                for n in range(1, pr["n_train"]):
                    rate = forward_tape(net, ad.Var(pr["n_rolled"][:, n - 1]), params_v)
                    c_state = c_state + rate * pr["dts"][n - 1]
                    rel = ad.absolute(c_state - pr["cog"][:, n : n + 1]) / np.abs(
                        pr["cog"][:, n : n + 1]
                    )
                    pieces.append(ad.vsum(rel) * w)
            if config.weight_residual > 0:
                out = forward_tape(net, ad.Var(pr["x_rows"]), params_v)
                rel = ad.absolute(out - pr["r_rows"]) / np.abs(pr["r_rows"])
                pieces.append(
                    ad.vsum(rel) * (config.weight_residual / (m_total * n_steps))
                )
        loss = pieces[0]
        for piece in pieces[1:]:
            loss = loss + piece
        value = loss.item()
        if not math.isfinite(value):
            raise NumericalError(f"training diverged at epoch {epoch}")
        if trace_out is not None:
            trace_out.append(value)
        loss.backward()
        adam_step(opt_params, [v.grad for v in params_v], state,
                  lr_at(config.schedule, epoch))

    model.nets["C"] = net

    per_patient = []
    for pr in prepared:
        grp, n_train = pr["grp"], pr["n_train"]
        for row, idx in enumerate(grp.members):
            c_pred = np.empty(n_train)
            c_pred[0] = pr["cog"][row, 0]
            for n in range(1, n_train):
                rate = forward(net, pr["n_rolled"][row, n - 1])
                c_pred[n] = c_pred[n - 1] + pr["dts"][n - 1] * float(rate[0])
            truth = slice_trajectory(cohort[idx], 0, n_train)
            pred = Trajectory(
                patient_id=cohort[idx].patient_id,
                times=grp.times[:n_train].copy(),
                fields={s: truth.fields[s] for s in SPECIES_INPUTS["N"]},
                cognitive=c_pred,
                timescale=grp.scale,
            )
            per_patient.append(evaluate(pred, truth, model, basis, "C"))
    return model, average_metrics(per_patient)


# ---------------------------------------------------------------------------
# prediction and evaluation
# ---------------------------------------------------------------------------

def predict(
    model: LenoModel,
    basis: EigenBasis,
    init_fields: dict[str, np.ndarray],
    times: np.ndarray,
    c0: float | None = None,
    timescale: PatientTimeScale | float | None = None,
    patient_id: str = "prediction",
) -> Trajectory:
    """Roll all species (and C when c0 is given) from nodal initial values."""
    model.check_basis(basis)
    model.require_trained("A", "tau", "N")
    times = np.asarray(times, dtype=np.float64)
    if times.ndim != 1 or times.size < 1:
        raise InputError("times must be a nonempty 1D array")
    if times.size > 1 and (np.diff(times) <= 0).any():
        raise InputError("times must be strictly increasing")
    if isinstance(timescale, PatientTimeScale):
        gamma = timescale.gamma
    elif timescale is None:
        gamma = 1.0
    else:
        gamma = float(timescale)
        if gamma <= 0:
            raise InputError(f"timescale must be positive, got {gamma}")

    beta0 = {}
    for s in SPECIES_INPUTS["N"]:
        if s not in init_fields:
            raise InputError(f"missing initial field for {s!r}")
        f0 = np.asarray(init_fields[s], dtype=np.float64)
        if f0.shape != (basis.n_nodes,):
            raise InputError(f"initial field {s!r} has shape {f0.shape}")
        beta0[s] = (f0 @ basis.weighted_modes)[None, :]
    rolled = _roll_cascade_np(
        model, beta0, times, gamma, SPECIES_INPUTS["N"], basis.eigenvalues
    )
    fields = {s: rolled[s][0] @ basis.modes.T for s in SPECIES_INPUTS["N"]}

    cognitive = None
    if c0 is not None:
        model.require_trained("C")
        cognitive = np.empty(times.size)
        cognitive[0] = float(c0)
        for n in range(1, times.size):
            dt = gamma * (times[n] - times[n - 1])
            rate = forward(model.nets["C"], rolled["N"][0, n - 1])
            cognitive[n] = cognitive[n - 1] + dt * float(rate[0])
    return Trajectory(
        patient_id=patient_id,
        times=times.copy(),
        fields=fields,
        cognitive=cognitive,
        timescale=gamma,
    )


def slice_trajectory(traj: Trajectory, start: int, stop: int | None = None) -> Trajectory:
    """Contiguous time-slice view (copied arrays) of a trajectory."""
    stop = traj.n_times if stop is None else stop
    if not 0 <= start < stop <= traj.n_times:
        raise InputError(f"bad slice [{start}, {stop}) for {traj.n_times} points")
    return Trajectory(
        patient_id=traj.patient_id,
        times=traj.times[start:stop].copy(),
        fields={k: v[start:stop].copy() for k, v in traj.fields.items()},
        cognitive=None if traj.cognitive is None else traj.cognitive[start:stop].copy(),
        timescale=traj.timescale,
    )


def _m_norms(arr: np.ndarray, basis: EigenBasis) -> np.ndarray:
    """Domain L2 norms of rows of (T, V) under the basis weight matrix."""
    weighted = basis.weight @ arr.T
    return np.sqrt(np.einsum("tv,vt->t", arr, weighted))


def evaluate(
    pred: Trajectory,
    truth: Trajectory,
    model: LenoModel,
    basis: EigenBasis,
    species: str,
    params: RDParams | None = None,
) -> Metrics:
    """All relative metrics of one species over a matched pair of trajectories.

    The initial snapshot is not scored (rollouts start from it). e_res needs
    the species' trained net; e_nonlinear additionally needs the generator
    params and all three truth fields, else it is nan.
    """
    if not np.array_equal(pred.times, truth.times):
        raise InputError("prediction and truth time grids differ")
    if truth.n_times < 2:
        raise InputError("need at least 2 time points to evaluate")

    if species == "C":
        if pred.cognitive is None or truth.cognitive is None:
            raise InputError("both trajectories need a cognitive series")
        c_p, c_t = pred.cognitive[1:], truth.cognitive[1:]
        if (c_t == 0).any():
            raise InputError("zero cognitive value in truth")
        rel = np.abs(c_p - c_t) / np.abs(c_t)
        err = float(np.mean(rel))
        e_res = float("nan")
        e_nonlinear = float("nan")
        if model.trained("C") and "N" in pred.fields:
            net = model.nets["C"]
            beta_n = pred.fields["N"] @ basis.weighted_modes
            rate_prev = forward(net, beta_n[:-1])[:, 0]
            rho = np.diff(truth.cognitive) / (truth.timescale * np.diff(truth.times))
            if (rho == 0).any():
                raise InputError("zero-rate cognitive step")
            e_res = float(np.mean(np.abs(rate_prev - rho) / np.abs(rho)))
            if params is not None and "N" in truth.fields:
                rate_now = forward(net, beta_n[1:])[:, 0]
                total_n = truth.fields["N"][1:] @ basis.integral_weights
                f_true = np.array(
                    [
                        cognition_rate(params, tn, c)
                        for tn, c in zip(total_n, truth.cognitive[1:])
                    ]
                )
                if (f_true == 0).any():
                    raise InputError("zero cognitive reaction step")
                e_nonlinear = float(
                    np.mean(np.abs(rate_now - f_true) / np.abs(f_true))
                )
        return Metrics(acc2=1.0 - err, acc1=1.0 - err, e_l2=err,
                       e_res=e_res, e_nonlinear=e_nonlinear)

    if species not in SPECIES_INPUTS:
        raise InputError(f"unknown species {species!r}")
    if species not in pred.fields or species not in truth.fields:
        raise InputError(f"species {species!r} missing from trajectories")
    u_t = truth.fields[species]
    u_p = pred.fields[species]
    if u_t.shape != u_p.shape:
        raise InputError("field shapes differ between prediction and truth")
    if u_t.shape[1] != basis.n_nodes:
        raise InputError("trajectories live on a different domain than the basis")
    diff = u_p[1:] - u_t[1:]

    m_true = _m_norms(u_t[1:], basis)
    if (m_true == 0).any():
        raise InputError("zero-norm data step")
    e_l2 = float(np.mean(_m_norms(diff, basis) / m_true))

    l2_true = np.linalg.norm(u_t[1:], axis=1)
    acc2 = 1.0 - float(np.mean(np.linalg.norm(diff, axis=1) / l2_true))

    mask = u_t[1:] != 0
    excluded = int((~mask).sum())
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(mask, np.abs(diff) / np.abs(u_t[1:]), 0.0)
    valid = mask.sum(axis=1)
    step_means = np.divide(
        ratio.sum(axis=1), valid, out=np.full(valid.shape, np.nan), where=valid > 0
    )
    acc1 = 1.0 - float(np.nanmean(step_means)) if (valid > 0).any() else float("nan")

    e_res = float("nan")
    e_nonlinear = float("nan")
    if model.trained(species):
        inputs = SPECIES_INPUTS[species]
        if all(s in pred.fields for s in inputs):
            net = model.nets[species]
            beta_pred = {s: pred.fields[s] @ basis.weighted_modes for s in inputs}
            beta_true = truth.fields[species] @ basis.weighted_modes
            scaled = truth.timescale * truth.times
            r_true = residual_series(beta_true, scaled, model.alpha(species), basis)
            x_prev = np.concatenate([beta_pred[s][:-1] for s in inputs], axis=1)
            g_prev = forward(net, x_prev)
            r_norms = np.linalg.norm(r_true, axis=1)
            if (r_norms == 0).any():
                raise InputError("zero-norm residual step")
            e_res = float(
                np.mean(np.linalg.norm(g_prev - r_true, axis=1) / r_norms)
            )
            if params is not None and all(s in truth.fields for s in SPECIES_INPUTS["N"]):
                x_now = np.concatenate([beta_pred[s][1:] for s in inputs], axis=1)
                recon = forward(net, x_now) @ basis.modes.T
                row = SPECIES_INPUTS["N"].index(species)
                f_true = np.stack(
                    [
                        reaction_terms(
                            params,
                            np.stack([truth.fields[s][n] for s in SPECIES_INPUTS["N"]]),
                        )[row]
                        for n in range(1, truth.n_times)
                    ]
                )
                f_norms = _m_norms(f_true, basis)
                if (f_norms == 0).any():
                    raise InputError("zero-norm reaction step")
                e_nonlinear = float(np.mean(_m_norms(recon - f_true, basis) / f_norms))
    return Metrics(acc2=acc2, acc1=acc1, e_l2=e_l2, e_res=e_res,
                   e_nonlinear=e_nonlinear, acc1_excluded=excluded)


# ---------------------------------------------------------------------------
# patient-specific timescale transfer
# ---------------------------------------------------------------------------

def fit_timescale(
    model: LenoModel,
    patient: Trajectory,
    basis: EigenBasis,
    config: TrainConfig,
    gamma_bounds: tuple[float, float] = (0.1, 5.0),
    fit_offset: bool = False,
) -> tuple[PatientTimeScale, dict[str, Metrics]]:
    """Fit the progression-rate multiplier with all network weights frozen.

    Minimizes the summed per-species data loss of the rescaled rollout over
    the patient's training window by bounded scalar search. The learned
    dynamics are autonomous, so a time offset cannot change any rollout from
    an observed baseline; beta_offset therefore stays 0 (a warning is issued
    if its release is requested). Returns the fitted scale and
    prediction-window metrics per species.
    """
    config.validate()
    model.check_basis(basis)
    model.require_trained("A", "tau", "N")
    if patient.n_times < 3:
        raise InputError("patient needs at least 3 time points")
    if fit_offset:
        warnings.warn(
            "time offsets are unidentifiable for autonomous dynamics; "
            "beta_offset stays 0",
            stacklevel=2,
        )
    lam = basis.eigenvalues
    species = SPECIES_INPUTS["N"]
    n_train = train_window(patient.n_times, config.train_fraction)
    if n_train < 2:
        raise InputError("training window must contain at least 2 time points")
    beta = {s: patient.fields[s] @ basis.weighted_modes for s in species}
    t_tr = patient.times[:n_train]
    use_cog = patient.cognitive is not None and model.trained("C")

    def objective(gamma: float) -> float:
        rolled = _roll_cascade_np(
            model, {s: beta[s][0:1] for s in species}, t_tr, gamma, species, lam
        )
        total = sum(
            loss_data(rolled[s][0, 1:], beta[s][1:n_train]) for s in species
        )
        if use_cog:
            c = patient.cognitive[0]
            rel = 0.0
            for n in range(1, n_train):
                dt = gamma * (t_tr[n] - t_tr[n - 1])
                c = c + dt * float(forward(model.nets["C"], rolled["N"][0, n - 1])[0])
                rel += abs(c - patient.cognitive[n]) / abs(patient.cognitive[n])
            total += rel / (n_train - 1)
        return total

    res = minimize_scalar(
        objective, bounds=gamma_bounds, method="bounded",
        options={"xatol": 1e-8},
    )
    if not np.isfinite(res.x) or not np.isfinite(res.fun):
        raise NumericalError("timescale optimization diverged")
    scale = PatientTimeScale(gamma=float(res.x))

    pred = predict(
        model,
        basis,
        {s: patient.fields[s][0] for s in species},
        patient.times,
        c0=patient.cognitive[0] if use_cog else None,
        timescale=scale,
        patient_id=patient.patient_id,
    )
    start = n_train - 1
    pred_slice = slice_trajectory(pred, start)
    truth_slice = slice_trajectory(patient, start)
    metrics = {
        s: evaluate(pred_slice, truth_slice, model, basis, s) for s in species
    }
    if use_cog:
        metrics["C"] = evaluate(pred_slice, truth_slice, model, basis, "C")
    return scale, metrics
