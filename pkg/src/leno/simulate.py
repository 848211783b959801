"""Synthetic reaction-diffusion benchmark generator.

Ground-truth dynamics for the biomarker cascade on a domain with eigenbasis
(lambda_i, phi_i): amyloid A grows logistically, tau is driven by A,
neurodegeneration N by tau, each diffusing with its own coefficient, and a
scalar cognition score C follows the domain integral of N:

    A_t   - alpha_A  Lap A   = lambda_A A (k_A - A)
    tau_t - alpha_tau Lap tau = lambda_tauA A + lambda_tau tau (k_tau - tau)
    N_t   - alpha_N  Lap N   = lambda_Ntau tau + lambda_N N (k_N - N)
    C_t                      = lambda_CN int(N) + lambda_C C (k_C - C)

Integration matches the learning-side discretization: per-mode implicit
diffusion, explicit reactions, uniform substeps within each output interval.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .domains import EigenBasis
from .errors import InputError, NumericalError

SPECIES = ("A", "tau", "N")

# default upper safety clip applied after each explicit reaction substep
_CLIP_FACTOR = 1.05

# |u| beyond this multiple of the carrying capacity aborts the run
_BLOWUP_FACTOR = 10.0


@dataclass
class RDParams:
    """Reaction-diffusion coefficients (defaults are the benchmark values)."""

    alpha_A: float = 1.0
    alpha_tau: float = 1.0
    alpha_N: float = 1.0
    lambda_A: float = 0.4
    k_A: float = 1.0
    lambda_tauA: float = 0.1
    lambda_tau: float = 0.2
    k_tau: float = 1.0
    lambda_Ntau: float = 0.1
    lambda_N: float = 0.2
    k_N: float = 1.0
    lambda_CN: float = 0.005
    lambda_C: float = 0.2
    k_C: float = 1.0

    def validate(self) -> None:
        for name in ("alpha_A", "alpha_tau", "alpha_N", "k_A", "k_tau", "k_N", "k_C"):
            if getattr(self, name) <= 0:
                raise InputError(f"{name} must be positive, got {getattr(self, name)}")


@dataclass
class Trajectory:
    """Sampled trajectory of one patient.

    fields maps species name -> (T, V) nodal values; cognitive is (T,) or
    None when no cognition track exists.
    """

    patient_id: str
    times: np.ndarray
    fields: dict[str, np.ndarray]
    cognitive: np.ndarray | None = None
    timescale: float = 1.0

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=np.float64)
        if self.times.ndim != 1 or self.times.size < 1:
            raise InputError("times must be a nonempty 1D array")
        if (np.diff(self.times) <= 0).any():
            raise InputError("times must be strictly increasing")
        n_t = self.times.size
        widths = set()
        for name, arr in self.fields.items():
            arr = np.asarray(arr, dtype=np.float64)
            self.fields[name] = arr
            if arr.ndim != 2 or arr.shape[0] != n_t:
                raise InputError(
                    f"field {name!r} has shape {arr.shape}, expected ({n_t}, V)"
                )
            widths.add(arr.shape[1])
        if len(widths) > 1:
            raise InputError(f"fields disagree on node count: {sorted(widths)}")
        if self.cognitive is not None:
            self.cognitive = np.asarray(self.cognitive, dtype=np.float64)
            if self.cognitive.shape != (n_t,):
                raise InputError(
                    f"cognitive track has shape {self.cognitive.shape}, expected ({n_t},)"
                )

    @property
    def n_times(self) -> int:
        return self.times.size

    @property
    def n_nodes(self) -> int:
        return next(iter(self.fields.values())).shape[1]


def reaction_terms(params: RDParams, u: np.ndarray) -> np.ndarray:
    """Nodal reaction terms for the stacked state u = [A; tau; N], (3, V)."""
    a, tau, n = u
    f = np.empty_like(u)
    f[0] = params.lambda_A * a * (params.k_A - a)
    f[1] = params.lambda_tauA * a + params.lambda_tau * tau * (params.k_tau - tau)
    f[2] = params.lambda_Ntau * tau + params.lambda_N * n * (params.k_N - n)
    return f


def cognition_rate(params: RDParams, total_n: float, c: float) -> float:
    """Scalar cognition dynamics: coupling to the N integral plus logistic."""
    return params.lambda_CN * total_n + params.lambda_C * c * (params.k_C - c)


def simulate(
    params: RDParams,
    basis: EigenBasis,
    init_fields: dict[str, np.ndarray],
    c0: float,
    times: np.ndarray,
    inner_dt: float = 1e-3,
    doses: dict | None = None,
    patient_id: str = "p0",
    clip_factor: float | None = _CLIP_FACTOR,
) -> Trajectory:
    """Integrate the ground-truth system and sample it at ``times``.

    Args:
        init_fields: species name -> (V,) nonnegative initial values.
        c0: initial cognition score.
        times: strictly increasing output grid; times[0] is the initial time.
        inner_dt: target substep; each output interval is covered by uniform
            substeps no longer than this.
        doses: optional clearance rates {"A": f(t), "tau": f(t)} subtracted
            as -d(t) * u from the corresponding reaction (treatment hook).
        clip_factor: upper guard; substep values above clip_factor * K are
            truncated. None disables the upper guard (the tau and N equations
            have equilibria above their carrying capacities, so long-horizon
            runs need it off to follow the actual dynamics). Values below
            zero are always clamped to zero either way.

    Raises:
        NumericalError: on blow-up, reporting the time it was detected.
    """
    params.validate()
    times = np.asarray(times, dtype=np.float64)
    if times.ndim != 1 or times.size < 1:
        raise InputError("times must be a nonempty 1D array")
    if times.size > 1 and (np.diff(times) <= 0).any():
        raise InputError("times must be strictly increasing")
    if inner_dt <= 0:
        raise InputError(f"inner_dt must be positive, got {inner_dt}")
    if times.size > 1 and inner_dt > np.diff(times).min() + 1e-12:
        raise InputError("inner_dt exceeds the smallest output interval")
    missing = [s for s in SPECIES if s not in init_fields]
    if missing:
        raise InputError(f"missing initial fields for {missing}")
    doses = doses or {}
    for key in doses:
        if key not in ("A", "tau"):
            raise InputError(f"doses only apply to A and tau, got {key!r}")

    n_nodes = basis.n_nodes
    u = np.empty((3, n_nodes), dtype=np.float64)
    for row, name in enumerate(SPECIES):
        f0 = np.asarray(init_fields[name], dtype=np.float64)
        if f0.shape != (n_nodes,):
            raise InputError(f"initial field {name!r} has shape {f0.shape}")
        if (f0 < 0).any():
            raise InputError(f"initial field {name!r} has negative values")
        u[row] = f0

    if clip_factor is not None and clip_factor <= 0:
        raise InputError(f"clip_factor must be positive or None, got {clip_factor}")

    alphas = np.array([params.alpha_A, params.alpha_tau, params.alpha_N])
    caps = np.array([params.k_A, params.k_tau, params.k_N])
    clip_hi = np.inf if clip_factor is None else (clip_factor * caps)[:, None]
    lam = basis.eigenvalues
    iw = basis.integral_weights
    c = float(c0)

    snaps = np.empty((times.size, 3, n_nodes), dtype=np.float64)
    c_track = np.empty(times.size, dtype=np.float64)
    snaps[0] = u
    c_track[0] = c

    for n in range(1, times.size):
        span = times[n] - times[n - 1]
        n_sub = max(1, int(np.ceil(span / inner_dt - 1e-12)))
        h = span / n_sub
        inv_denom = 1.0 / (1.0 + h * alphas[:, None] * lam[None, :])
        t_sub = times[n - 1]
        for _ in range(n_sub):
            total_n = float(iw @ u[2])
            f = reaction_terms(params, u)
            if "A" in doses:
                f[0] -= doses["A"](t_sub) * u[0]
            if "tau" in doses:
                f[1] -= doses["tau"](t_sub) * u[1]
            v = u + h * f
            np.clip(v, 0.0, clip_hi, out=v)
            beta = v @ basis.weighted_modes
            beta *= inv_denom
            u = beta @ basis.modes.T
            c = c + h * cognition_rate(params, total_n, c)
            t_sub += h
        if not np.isfinite(u).all() or np.abs(u).max() > _BLOWUP_FACTOR * caps.max() \
                or not np.isfinite(c):
            raise NumericalError(f"simulation blew up near t={times[n]:g}")
        snaps[n] = u
        c_track[n] = c

    fields = {name: snaps[:, row, :].copy() for row, name in enumerate(SPECIES)}
    return Trajectory(
        patient_id=patient_id, times=times.copy(), fields=fields, cognitive=c_track
    )


# ---------------------------------------------------------------------------
# cohort construction
# ---------------------------------------------------------------------------

# per-species (offset, span, width): values start in
# [offset + span*stage, offset + span*stage + width] for stage in [0, 1];
# late stages start near saturation so that a staged cohort's training
# windows cover the states every patient reaches at prediction times
_IC_BANDS = {
    "A": (0.08, 0.72, 0.12),
    "tau": (0.05, 0.60, 0.10),
    "N": (0.05, 0.50, 0.08),
}


def gen_initial_conditions(
    basis: EigenBasis,
    seed: int,
    smoothness: int = 8,
    stage: float | None = None,
) -> tuple[dict[str, np.ndarray], float]:
    """Smooth random nonnegative initial fields plus a baseline cognition.

    Fields are random combinations of the first ``smoothness`` modes, affinely
    rescaled into species bands that shift with a random disease stage, so a
    cohort of seeds spans early to late presentations. All values stay inside
    [0.05, 0.95]. Baseline cognition is tied to the initial amount of
    neurodegeneration. Deterministic per seed.
    """
    if not 1 <= smoothness <= basis.n_modes:
        raise InputError(
            f"smoothness {smoothness} out of range [1, {basis.n_modes}]"
        )
    rng = np.random.default_rng(seed)
    if stage is None:
        stage = float(rng.uniform(0.0, 1.0))
    elif not 0.0 <= stage <= 1.0:
        raise InputError(f"stage must lie in [0, 1], got {stage}")

    fields = {}
    for name in SPECIES:
        offset, span, width = _IC_BANDS[name]
        lo = offset + span * stage
        hi = lo + width
        coeffs = rng.standard_normal(smoothness) / (1.0 + np.arange(smoothness))
        raw = basis.modes[:, :smoothness] @ coeffs
        lo_raw, hi_raw = raw.min(), raw.max()
        if hi_raw - lo_raw < 1e-12:
            fields[name] = np.full(basis.n_nodes, rng.uniform(lo, hi))
        else:
            fields[name] = lo + (hi - lo) * (raw - lo_raw) / (hi_raw - lo_raw)

    total_n0 = float(basis.integral_weights @ fields["N"])
    c0 = float(np.clip(0.08 + 0.9 * total_n0, 0.05, 0.95))
    return fields, c0


def make_cohort(
    params: RDParams,
    basis: EigenBasis,
    n_patients: int,
    seeds: list[int] | None = None,
    timescales: list[float] | None = None,
    times: np.ndarray | None = None,
    inner_dt: float = 1e-3,
    smoothness: int = 8,
    stages: list[float] | None = None,
    onsets: list[float] | None = None,
    clip_factor: float | None = None,
) -> list[Trajectory]:
    """Simulate a cohort on a shared visit grid.

    Patient m progresses on rescaled time s = timescale_m * t: the trajectory
    is integrated on the rescaled grid and relabelled with the shared one, so
    a timescale of 2 shows dynamics twice as fast.

    Staging works two ways. ``stages`` shifts the initial-condition bands, so
    a patient starts directly with late-presentation field levels. ``onsets``
    instead ages an early start: the initial fields describe the state
    ``onset`` units of patient time before the first visit and the lead-in is
    integrated through, so every recorded value, cognition included, lies on
    the progression flow itself. When ``stages`` is omitted each patient
    draws a disease stage from its seed. The upper clip is off by default
    because tau and N legitimately exceed their carrying capacities along
    the cascade.
    """
    if n_patients < 1:
        raise InputError("n_patients must be >= 1")
    if seeds is None:
        seeds = list(range(n_patients))
    if timescales is None:
        timescales = [1.0] * n_patients
    if stages is None:
        stages = [None] * n_patients
    if onsets is None:
        onsets = [0.0] * n_patients
    if not len(seeds) == len(timescales) == len(stages) == len(onsets) \
            == n_patients:
        raise InputError(
            "seeds, timescales, stages and onsets must have n_patients entries"
        )
    if any(ts <= 0 for ts in timescales):
        raise InputError("timescales must be positive")
    if any(o < 0 for o in onsets):
        raise InputError("onsets must be nonnegative")
    if times is None:
        times = np.linspace(0.0, 10.0, 21)
    times = np.asarray(times, dtype=np.float64)

    cohort = []
    for m, (seed, ts, stage, onset) in enumerate(
        zip(seeds, timescales, stages, onsets)
    ):
        fields, c0 = gen_initial_conditions(
            basis, seed, smoothness=smoothness, stage=stage
        )
        sim_times = ts * times + onset
        if onset > 0:
            sim_times = np.concatenate(([0.0], sim_times))
        traj = simulate(
            params,
            basis,
            fields,
            c0,
            sim_times,
            inner_dt=inner_dt,
            patient_id=f"p{m:02d}",
            clip_factor=clip_factor,
        )
        if onset > 0:
            traj.fields = {k: v[1:] for k, v in traj.fields.items()}
            traj.cognitive = traj.cognitive[1:]
        traj.times = times.copy()
        traj.timescale = ts
        cohort.append(traj)
    return cohort


# ---------------------------------------------------------------------------
# trajectory CSV files
# ---------------------------------------------------------------------------

def save_trajectory_csv(traj: Trajectory, out_dir: str) -> list[str]:
    """Write one CSV per species (t,node_0,...) plus a cognition file (t,C).
    17 significant digits: values round-trip bit-exactly."""
    os.makedirs(out_dir, exist_ok=True)
    written = []
    for name, arr in traj.fields.items():
        path = os.path.join(out_dir, f"{traj.patient_id}_{name}.csv")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("t," + ",".join(f"node_{i}" for i in range(arr.shape[1])) + "\n")
            for t, row in zip(traj.times, arr):
                fh.write(f"{t:.17g}," + ",".join(f"{v:.17g}" for v in row) + "\n")
        written.append(path)
    if traj.cognitive is not None:
        path = os.path.join(out_dir, f"{traj.patient_id}_C.csv")
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("t,C\n")
            for t, v in zip(traj.times, traj.cognitive):
                fh.write(f"{t:.17g},{v:.17g}\n")
        written.append(path)
    return written


def load_trajectory_csv(out_dir: str, patient_id: str) -> Trajectory:
    """Read the files written by :func:`save_trajectory_csv`."""
    fields = {}
    times = None
    for name in SPECIES:
        path = os.path.join(out_dir, f"{patient_id}_{name}.csv")
        if not os.path.exists(path):
            raise InputError(f"missing trajectory file {path}")
        t, arr = _read_csv_matrix(path)
        if times is not None and not np.array_equal(times, t):
            raise InputError(f"{path}: time grid differs from other species files")
        times = t
        fields[name] = arr
    cog_path = os.path.join(out_dir, f"{patient_id}_C.csv")
    cognitive = None
    if os.path.exists(cog_path):
        t, arr = _read_csv_matrix(cog_path)
        if not np.array_equal(times, t):
            raise InputError(f"{cog_path}: time grid differs from species files")
        cognitive = arr[:, 0]
    return Trajectory(
        patient_id=patient_id, times=times, fields=fields, cognitive=cognitive
    )


def _read_csv_matrix(path: str) -> tuple[np.ndarray, np.ndarray]:
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline()
        if not header.startswith("t,"):
            raise InputError(f"{path}: expected header starting with 't,'")
        n_cols = len(header.strip().split(","))
        rows = []
        for lineno, line in enumerate(fh, start=2):
            parts = line.strip().split(",")
            if len(parts) != n_cols:
                raise InputError(
                    f"{path}:{lineno}: expected {n_cols} columns, got {len(parts)}"
                )
            try:
                rows.append([float(p) for p in parts])
            except ValueError:
                raise InputError(f"{path}:{lineno}: non-numeric value")
    if not rows:
        raise InputError(f"{path}: no data rows")
    data = np.array(rows, dtype=np.float64)
    return data[:, 0], data[:, 1:]
