"""Command-line pipeline driver.

Subcommands cover the whole workflow: eigs, simulate, train, predict,
transfer, treat, report.  Every command reads one YAML config, writes its
artifacts under <out_dir>/<command>/ and drops a manifest there (config
hash, effective seed, wall time, output list).  Exit codes: 0 ok, 2 bad
input, 3 stage-order violation (missing prerequisite artifacts), 4 numerical
failure.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time

import numpy as np

from .checkpoint import load_checkpoint, save_checkpoint
from .config import PipelineConfig, load_config
from .domains import eigenbasis_for, load_graph, load_mesh
from .errors import InputError, NumericalError, StageOrderError
from .simulate import (
    RDParams,
    Trajectory,
    load_trajectory_csv,
    make_cohort,
    save_trajectory_csv,
)
from . import training as tr
from . import treatment as tx

COMMANDS = ("eigs", "simulate", "train", "predict", "transfer", "treat", "report")

METRICS_HEADER = "species,phase,acc2,acc1,e_l2,e_res,e_nonlinear,acc1_excluded"

_SCENARIO_COLUMNS = {
    "none": "C_none",
    "anti_A": "C_antiA",
    "anti_tau": "C_antiTau",
    "combo": "C_combo",
}


def _fmt(value: float) -> str:
    return f"{float(value):.17g}"


def _load_domain(cfg: PipelineConfig):
    if cfg.domain_kind == "mesh":
        return load_mesh(cfg.domain)
    return load_graph(cfg.domain)


def _basis(cfg: PipelineConfig):
    return eigenbasis_for(_load_domain(cfg), cfg.n_modes)


def _stage_dir(cfg: PipelineConfig, command: str) -> str:
    path = os.path.join(cfg.out_dir, command)
    os.makedirs(path, exist_ok=True)
    return path


def _write_rows(path: str, header: str, rows: list[str]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(header + "\n")
        for row in rows:
            fh.write(row + "\n")


def _metrics_row(species: str, phase: str, m: tr.Metrics) -> str:
    vals = [m.acc2, m.acc1, m.e_l2, m.e_res, m.e_nonlinear]
    return ",".join([species, phase] + [_fmt(v) for v in vals] + [str(m.acc1_excluded)])


def _require(path: str, hint: str) -> None:
    if not os.path.exists(path):
        raise StageOrderError(f"missing prerequisite {path}: run '{hint}' first")


def _meta_path(cfg: PipelineConfig) -> str:
    return os.path.join(cfg.out_dir, "simulate", "cohort_meta.json")


def _checkpoint_path(cfg: PipelineConfig) -> str:
    return os.path.join(cfg.out_dir, "train", "checkpoint.json")


def _load_cohort(cfg: PipelineConfig) -> list[Trajectory]:
    _require(_meta_path(cfg), "leno simulate")
    with open(_meta_path(cfg), "r", encoding="utf-8") as fh:
        meta = json.load(fh)
    sim_dir = os.path.join(cfg.out_dir, "simulate")
    cohort = []
    for rec in meta["patients"]:
        traj = load_trajectory_csv(sim_dir, rec["id"])
        traj.timescale = float(rec["timescale"])
        cohort.append(traj)
    return cohort


# ---------------------------------------------------------------------------
# commands (each returns the list of artifact paths it wrote)
# ---------------------------------------------------------------------------

def cmd_eigs(cfg: PipelineConfig, cfg_hash: str) -> list[str]:
    basis = _basis(cfg)
    out = _stage_dir(cfg, "eigs")
    eig_path = os.path.join(out, "eigenvalues.csv")
    _write_rows(
        eig_path,
        "k,eigenvalue",
        [f"{k},{_fmt(v)}" for k, v in enumerate(basis.eigenvalues)],
    )
    modes_path = os.path.join(out, "modes.csv")
    header = "node," + ",".join(f"mode_{j}" for j in range(basis.n_modes))
    _write_rows(
        modes_path,
        header,
        [f"{i}," + ",".join(_fmt(v) for v in row) for i, row in enumerate(basis.modes)],
    )
    shown = basis.eigenvalues[: min(10, basis.n_modes)]
    print("first eigenvalues:")
    for k, v in enumerate(shown):
        print(f"  lambda_{k} = {v:.12g}")
    return [eig_path, modes_path]


def cmd_simulate(cfg: PipelineConfig, cfg_hash: str) -> list[str]:
    basis = _basis(cfg)
    spec = cfg.cohort
    seeds = spec.seeds if spec.seeds is not None else [
        cfg.seed + i for i in range(spec.n_patients)
    ]
    cohort = make_cohort(
        cfg.rd_params,
        basis,
        spec.n_patients,
        seeds=list(seeds),
        timescales=spec.timescales,
        times=spec.grid(),
        inner_dt=spec.inner_dt,
        smoothness=spec.smoothness,
        stages=spec.stages,
        onsets=spec.onsets,
        clip_factor=spec.clip_factor,
    )
    out = _stage_dir(cfg, "simulate")
    written = []
    for traj in cohort:
        written.extend(save_trajectory_csv(traj, out))
    meta = {
        "species": list(cfg.species),
        "times": [float(t) for t in cohort[0].times],
        "patients": [
            {
                "id": traj.patient_id,
                "seed": int(seed),
                "timescale": float(traj.timescale),
                "stage": None if spec.stages is None else spec.stages[i],
                "onset": 0.0 if spec.onsets is None else spec.onsets[i],
            }
            for i, (traj, seed) in enumerate(zip(cohort, seeds))
        ],
    }
    meta_path = _meta_path(cfg)
    with open(meta_path, "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=1)
        fh.write("\n")
    return written + [meta_path]


def _rollout_rows(
    model,
    basis,
    cohort: list[Trajectory],
    cfg: PipelineConfig,
    start: int,
    stop: int | None,
    phase: str,
    save_dir: str | None = None,
) -> tuple[list[str], list[str]]:
    """Roll every patient from the truth state at `start`, score against the
    truth slice [start, stop), and format one metrics row per species."""
    use_cog = "C" in cfg.species
    written = []
    collected: dict[str, list[tr.Metrics]] = {}
    for traj in cohort:
        truth = tr.slice_trajectory(traj, start, stop)
        ic = {s: traj.fields[s][start] for s in ("A", "tau", "N")}
        pred = tr.predict(
            model,
            basis,
            ic,
            truth.times,
            c0=traj.cognitive[start] if use_cog else None,
            timescale=traj.timescale,
            patient_id=f"{traj.patient_id}_pred",
        )
        if save_dir is not None:
            written.extend(save_trajectory_csv(pred, save_dir))
        species = ["A", "tau", "N"] + (["C"] if use_cog else [])
        for s in species:
            m = tr.evaluate(pred, truth, model, basis, s, params=cfg.rd_params)
            collected.setdefault(s, []).append(m)
    rows = [
        _metrics_row(s, phase, tr.average_metrics(ms)) for s, ms in collected.items()
    ]
    return rows, written


def cmd_train(cfg: PipelineConfig, cfg_hash: str) -> list[str]:
    cohort = _load_cohort(cfg)
    basis = _basis(cfg)
    model = tr.new_model(basis)
    out = _stage_dir(cfg, "train")

    final_losses: dict[str, float] = {}
    traces: dict[str, list[float]] = {}
    for sp in cfg.species:
        trace: list[float] = []
        if sp == "C":
            model, _ = tr.train_cognitive(
                cohort, basis, model, cfg.train, trace_out=trace
            )
        else:
            model, _ = tr.train_species(
                sp, cohort, basis, model, cfg.train, trace_out=trace
            )
        final_losses[sp] = trace[-1]
        traces[sp] = trace

    ckpt_path = _checkpoint_path(cfg)
    save_checkpoint(model, ckpt_path, config_hash=cfg_hash, final_losses=final_losses)
    # training-window metrics come from the same rollout used for prediction,
    # so the generator params yield the reaction-recovery column as well
    if {"A", "tau", "N"} <= set(cfg.species):
        n_train = tr.train_window(cohort[0].n_times, cfg.train.train_fraction)
        metric_rows, _ = _rollout_rows(
            model, basis, cohort, cfg, 0, n_train, "train"
        )
    else:
        metric_rows = []
    metrics_path = os.path.join(out, "metrics.csv")
    _write_rows(metrics_path, METRICS_HEADER, metric_rows)
    trace_path = os.path.join(out, "loss_trace.csv")
    names = list(traces)
    _write_rows(
        trace_path,
        "epoch," + ",".join(names),
        [
            f"{e}," + ",".join(_fmt(traces[n][e]) for n in names)
            for e in range(cfg.train.epochs)
        ],
    )
    return [ckpt_path, metrics_path, trace_path]


def cmd_predict(cfg: PipelineConfig, cfg_hash: str) -> list[str]:
    _require(_checkpoint_path(cfg), "leno train")
    model, _ = load_checkpoint(_checkpoint_path(cfg))
    if not {"A", "tau", "N"} <= set(cfg.species):
        raise InputError("predict needs the full A/tau/N cascade in 'species'")
    cohort = _load_cohort(cfg)
    basis = _basis(cfg)
    out = _stage_dir(cfg, "predict")
    n_train = tr.train_window(cohort[0].n_times, cfg.train.train_fraction)
    rows, written = _rollout_rows(
        model, basis, cohort, cfg, n_train - 1, None, "predict", save_dir=out
    )
    metrics_path = os.path.join(out, "metrics.csv")
    _write_rows(metrics_path, METRICS_HEADER, rows)
    return written + [metrics_path]


def cmd_transfer(cfg: PipelineConfig, cfg_hash: str) -> list[str]:
    _require(_checkpoint_path(cfg), "leno train")
    model, _ = load_checkpoint(_checkpoint_path(cfg))
    basis = _basis(cfg)
    out = _stage_dir(cfg, "transfer")
    spec = cfg.cohort

    fit_rows = []
    collected: dict[str, list[tr.Metrics]] = {}
    for i, gamma in enumerate(cfg.transfer.gammas):
        patient = make_cohort(
            cfg.rd_params,
            basis,
            1,
            seeds=[cfg.seed + cfg.transfer.seed_offset + i],
            timescales=[float(gamma)],
            times=spec.grid(),
            inner_dt=spec.inner_dt,
            smoothness=spec.smoothness,
            stages=[cfg.transfer.stage],
            onsets=[cfg.transfer.onset],
            clip_factor=spec.clip_factor,
        )[0]
        scale, metrics = tr.fit_timescale(model, patient, basis, cfg.train)
        rel = abs(scale.gamma - gamma) / gamma
        fit_rows.append(
            f"{_fmt(gamma)},{_fmt(scale.gamma)},{_fmt(rel)}"
        )
        for s, m in metrics.items():
            collected.setdefault(s, []).append(m)
    fit_path = os.path.join(out, "timescales.csv")
    _write_rows(fit_path, "gamma_true,gamma_fit,rel_err", fit_rows)
    rows = [
        _metrics_row(s, "transfer", tr.average_metrics(ms))
        for s, ms in collected.items()
    ]
    metrics_path = os.path.join(out, "metrics.csv")
    _write_rows(metrics_path, METRICS_HEADER, rows)
    return [fit_path, metrics_path]


def cmd_treat(cfg: PipelineConfig, cfg_hash: str) -> list[str]:
    _require(_checkpoint_path(cfg), "leno train")
    model, _ = load_checkpoint(_checkpoint_path(cfg))
    if "C" not in cfg.species:
        raise InputError("treat needs cognition: include 'C' in 'species'")
    cohort = _load_cohort(cfg)
    basis = _basis(cfg)
    out = _stage_dir(cfg, "treat")
    patient = cohort[cfg.treat_patient]
    ic = {s: patient.fields[s][0] for s in ("A", "tau", "N")}
    c0 = float(patient.cognitive[0])
    times = cfg.treatment.grid()

    written = []
    cognition = {}
    obj_rows = []
    for sc in cfg.scenarios:
        policy, trace = tx.optimize_policy(
            model, basis, ic, c0, cfg.treatment, sc, timescale=patient.timescale
        )
        roll = tx.treated_rollout(
            model, policy, basis, ic, times, c0=c0, timescale=patient.timescale
        )
        obj = tx.objective(policy, roll, cfg.treatment)
        cognition[sc] = roll.cognitive
        obj_rows.append(f"{sc},{_fmt(obj)},{len(trace)}")
        dose_path = os.path.join(out, f"doses_{sc}.csv")
        d_a, d_t = policy.dose("A", times), policy.dose("tau", times)
        _write_rows(
            dose_path,
            "t,d_A,d_tau",
            [f"{_fmt(t)},{_fmt(a)},{_fmt(b)}" for t, a, b in zip(times, d_a, d_t)],
        )
        written.append(dose_path)

    cog_path = os.path.join(out, "cognitive.csv")
    cols = [sc for sc in cfg.scenarios]
    header = "t," + ",".join(_SCENARIO_COLUMNS[sc] for sc in cols)
    _write_rows(
        cog_path,
        header,
        [
            _fmt(t) + "," + ",".join(_fmt(cognition[sc][n]) for sc in cols)
            for n, t in enumerate(times)
        ],
    )
    obj_path = os.path.join(out, "objectives.csv")
    _write_rows(obj_path, "scenario,objective,epochs", obj_rows)
    return written + [cog_path, obj_path]


def cmd_report(cfg: PipelineConfig, cfg_hash: str) -> list[str]:
    sources = []
    for stage in ("train", "predict", "transfer"):
        path = os.path.join(cfg.out_dir, stage, "metrics.csv")
        if os.path.exists(path):
            sources.append(path)
    if not sources:
        raise StageOrderError(
            f"no metrics found under {cfg.out_dir}: run 'leno train' first"
        )
    rows = []
    for path in sources:
        with open(path, "r", encoding="utf-8") as fh:
            header = fh.readline().strip()
            if header != METRICS_HEADER:
                raise InputError(f"{path}: unexpected metrics header")
            rows.extend(line.strip() for line in fh if line.strip())
    out = _stage_dir(cfg, "report")
    summary_path = os.path.join(out, "summary.csv")
    _write_rows(summary_path, METRICS_HEADER, rows)

    names = METRICS_HEADER.split(",")
    print(f"{'species':>8} {'phase':>9} " + " ".join(f"{n:>12}" for n in names[2:7]))
    for row in rows:
        parts = row.split(",")
        cells = []
        for v in parts[2:7]:
            x = float(v)
            cells.append(f"{x:>12.4e}" if math.isfinite(x) else f"{'-':>12}")
        print(f"{parts[0]:>8} {parts[1]:>9} " + " ".join(cells))
    return [summary_path]


_DISPATCH = {
    "eigs": cmd_eigs,
    "simulate": cmd_simulate,
    "train": cmd_train,
    "predict": cmd_predict,
    "transfer": cmd_transfer,
    "treat": cmd_treat,
    "report": cmd_report,
}


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="leno",
        description="Spectral neural-operator pipeline for biomarker dynamics",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="YAML run configuration")
        p.add_argument("--seed", type=int, default=None, help="override config seed")
        p.add_argument("--out", default=None, help="override output directory")
    args = parser.parse_args(argv)

    try:
        cfg, cfg_hash = load_config(args.config)
        if args.seed is not None:
            cfg.seed = args.seed
        if args.out is not None:
            cfg.out_dir = args.out
        start = time.perf_counter()
        outputs = _DISPATCH[args.command](cfg, cfg_hash)
        manifest = {
            "command": args.command,
            "config_hash": cfg_hash,
            "seed": cfg.seed,
            "wall_time_s": time.perf_counter() - start,
            "outputs": [os.path.relpath(p, cfg.out_dir) for p in outputs],
        }
        stage = _stage_dir(cfg, args.command)
        with open(os.path.join(stage, "manifest.json"), "w", encoding="utf-8") as fh:
            json.dump(manifest, fh, indent=1)
            fh.write("\n")
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except StageOrderError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except NumericalError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    return 0


if __name__ == "__main__":
    sys.exit(main())
