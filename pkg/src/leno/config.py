"""Schema-validated YAML configuration for the pipeline commands.

A run is described by one YAML file: the domain file, basis size, species
toggles, generator overrides, and per-stage settings.  Unknown keys anywhere
are rejected so typos fail loudly instead of silently using defaults.  The
domain path is resolved relative to the config file so run directories stay
portable; the output directory is taken as given (the CLI can override it).
"""

from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass, field, fields as dc_fields

import numpy as np
import yaml

from .errors import InputError
from .networks import LrSchedule
from .simulate import RDParams
from .training import TrainConfig
from .treatment import SCENARIOS, TreatmentConfig

CASCADE = ("A", "tau", "N", "C")


@dataclass
class CohortSpec:
    """Synthetic cohort layout shared by simulate/predict/transfer."""

    n_patients: int = 5
    t_start: float = 0.0
    t_end: float = 10.0
    n_visits: int = 21
    inner_dt: float = 1e-3
    smoothness: int = 8
    stages: list | None = None
    onsets: list | None = None
    timescales: list | None = None
    seeds: list | None = None
    clip_factor: float | None = None

    def validate(self) -> None:
        if self.n_patients < 1:
            raise InputError("cohort.n_patients must be >= 1")
        if self.n_visits < 3:
            raise InputError("cohort.n_visits must be >= 3 (training needs a window)")
        if not self.t_end > self.t_start:
            raise InputError("cohort.t_end must lie beyond cohort.t_start")
        if self.inner_dt <= 0:
            raise InputError("cohort.inner_dt must be positive")
        for name in ("stages", "onsets", "timescales", "seeds"):
            val = getattr(self, name)
            if val is not None and len(val) != self.n_patients:
                raise InputError(f"cohort.{name} needs n_patients entries")

    def grid(self) -> np.ndarray:
        return np.linspace(self.t_start, self.t_end, self.n_visits)


@dataclass
class TransferSpec:
    """Held-out patients with altered progression speed."""

    gammas: tuple = (0.5, 1.5, 2.0)
    seed_offset: int = 1000
    stage: float | None = 0.5
    onset: float = 0.0

    def validate(self) -> None:
        if len(self.gammas) == 0:
            raise InputError("transfer.gammas must not be empty")
        if any(g <= 0 for g in self.gammas):
            raise InputError("transfer.gammas must be positive")
        if self.onset < 0:
            raise InputError("transfer.onset must be nonnegative")


@dataclass
class PipelineConfig:
    domain: str = ""
    domain_kind: str = "mesh"
    n_modes: int = 48
    species: tuple = CASCADE
    out_dir: str = "runs/leno"
    seed: int = 0
    rd_params: RDParams = field(default_factory=RDParams)
    cohort: CohortSpec = field(default_factory=CohortSpec)
    train: TrainConfig = field(default_factory=TrainConfig)
    treatment: TreatmentConfig = field(default_factory=TreatmentConfig)
    transfer: TransferSpec = field(default_factory=TransferSpec)
    treat_patient: int = 0
    scenarios: tuple = SCENARIOS

    def validate(self) -> None:
        if not self.domain:
            raise InputError("config needs a 'domain' file path")
        if self.domain_kind not in ("mesh", "graph"):
            raise InputError(f"domain_kind must be mesh or graph, got {self.domain_kind!r}")
        if self.n_modes < 1:
            raise InputError("n_modes must be >= 1")
        if tuple(self.species) != CASCADE[: len(self.species)]:
            raise InputError(
                f"species must be a prefix of {CASCADE} in cascade order, "
                f"got {tuple(self.species)}"
            )
        for sc in self.scenarios:
            if sc not in SCENARIOS:
                raise InputError(f"unknown scenario {sc!r}")
        if not 0 <= self.treat_patient < self.cohort.n_patients:
            raise InputError("treat_patient must index a cohort patient")
        self.rd_params.validate()
        self.cohort.validate()
        self.train.validate()
        self.treatment.validate()
        self.transfer.validate()


def _set_known(obj, section: str, data: dict) -> None:
    known = {f.name for f in dc_fields(type(obj))}
    for key, val in data.items():
        if key not in known:
            raise InputError(f"unknown config key '{section}.{key}'")
        setattr(obj, key, val)


def _schedule_from(section: str, data: dict) -> LrSchedule:
    if "schedule" in data:
        raise InputError(f"{section}: set lr_base/lr_factor/lr_interval, not 'schedule'")
    sched = LrSchedule()
    for key, attr in (("lr_base", "base"), ("lr_factor", "factor"), ("lr_interval", "interval")):
        if key in data:
            setattr(sched, attr, data.pop(key))
    if sched.base <= 0 or sched.interval < 1:
        raise InputError(f"{section}: learning-rate schedule values out of range")
    return sched


def _build_config(data: dict, origin: str) -> PipelineConfig:
    cfg = PipelineConfig()
    plain = {
        "domain", "domain_kind", "n_modes", "out_dir", "seed", "treat_patient",
    }
    for key, val in data.items():
        if key in plain:
            setattr(cfg, key, val)
        elif key == "species":
            cfg.species = tuple(val)
        elif key == "scenarios":
            cfg.scenarios = tuple(val)
        elif key == "rd_params":
            _set_known(cfg.rd_params, "rd_params", dict(val))
        elif key == "cohort":
            _set_known(cfg.cohort, "cohort", dict(val))
        elif key == "train":
            sub = dict(val)
            cfg.train.schedule = _schedule_from("train", sub)
            if "hidden" in sub and sub["hidden"] is not None:
                sub["hidden"] = tuple(sub["hidden"])
            _set_known(cfg.train, "train", sub)
        elif key == "treatment":
            sub = dict(val)
            cfg.treatment.schedule = _schedule_from("treatment", sub)
            _set_known(cfg.treatment, "treatment", sub)
        elif key == "transfer":
            sub = dict(val)
            if "gammas" in sub:
                sub["gammas"] = tuple(sub["gammas"])
            _set_known(cfg.transfer, "transfer", sub)
        else:
            raise InputError(f"{origin}: unknown config key '{key}'")
    return cfg


def load_config(path: str) -> tuple[PipelineConfig, str]:
    """Parse and validate a YAML config; returns (config, sha256 of the file)."""
    if not os.path.exists(path):
        raise InputError(f"config file not found: {path}")
    with open(path, "rb") as fh:
        raw = fh.read()
    try:
        data = yaml.safe_load(raw)
    except yaml.YAMLError as exc:
        raise InputError(f"{path}: invalid YAML: {exc}") from None
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise InputError(f"{path}: top level must be a mapping")

    cfg = _build_config(data, path)
    if cfg.domain and not os.path.isabs(cfg.domain):
        cfg.domain = os.path.join(os.path.dirname(os.path.abspath(path)), cfg.domain)
    cfg.validate()
    if not os.path.exists(cfg.domain):
        raise InputError(f"domain file not found: {cfg.domain}")
    return cfg, hashlib.sha256(raw).hexdigest()
