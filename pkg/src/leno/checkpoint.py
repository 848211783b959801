"""Versioned JSON checkpoints for trained models.

Parameters are dumped as decimal text via the shortest round-tripping float
representation, so save -> load reproduces every weight bitwise while the
file stays diffable.  The basis digest travels with the model; using a
checkpoint against a different basis fails at use time.
"""

from __future__ import annotations

import json
import os

import numpy as np

from .errors import InputError
from .networks import MlpParams
from .training import LenoModel

FORMAT = "leno-checkpoint"
VERSION = 1


def save_checkpoint(
    model: LenoModel,
    path: str,
    config_hash: str = "",
    final_losses: dict[str, float] | None = None,
) -> None:
    """Write the model with provenance; overwrites identically on rerun."""
    model.validate_sizes()
    nets = {}
    for name, net in model.nets.items():
        nets[name] = {
            "sizes": [int(s) for s in net.sizes],
            "output_activation": net.output_activation,
            "weights": [w.tolist() for w in net.weights],
            "biases": [b.tolist() for b in net.biases],
        }
    payload = {
        "format": FORMAT,
        "version": VERSION,
        "basis": {"digest": model.basis_id, "n_modes": int(model.n_modes)},
        "log_alpha": {k: float(v) for k, v in model.log_alpha.items()},
        "nets": nets,
        "provenance": {
            "config_hash": config_hash,
            "final_losses": {k: float(v) for k, v in (final_losses or {}).items()},
        },
    }
    try:
        text = json.dumps(payload, indent=1, allow_nan=False)
    except ValueError:
        raise InputError("model has non-finite parameters") from None
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text + "\n")


def load_checkpoint(path: str) -> tuple[LenoModel, dict]:
    """Read a checkpoint; returns (model, provenance record)."""
    if not os.path.exists(path):
        raise InputError(f"checkpoint file not found: {path}")
    with open(path, "r", encoding="utf-8") as fh:
        try:
            payload = json.load(fh)
        except json.JSONDecodeError as exc:
            raise InputError(f"corrupt checkpoint {path}: {exc}") from None
    if not isinstance(payload, dict) or payload.get("format") != FORMAT:
        raise InputError(f"{path} is not a model checkpoint")
    version = payload.get("version")
    if version != VERSION:
        raise InputError(
            f"unsupported checkpoint version {version!r} in {path}, expected {VERSION}"
        )

    try:
        basis_meta = payload["basis"]
        model = LenoModel(
            basis_id=str(basis_meta["digest"]), n_modes=int(basis_meta["n_modes"])
        )
        for name, rec in payload["nets"].items():
            weights = [np.array(w, dtype=np.float64) for w in rec["weights"]]
            biases = [np.array(b, dtype=np.float64) for b in rec["biases"]]
            sizes = [int(s) for s in rec["sizes"]]
            for l, (w, b) in enumerate(zip(weights, biases)):
                if w.shape != (sizes[l], sizes[l + 1]) or b.shape != (sizes[l + 1],):
                    raise InputError(
                        f"corrupt checkpoint {path}: layer {l} of net {name!r} "
                        f"has shape {w.shape}"
                    )
            model.nets[name] = MlpParams(
                sizes=sizes,
                weights=weights,
                biases=biases,
                output_activation=str(rec["output_activation"]),
            )
        model.log_alpha = {k: float(v) for k, v in payload["log_alpha"].items()}
        provenance = payload.get("provenance", {})
    except (KeyError, TypeError, ValueError) as exc:
        raise InputError(f"corrupt checkpoint {path}: {exc}") from None
    model.validate_sizes()
    return model, provenance
