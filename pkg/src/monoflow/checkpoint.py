"""Self-describing JSON artifacts: model checkpoints and config digests.

Arrays are base64-encoded little-endian float64 so checkpoints are
diff-able, language-portable and exact.  All documents are serialized
canonically (sorted keys, fixed separators) so identical runs produce
byte-identical files.
"""

from __future__ import annotations

import base64
import hashlib
import json
from pathlib import Path

import numpy as np

from .flow import FlowModel
from .kernels import KernelParams

SCHEMA_VERSION = 1


def encode_array(arr) -> dict:
    arr = np.asarray(arr, dtype="<f8")
    return {
        "dtype": "<f8",
        "shape": list(arr.shape),
        "data": base64.b64encode(arr.tobytes()).decode("ascii"),
    }


def decode_array(obj) -> np.ndarray:
    raw = base64.b64decode(obj["data"])
    return np.frombuffer(raw, dtype=obj["dtype"]).reshape(obj["shape"]).copy()


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def config_digest(obj) -> str:
    """Stable hash of a JSON-able configuration mapping."""
    return hashlib.sha256(canonical_json(obj).encode("utf-8")).hexdigest()[:16]


def model_to_jsonable(model: FlowModel) -> dict:
    return {
        "kernel": {
            "variant": model.kernel.variant,
            "signal_variance": model.kernel.signal_variance,
            "lengthscales": encode_array(model.kernel.lengthscales),
        },
        "z": encode_array(model.z),
        "m": encode_array(model.m),
        "s_factor": encode_array(model.s_factor),
        "noise_variance": model.noise_variance,
        "flow_time": model.flow_time,
        "n_steps": model.n_steps,
        "seed": model.seed,
    }


def model_from_jsonable(obj) -> FlowModel:
    kernel = KernelParams(
        variant=obj["kernel"]["variant"],
        signal_variance=obj["kernel"]["signal_variance"],
        lengthscales=decode_array(obj["kernel"]["lengthscales"]),
    )
    return FlowModel(
        kernel=kernel,
        z=decode_array(obj["z"]),
        m=decode_array(obj["m"]),
        s_factor=decode_array(obj["s_factor"]),
        noise_variance=obj["noise_variance"],
        flow_time=obj["flow_time"],
        n_steps=obj["n_steps"],
        seed=obj.get("seed"),
    )


def write_checkpoint(path, model: FlowModel, *, config: dict,
                     trace_summary: dict | None = None,
                     master_seed: int | None = None) -> str:
    """Write a model checkpoint; returns the embedded config digest."""
    digest = config_digest(config)
    doc = {
        "schema_version": SCHEMA_VERSION,
        "kind": "monoflow-checkpoint",
        "model": model_to_jsonable(model),
        "config": config,
        "config_digest": digest,
        "master_seed": master_seed,
        "trace_summary": trace_summary or {},
    }
    Path(path).write_text(canonical_json(doc) + "\n")
    return digest


def read_checkpoint(path) -> dict:
    doc = json.loads(Path(path).read_text())
    if doc.get("kind") != "monoflow-checkpoint":
        raise ValueError(f"{path}: not a monoflow checkpoint")
    version = doc.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ValueError(
            f"{path}: checkpoint schema version {version!r} not supported "
            f"(expected {SCHEMA_VERSION})")
    doc["model_obj"] = model_from_jsonable(doc["model"])
    return doc
