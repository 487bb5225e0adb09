"""Checkpoint files: versioned JSON with raw little-endian float64 payloads.

Parameter and buffer arrays are serialized as base64-wrapped little-endian
64-bit floats, so a load reproduces every weight bit-exactly and probe-batch
logits round-trip without drift. Writes go to a temp file in the target
directory and are renamed into place.
"""

from __future__ import annotations

import base64
import json
import os

import numpy as np

from .errors import CheckpointFormatError
from .nn import MlpNetwork, make_mlp
from .quant import QuantSpec, QuantizedMlp, build_quantized_student

FORMAT_VERSION = 1


def _encode_array(a: np.ndarray) -> dict:
    a = np.asarray(a, dtype=np.float64)
    return {
        "shape": list(a.shape),
        "data": base64.b64encode(a.astype("<f8").tobytes()).decode("ascii"),
    }


def _decode_array(obj: dict) -> np.ndarray:
    raw = base64.b64decode(obj["data"])
    a = np.frombuffer(raw, dtype="<f8").astype(np.float64)
    return a.reshape(obj["shape"])


def atomic_write_text(path, text: str) -> None:
    path = os.fspath(path)
    tmp = path + ".tmp"
    with open(tmp, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _state_payload(net) -> dict:
    return {
        "params": {k: _encode_array(v.data) for k, v in net.named_parameters().items()},
        "buffers": {k: _encode_array(v) for k, v in net.named_buffers().items()},
    }


def _load_state(net, payload: dict) -> None:
    params = net.named_parameters()
    for name, enc in payload["params"].items():
        if name not in params:
            raise CheckpointFormatError(f"unknown parameter {name!r} in checkpoint")
        params[name].data = _decode_array(enc)
    buffers = net.named_buffers()
    for name, enc in payload["buffers"].items():
        if name not in buffers:
            raise CheckpointFormatError(f"unknown buffer {name!r} in checkpoint")
        buffers[name][...] = _decode_array(enc)


def save_teacher(path, net: MlpNetwork, hidden: tuple[int, ...],
                 norm_stats=None, metadata: dict | None = None) -> None:
    doc = {
        "version": FORMAT_VERSION,
        "kind": "teacher",
        "architecture": {
            "input_dim": net.input_dim,
            "hidden": list(hidden),
            "num_classes": net.output_dim,
        },
        **_state_payload(net),
        "metadata": metadata or {},
    }
    if norm_stats is not None:
        mean, std = norm_stats
        doc["norm_stats"] = {"mean": _encode_array(mean), "std": _encode_array(std)}
    atomic_write_text(path, json.dumps(doc, sort_keys=True))


def save_student(path, net: QuantizedMlp, hidden: tuple[int, ...],
                 norm_stats=None, metadata: dict | None = None) -> None:
    doc = {
        "version": FORMAT_VERSION,
        "kind": "student",
        "architecture": {
            "input_dim": net.input_dim,
            "hidden": list(hidden),
            "num_classes": net.output_dim,
        },
        **_state_payload(net),
        "quant": {
            "bits": net.spec.bits,
            "act_ema_decay": net.spec.act_ema_decay,
            "act_ranges": [
                {"min": st.observed_min, "max": st.observed_max}
                for st in net.act_states()
            ],
        },
        "metadata": metadata or {},
    }
    if norm_stats is not None:
        mean, std = norm_stats
        doc["norm_stats"] = {"mean": _encode_array(mean), "std": _encode_array(std)}
    atomic_write_text(path, json.dumps(doc, sort_keys=True))


def _read(path) -> dict:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise CheckpointFormatError(f"{path}: not a valid checkpoint: {e}") from None
    if not isinstance(doc, dict) or "version" not in doc:
        raise CheckpointFormatError(f"{path}: missing version field")
    if doc["version"] != FORMAT_VERSION:
        raise CheckpointFormatError(
            f"{path}: unsupported checkpoint version {doc['version']} (want {FORMAT_VERSION})"
        )
    return doc


def load_checkpoint(path):
    """Load any checkpoint; returns (network, document).

    The document keeps metadata, architecture, and norm stats accessible to
    callers; the network is fully reconstructed, including quantization state
    for students.
    """
    doc = _read(path)
    arch = doc.get("architecture")
    if arch is None or doc.get("kind") not in ("teacher", "student"):
        raise CheckpointFormatError(f"{path}: unsupported checkpoint kind {doc.get('kind')!r}")
    rng = np.random.default_rng(0)  # shapes only; weights are overwritten below
    teacher = make_mlp(arch["input_dim"], tuple(arch["hidden"]), arch["num_classes"], rng)
    if doc["kind"] == "teacher":
        _load_state(teacher, doc)
        teacher.eval()
        return teacher, doc

    quant = doc.get("quant")
    if quant is None:
        raise CheckpointFormatError(f"{path}: student checkpoint without quant section")
    spec = QuantSpec(bits=quant["bits"], act_ema_decay=quant["act_ema_decay"])
    student = build_quantized_student(teacher, spec)
    _load_state(student, doc)
    ranges = quant.get("act_ranges", [])
    states = student.act_states()
    if len(ranges) != len(states):
        raise CheckpointFormatError(f"{path}: activation range count mismatch")
    for st, rg in zip(states, ranges):
        st.observed_min = rg["min"]
        st.observed_max = rg["max"]
        st.frozen = True
    student.eval()
    return student, doc


def norm_stats_from(doc: dict):
    ns = doc.get("norm_stats")
    if ns is None:
        return None
    return _decode_array(ns["mean"]), _decode_array(ns["std"])
