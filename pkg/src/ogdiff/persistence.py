"""Artifact files: canonical text and packed binary encodings.

Text layout::

    OGDIFF-ARTIFACT
    version: 1
    type: <tag>
    <canonical JSON payload>

Arrays become ``{"__ndarray__": [shape], "dtype": ..., "data": [...]}``.
Python's float repr is the shortest string that round-trips, so text files
reproduce every float bit for bit.

Binary layout (little-endian): magic ``OGDIFFB\\0``, u32 version, u32 header
length, UTF-8 JSON header in which each array is replaced by
``{"__array__": index}``, then per array a u64 element count followed by the
raw float64 (or int64) data.

Writes go to a temporary file in the target directory followed by
``os.replace``, so readers never see a partial file.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
import tempfile
from dataclasses import asdict

import numpy as np

from .denoiser import MlpDenoiser
from .latent import LinearMap
from .prior import OptimalPrior
from .scenario import JointGmm, SceneSpec
from .stats import GaussianMixture

MAGIC_TEXT = "OGDIFF-ARTIFACT"
MAGIC_BIN = b"OGDIFFB\x00"
VERSION = 1
HEADER_LINES = 3


# ---------------------------------------------------------------------------
# domain objects <-> plain payloads


def to_payload(obj) -> tuple[str, object]:
    if isinstance(obj, JointGmm):
        mix = obj.mixture
        return "scene", {"spec": asdict(obj.spec), "seed": obj.seed, "weights": mix.weights,
                         "means": mix.means, "covs": mix.covs, "labels": obj.labels}
    if isinstance(obj, GaussianMixture):
        return "mixture", {"weights": obj.weights, "means": obj.means, "covs": obj.covs}
    if isinstance(obj, MlpDenoiser):
        return "checkpoint", obj.to_dict()
    if isinstance(obj, LinearMap):
        return "linear-map", obj.to_dict()
    if isinstance(obj, OptimalPrior):
        return "prior", {"mu_star": obj.mu_star, "sigma_star": obj.sigma_star, "sigma_p_star": obj.sigma_p_star,
                         "alpha_bar_T": obj.alpha_bar_T, "T": obj.T}
    if isinstance(obj, np.ndarray):
        return "samples", obj
    if isinstance(obj, list):
        return "metrics", obj
    if isinstance(obj, dict):
        return "manifest", obj
    raise TypeError(f"no artifact encoding for {type(obj).__name__}")


def from_payload(tag: str, payload):
    if tag == "scene":
        mix = GaussianMixture(payload["weights"], payload["means"], payload["covs"])
        return JointGmm(SceneSpec(**payload["spec"]), payload["seed"], mix, np.asarray(payload["labels"]))
    if tag == "mixture":
        return GaussianMixture(payload["weights"], payload["means"], payload["covs"])
    if tag == "checkpoint":
        return MlpDenoiser.from_dict(payload)
    if tag == "linear-map":
        return LinearMap.from_dict(payload)
    if tag == "prior":
        return OptimalPrior(np.asarray(payload["mu_star"]), np.asarray(payload["sigma_star"]),
                            np.asarray(payload["sigma_p_star"]), payload["alpha_bar_T"], payload["T"])
    if tag in ("samples", "metrics", "manifest", "report"):
        return payload
    raise ValueError(f"unknown artifact type {tag!r}")


# ---------------------------------------------------------------------------
# JSON with arrays


def _encode(obj):
    if isinstance(obj, np.ndarray):
        kind = "int64" if np.issubdtype(obj.dtype, np.integer) else "float64"
        return {"__ndarray__": list(obj.shape), "dtype": kind, "data": obj.astype(kind).ravel().tolist()}
    if isinstance(obj, dict):
        return {str(k): _encode(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_encode(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def _decode(obj):
    if isinstance(obj, dict):
        if "__ndarray__" in obj:
            return np.array(obj["data"], dtype=obj["dtype"]).reshape(obj["__ndarray__"])
        return {k: _decode(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_decode(v) for v in obj]
    return obj


def canonical_json(obj, indent=None) -> str:
    return json.dumps(_encode(obj), sort_keys=True, indent=indent, separators=(",", ": ") if indent else (",", ":"))


def manifest_hash(manifest: dict, exclude=("timings",)) -> str:
    """SHA-256 of the canonical JSON, ignoring key order and excluded keys."""
    body = {k: v for k, v in manifest.items() if k not in exclude}
    return hashlib.sha256(canonical_json(body).encode()).hexdigest()


# ---------------------------------------------------------------------------
# text and binary files


def dumps_text(obj, tag: str | None = None) -> str:
    auto_tag, payload = to_payload(obj)
    return f"{MAGIC_TEXT}\nversion: {VERSION}\ntype: {tag or auto_tag}\n{canonical_json(payload, indent=1)}\n"


def loads_text(text: str):
    lines = text.split("\n", HEADER_LINES)
    if len(lines) < HEADER_LINES + 1 or lines[0] != MAGIC_TEXT:
        raise ValueError("parse error at line 1")
    if not lines[1].startswith("version: "):
        raise ValueError("parse error at line 2")
    try:
        version = int(lines[1][len("version: "):])
    except ValueError:
        raise ValueError("parse error at line 2") from None
    if version != VERSION:
        raise ValueError("incompatible artifact version")
    if not lines[2].startswith("type: "):
        raise ValueError("parse error at line 3")
    tag = lines[2][len("type: "):]
    try:
        payload = json.loads(lines[3])
    except json.JSONDecodeError as err:
        raise ValueError(f"parse error at line {err.lineno + HEADER_LINES}") from None
    return from_payload(tag, _decode(payload))


def dumps_binary(obj, tag: str | None = None) -> bytes:
    auto_tag, payload = to_payload(obj)
    arrays: list[np.ndarray] = []

    def strip(o):
        if isinstance(o, np.ndarray):
            arrays.append(o)
            kind = "int64" if np.issubdtype(o.dtype, np.integer) else "float64"
            return {"__array__": len(arrays) - 1, "shape": list(o.shape), "dtype": kind}
        if isinstance(o, dict):
            return {str(k): strip(v) for k, v in o.items()}
        if isinstance(o, (list, tuple)):
            return [strip(v) for v in o]
        if isinstance(o, np.generic):
            return o.item()
        return o

    header = json.dumps({"type": tag or auto_tag, "payload": strip(payload)}, sort_keys=True).encode()
    parts = [MAGIC_BIN, struct.pack("<II", VERSION, len(header)), header]
    for a in arrays:
        kind = "<i8" if np.issubdtype(a.dtype, np.integer) else "<f8"
        parts.append(struct.pack("<Q", a.size))
        parts.append(np.ascontiguousarray(a, dtype=kind).tobytes())
    return b"".join(parts)


def loads_binary(data: bytes):
    if not data.startswith(MAGIC_BIN):
        raise ValueError("parse error at offset 0")
    off = len(MAGIC_BIN)
    if len(data) < off + 8:
        raise ValueError(f"parse error at offset {off}")
    version, hlen = struct.unpack_from("<II", data, off)
    if version != VERSION:
        raise ValueError("incompatible artifact version")
    off += 8
    try:
        head = json.loads(data[off:off + hlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError):
        raise ValueError(f"parse error at offset {off}") from None
    off += hlen
    arrays = []
    while off < len(data):
        if len(data) < off + 8:
            raise ValueError(f"parse error at offset {off}")
        (count,) = struct.unpack_from("<Q", data, off)
        off += 8
        if len(data) < off + 8 * count:
            raise ValueError(f"parse error at offset {off}")
        arrays.append(data[off:off + 8 * count])
        off += 8 * count

    def fill(o):
        if isinstance(o, dict):
            if "__array__" in o:
                idx = o["__array__"]
                if idx >= len(arrays):
                    raise ValueError(f"parse error at offset {off}")
                kind = "<i8" if o["dtype"] == "int64" else "<f8"
                return np.frombuffer(arrays[idx], dtype=kind).astype(kind[1:]).reshape(o["shape"])
            return {k: fill(v) for k, v in o.items()}
        if isinstance(o, list):
            return [fill(v) for v in o]
        return o

    return from_payload(head["type"], fill(head["payload"]))


def _atomic_write(path, data: bytes) -> None:
    path = os.fspath(path)
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def save(path, obj, tag: str | None = None, binary: bool = False) -> None:
    data = dumps_binary(obj, tag) if binary else dumps_text(obj, tag).encode()
    _atomic_write(path, data)


def load(path):
    with open(path, "rb") as fh:
        data = fh.read()
    if data.startswith(MAGIC_BIN):
        return loads_binary(data)
    try:
        text = data.decode()
    except UnicodeDecodeError:
        raise ValueError("parse error at line 1") from None
    return loads_text(text)


def save_json(path, obj) -> None:
    """Plain canonical JSON (for plot series and timing side files)."""
    _atomic_write(path, (canonical_json(obj, indent=1) + "\n").encode())
