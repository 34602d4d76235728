"""Binary checkpoint container.

Layout::

    b"LDAE"  u32 version  u64 manifest_length  manifest (UTF-8 JSON)  payload

The manifest lists every tensor as ``{name, shape, dtype, offset, nbytes}``
with offsets relative to the start of the payload; tensors are stored
little-endian and C-ordered.  Everything else in the manifest (model spec,
training config, history, optimizer constants, whitener metadata) is plain
JSON.  Writing is deterministic: equal contents give equal bytes.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field

import numpy as np

from .data import Whitener
from .network import ModelSpec, Params, tensor_shapes
from .optimizer import OptState
from .trainer import TrainConfig, TrainHistory

MAGIC = b"LDAE"
VERSION = 1
_HEADER = struct.Struct("<4sIQ")


class CheckpointError(ValueError):
    pass


@dataclass
class Checkpoint:
    params: Params = None
    whitener: Whitener = None
    opt_state: OptState = None
    history: TrainHistory = None
    config: TrainConfig = None
    extra: dict = field(default_factory=dict)

    @property
    def spec(self):
        return self.params.spec if self.params is not None else None


def _le(array):
    array = np.ascontiguousarray(array)
    return array.astype(array.dtype.newbyteorder("<"), copy=False)


def _encode(manifest, tensors):
    entries = []
    chunks = []
    offset = 0
    for name, array in tensors:
        array = _le(array)
        raw = array.tobytes()
        entries.append({"name": name, "shape": list(array.shape), "dtype": array.dtype.str,
                        "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    manifest = dict(manifest, tensors=entries, payload_bytes=offset)
    text = json.dumps(manifest, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return _HEADER.pack(MAGIC, VERSION, len(text)) + text + b"".join(chunks)


def _decode(blob):
    if len(blob) < _HEADER.size:
        raise CheckpointError("file too short for a checkpoint header")
    magic, version, mlen = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise CheckpointError(f"bad magic {magic!r}, expected {MAGIC!r}")
    if version != VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}, expected {VERSION}")
    start = _HEADER.size + mlen
    if len(blob) < start:
        raise CheckpointError("manifest truncated")
    manifest = json.loads(blob[_HEADER.size:start].decode("utf-8"))
    payload = memoryview(blob)[start:]
    tensors = {}
    for entry in manifest["tensors"]:
        end = entry["offset"] + entry["nbytes"]
        if end > len(payload):
            raise CheckpointError(
                f"length mismatch: tensor {entry['name']!r} needs bytes {entry['offset']}..{end} "
                f"but the payload has {len(payload)}"
            )
        dtype = np.dtype(entry["dtype"])
        expected = int(np.prod(entry["shape"], dtype=np.int64)) * dtype.itemsize
        if expected != entry["nbytes"]:
            raise CheckpointError(f"length mismatch: tensor {entry['name']!r} shape disagrees with its byte count")
        arr = np.frombuffer(payload[entry["offset"]:end], dtype=dtype).reshape(entry["shape"])
        tensors[entry["name"]] = arr.astype(dtype.newbyteorder("="), copy=True)
    if len(payload) != manifest["payload_bytes"]:
        raise CheckpointError(
            f"length mismatch: manifest declares {manifest['payload_bytes']} payload bytes, file has {len(payload)}"
        )
    return manifest, tensors


def _whitener_parts(whitener):
    meta = {"retained_variance_fraction": float(whitener.retained_variance_fraction)}
    tensors = [("whitener/mean", whitener.mean), ("whitener/basis", whitener.basis), ("whitener/scale", whitener.scale)]
    if whitener.eigenvalues is not None:
        tensors.append(("whitener/eigenvalues", whitener.eigenvalues))
    return meta, tensors


def _whitener_from(meta, tensors):
    return Whitener(
        mean=tensors["whitener/mean"],
        basis=tensors["whitener/basis"],
        scale=tensors["whitener/scale"],
        retained_variance_fraction=meta["retained_variance_fraction"],
        eigenvalues=tensors.get("whitener/eigenvalues"),
    )


def dumps_checkpoint(ckpt):
    manifest = {"extra": ckpt.extra}
    tensors = []
    if ckpt.params is not None:
        spec = ckpt.params.spec
        manifest["spec"] = {"variant": spec.variant, "layer_sizes": list(spec.layer_sizes)}
        tensors += [(f"params/{k}", ckpt.params.tensors[k]) for k in tensor_shapes(spec)]
        tensors += [(f"centering/{k}", v) for k, v in sorted(ckpt.params.centering.items())]
    if ckpt.whitener is not None:
        manifest["whitener"], wt = _whitener_parts(ckpt.whitener)
        tensors += wt
    if ckpt.opt_state is not None:
        manifest["optimizer"] = {"rho": ckpt.opt_state.rho, "epsilon": ckpt.opt_state.epsilon}
        tensors += [(f"opt/{k}", v) for k, v in ckpt.opt_state.tensors().items()]
    if ckpt.history is not None:
        manifest["history"] = ckpt.history.to_dict()
    if ckpt.config is not None:
        manifest["config"] = ckpt.config.to_dict()
    return _encode(manifest, tensors)


def loads_checkpoint(blob):
    manifest, tensors = _decode(blob)
    ckpt = Checkpoint(extra=manifest.get("extra", {}))
    if "spec" in manifest:
        spec = ModelSpec(manifest["spec"]["variant"], tuple(manifest["spec"]["layer_sizes"]))
        params = {}
        for name in tensor_shapes(spec):
            key = f"params/{name}"
            if key not in tensors:
                raise CheckpointError(f"checkpoint lacks tensor {key!r}")
            params[name] = tensors[key]
        centering = {k.split("/", 1)[1]: v for k, v in tensors.items() if k.startswith("centering/")}
        ckpt.params = Params(spec, params, centering)
    if "whitener" in manifest:
        ckpt.whitener = _whitener_from(manifest["whitener"], tensors)
    if "optimizer" in manifest:
        opt = OptState(manifest["optimizer"]["rho"], manifest["optimizer"]["epsilon"])
        for k, v in tensors.items():
            if k.startswith("opt/Eg2/"):
                opt.sq_grad[k[len("opt/Eg2/"):]] = v
            elif k.startswith("opt/Ed2/"):
                opt.sq_delta[k[len("opt/Ed2/"):]] = v
        ckpt.opt_state = opt
    if "history" in manifest:
        ckpt.history = TrainHistory.from_dict(manifest["history"])
    if "config" in manifest:
        ckpt.config = TrainConfig.from_dict(manifest["config"])
    return ckpt


def save_checkpoint(path, params=None, whitener=None, opt_state=None, history=None, config=None, extra=None):
    blob = dumps_checkpoint(Checkpoint(params, whitener, opt_state, history, config, extra or {}))
    with open(path, "wb") as fh:
        fh.write(blob)


def load_checkpoint(path):
    with open(path, "rb") as fh:
        return loads_checkpoint(fh.read())


def save_whitener(path, whitener, extra=None):
    save_checkpoint(path, whitener=whitener, extra=extra)


def load_whitener(path):
    ckpt = load_checkpoint(path)
    if ckpt.whitener is None:
        raise CheckpointError(f"{path} holds no whitener")
    return ckpt.whitener
