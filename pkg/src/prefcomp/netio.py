"""Versioned binary checkpoints: JSON config header + flat parameter arrays."""

import json
import struct
from pathlib import Path

import numpy as np
import torch

_MAGIC = b"PCNET"
_VERSION = 1


def save_net(path, kind: str, config: dict, net: torch.nn.Module) -> None:
    state = net.state_dict()
    entries = []
    blobs = []
    for key in sorted(state.keys()):
        arr = state[key].detach().cpu().numpy()
        entries.append({"key": key, "shape": list(arr.shape), "dtype": str(arr.dtype)})
        blobs.append(np.ascontiguousarray(arr).tobytes())
    header = json.dumps({"kind": kind, "config": config, "tensors": entries}).encode()
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<II", _VERSION, len(header)))
        fh.write(header)
        for blob in blobs:
            fh.write(blob)


def load_net(path, expected_kind: str | None = None):
    """Return (config dict, state_dict of torch tensors)."""
    raw = Path(path).read_bytes()
    if raw[:5] != _MAGIC:
        raise ValueError(f"{path} is not a network checkpoint")
    version, header_len = struct.unpack("<II", raw[5:13])
    if version != _VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    header = json.loads(raw[13 : 13 + header_len].decode())
    if expected_kind is not None and header["kind"] != expected_kind:
        raise ValueError(f"expected {expected_kind} checkpoint, found {header['kind']}")
    offset = 13 + header_len
    state = {}
    for entry in header["tensors"]:
        dtype = np.dtype(entry["dtype"])
        count = int(np.prod(entry["shape"])) if entry["shape"] else 1
        nbytes = count * dtype.itemsize
        arr = np.frombuffer(raw[offset : offset + nbytes], dtype=dtype).reshape(
            entry["shape"]
        )
        state[entry["key"]] = torch.from_numpy(arr.copy())
        offset += nbytes
    return header["config"], state
