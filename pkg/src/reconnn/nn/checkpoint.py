"""Versioned, byte-reproducible checkpoint container.

A checkpoint is a zip archive holding ``header.json`` (format tag,
layer specs, scalar optimizer state, seed, free-form metadata) and one
``.npy`` member per array. Member timestamps are pinned so identical
contents give identical bytes.
"""

from __future__ import annotations

import io
import json
import zipfile
from pathlib import Path

import numpy as np

from ..errors import ReconError

FORMAT = "reconnn-checkpoint"
VERSION = 1
_EPOCH = (1980, 1, 1, 0, 0, 0)


def _member(zf, name, data: bytes):
    info = zipfile.ZipInfo(name, date_time=_EPOCH)
    info.compress_type = zipfile.ZIP_DEFLATED
    info.external_attr = 0o644 << 16
    zf.writestr(info, data)


def save(path, header: dict, arrays: dict) -> Path:
    path = Path(path)
    head = {"format": FORMAT, "version": VERSION, **header,
            "arrays": sorted(arrays)}
    tmp = path.with_suffix(path.suffix + ".tmp")
    with zipfile.ZipFile(tmp, "w") as zf:
        _member(zf, "header.json", json.dumps(head, indent=1, sort_keys=True).encode())
        for name in sorted(arrays):
            buf = io.BytesIO()
            np.lib.format.write_array(buf, np.ascontiguousarray(arrays[name]), allow_pickle=False)
            _member(zf, f"arrays/{name}.npy", buf.getvalue())
    tmp.replace(path)
    return path


def load(path) -> tuple[dict, dict]:
    with zipfile.ZipFile(path) as zf:
        head = json.loads(zf.read("header.json"))
        if head.get("format") != FORMAT:
            raise ReconError(f"{path}: not a {FORMAT} file")
        if head.get("version") != VERSION:
            raise ReconError(f"{path}: unsupported checkpoint version {head.get('version')}")
        arrays = {}
        for name in head["arrays"]:
            with zf.open(f"arrays/{name}.npy") as fh:
                arrays[name] = np.lib.format.read_array(io.BytesIO(fh.read()), allow_pickle=False)
    return head, arrays


def model_entry(prefix: str, model) -> tuple[dict, dict]:
    """Header fragment and arrays for one Sequential-like model."""
    arrays = {f"{prefix}/param/{n}": a for n, a in model.named_parameters()}
    arrays.update({f"{prefix}/buffer/{n}": a for n, a in model.named_buffers()})
    return {"specs": model.specs(), "in_shape": list(model.in_shape)}, arrays


def restore_arrays(prefix: str, arrays: dict) -> tuple[dict, dict]:
    params = {k[len(prefix) + 7:]: v for k, v in arrays.items() if k.startswith(f"{prefix}/param/")}
    bufs = {k[len(prefix) + 8:]: v for k, v in arrays.items() if k.startswith(f"{prefix}/buffer/")}
    return params, bufs


def optimizer_entry(prefix: str, state) -> tuple[dict, dict]:
    return ({"type": type(state).__name__, **state.scalars()},
            {f"{prefix}/{k}": v for k, v in state.arrays().items()})
