"""Manifest + flat payload record files.

A record file pair ``<stem>.manifest`` / ``<stem>.bin`` stores an ordered list
of named float arrays. The manifest is text: a header line, then one line per
record ``<name><TAB><d0,d1,...>`` (empty dims for a scalar). The payload is
the concatenation of every record as little-endian float32 in manifest order.
Parameter checkpoints and activation/attention captures both use it.
"""
from __future__ import annotations

import os
from pathlib import Path

import numpy as np

from .errors import InvalidArgument
from .optim import ParameterStore

HEADER = "# lengthgen-records v1 float32-le"
_LE_F32 = np.dtype("<f4")


def write_records(stem, records) -> tuple[Path, Path]:
    stem = Path(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    manifest = stem.with_name(stem.name + ".manifest")
    payload = stem.with_name(stem.name + ".bin")
    lines = [HEADER]
    with open(payload, "wb") as fh:
        for name, arr in records:
            if "\t" in name or "\n" in name:
                raise InvalidArgument(f"record name {name!r} contains a tab or newline")
            arr = np.asarray(arr)
            lines.append(f"{name}\t{','.join(str(d) for d in arr.shape)}")
            fh.write(np.ascontiguousarray(arr, dtype=_LE_F32).tobytes())
    manifest.write_text("\n".join(lines) + "\n")
    return manifest, payload


def read_records(stem) -> list[tuple[str, np.ndarray]]:
    stem = Path(stem)
    manifest = stem.with_name(stem.name + ".manifest")
    payload = stem.with_name(stem.name + ".bin")
    lines = manifest.read_text().splitlines()
    if not lines or lines[0] != HEADER:
        raise InvalidArgument(f"{manifest}: missing record header")
    flat = np.fromfile(payload, dtype=_LE_F32)
    out = []
    offset = 0
    for line in lines[1:]:
        if not line:
            continue
        name, dims = line.split("\t")
        shape = tuple(int(d) for d in dims.split(",")) if dims else ()
        count = int(np.prod(shape)) if shape else 1
        if offset + count > flat.size:
            raise InvalidArgument(f"{payload}: payload shorter than manifest declares")
        out.append((name, flat[offset : offset + count].reshape(shape).astype(np.float32)))
        offset += count
    if offset != flat.size:
        raise InvalidArgument(f"{payload}: {flat.size - offset} trailing values not in manifest")
    return out


def save_params(params: ParameterStore, stem=None) -> tuple[Path, Path]:
    stem = stem if stem is not None else os.path.join(".", "params")
    return write_records(stem, [(k, v.data) for k, v in params.items()])


def load_params(stem) -> ParameterStore:
    return ParameterStore({name: arr for name, arr in read_records(stem)})
