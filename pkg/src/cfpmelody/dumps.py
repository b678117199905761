"""Binary dumps for matrices (CFP layers, salience maps) and patch sets.

Both formats are an 8-byte magic, a little-endian ``uint32`` header length,
a UTF-8 JSON header, then raw little-endian arrays. See ``docs/formats.md``.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from cfpmelody.cfp import TimeFreqRep
from cfpmelody.errors import DumpFormatError
from cfpmelody.patches import PATCH_SIZE, PatchSet

MATRIX_MAGIC = b"CFPMAT\x00\x01"
PATCH_MAGIC = b"CFPPAT\x00\x01"


def _write(path, magic: bytes, header: dict, *arrays: np.ndarray) -> None:
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(magic)
        fh.write(struct.pack("<I", len(head)))
        fh.write(head)
        for arr in arrays:
            fh.write(np.ascontiguousarray(arr).tobytes())


def _read(path, magic: bytes):
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise DumpFormatError(f"cannot read {path}: {exc.strerror or exc}") from exc
    if data[:8] != magic:
        raise DumpFormatError(f"{path}: bad magic")
    if len(data) < 12:
        raise DumpFormatError(f"{path}: truncated header")
    (hlen,) = struct.unpack("<I", data[8:12])
    try:
        header = json.loads(data[12:12 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DumpFormatError(f"{path}: corrupt header") from exc
    return header, memoryview(data)[12 + hlen:]


def _take(body, offset: int, dtype: str, count: int, path):
    size = np.dtype(dtype).itemsize * count
    if offset + size > len(body):
        raise DumpFormatError(f"{path}: truncated payload")
    return np.frombuffer(body[offset:offset + size], dtype=dtype).copy(), offset + size


def write_matrix(rep: TimeFreqRep, path) -> None:
    header = {
        "format": "cfp-matrix",
        "version": 1,
        "name": rep.name,
        "axis_kind": rep.axis_kind,
        "n_bins": rep.n_bins,
        "n_frames": rep.n_frames,
        "hop_seconds": rep.hop_seconds,
        "frame_offset": rep.frame_offset,
        "dtype": "<f8",
        "layout": "bins-major",
    }
    _write(path, MATRIX_MAGIC, header,
           np.asarray(rep.axis_values, dtype="<f8"), np.asarray(rep.values, dtype="<f8"))


def read_matrix(path) -> TimeFreqRep:
    header, body = _read(path, MATRIX_MAGIC)
    nb, nf = header["n_bins"], header["n_frames"]
    axis, off = _take(body, 0, "<f8", nb, path)
    values, off = _take(body, off, "<f8", nb * nf, path)
    if off != len(body):
        raise DumpFormatError(f"{path}: trailing bytes")
    return TimeFreqRep(values.reshape(nb, nf), header["axis_kind"], axis,
                       header["hop_seconds"], header.get("frame_offset", 0.0), header.get("name", ""))


def write_patches(patches: PatchSet, path) -> None:
    labelled = patches.labels is not None
    header = {"format": "cfp-patches", "version": 1, "count": len(patches),
              "size": PATCH_SIZE, "labelled": labelled}
    arrays = [np.asarray(patches.bins, "<i4"), np.asarray(patches.frames, "<i4")]
    if labelled:
        arrays.append(np.asarray(patches.labels, "u1"))
    arrays.append(np.asarray(patches.values, "<f8"))
    _write(path, PATCH_MAGIC, header, *arrays)


def read_patches(path) -> PatchSet:
    header, body = _read(path, PATCH_MAGIC)
    n, size = header["count"], header["size"]
    if size != PATCH_SIZE:
        raise DumpFormatError(f"{path}: patch size {size}, expected {PATCH_SIZE}")
    bins, off = _take(body, 0, "<i4", n, path)
    frames, off = _take(body, off, "<i4", n, path)
    labels = None
    if header.get("labelled", True):
        labels, off = _take(body, off, "u1", n, path)
        labels = labels.astype(np.int64)
    values, off = _take(body, off, "<f8", n * size * size, path)
    if off != len(body):
        raise DumpFormatError(f"{path}: trailing bytes")
    return PatchSet(values.reshape(n, size, size), bins.astype(int), frames.astype(int), labels)
