"""Binary projection-set (VXB1) and volume (VXV1) files, little-endian.

VXB1 header: magic u32, numProjections u32, width u32, height u32, L u32,
MM f32, O f32.  Each projection follows as 12 f32 matrix entries (column-by-use
order, see :mod:`voxelbench.geometry`) and width*height f32 intensities,
row-major.

VXV1: magic u32, L u32, then L**3 f32 voxels with x fastest and z slowest.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .backproject import ProjectionImage, Volume
from .geometry import ProjectionMatrix, ReconParams

PROJ_MAGIC = int.from_bytes(b"VXB1", "little")
VOL_MAGIC = int.from_bytes(b"VXV1", "little")

_PROJ_HEADER = np.dtype([("magic", "<u4"), ("n", "<u4"), ("width", "<u4"), ("height", "<u4"),
                         ("L", "<u4"), ("MM", "<f4"), ("O", "<f4")])
_VOL_HEADER = np.dtype([("magic", "<u4"), ("L", "<u4")])


class FormatError(ValueError):
    pass


@dataclass
class ProjectionSet:
    params: ReconParams
    matrices: list
    images: list

    def __post_init__(self):
        if len(self.matrices) != len(self.images):
            raise ValueError("need one image per projection matrix")

    def __len__(self):
        return len(self.matrices)


def _record_dtype(width, height):
    return np.dtype([("a", "<f4", (12,)), ("img", "<f4", (height, width))])


def write_projection_set(path, ps: ProjectionSet):
    p = ps.params
    header = np.array([(PROJ_MAGIC, len(ps), p.width, p.height, p.L, p.MM, p.O)], dtype=_PROJ_HEADER)
    records = np.empty(len(ps), dtype=_record_dtype(p.width, p.height))
    for i, (A, img) in enumerate(zip(ps.matrices, ps.images)):
        if img.pad:
            img = ProjectionImage(img.interior.copy())
        records[i]["a"] = A.a
        records[i]["img"] = img.data
    try:
        with open(path, "wb") as fh:
            fh.write(header.tobytes())
            fh.write(records.tobytes())
    except OSError as exc:
        raise OSError(f"cannot write projection set {os.fspath(path)!r}: {exc}") from exc


def read_projection_set(path) -> ProjectionSet:
    try:
        raw = open(path, "rb").read()
    except OSError as exc:
        raise OSError(f"cannot read projection set {os.fspath(path)!r}: {exc}") from exc
    if len(raw) < _PROJ_HEADER.itemsize:
        raise FormatError(f"{path}: truncated header")
    h = np.frombuffer(raw, dtype=_PROJ_HEADER, count=1)[0]
    if h["magic"] != PROJ_MAGIC:
        raise FormatError(f"{path}: bad magic {int(h['magic']):#x}")
    n, width, height = int(h["n"]), int(h["width"]), int(h["height"])
    rec = _record_dtype(width, height)
    if len(raw) != _PROJ_HEADER.itemsize + n * rec.itemsize:
        raise FormatError(f"{path}: size {len(raw)} does not match {n} projections of {width}x{height}")
    params = ReconParams(L=int(h["L"]), MM=float(h["MM"]), O=float(h["O"]), width=width, height=height)
    records = np.frombuffer(raw, dtype=rec, count=n, offset=_PROJ_HEADER.itemsize)
    matrices = [ProjectionMatrix(r["a"].copy()) for r in records]
    images = [ProjectionImage(r["img"].copy()) for r in records]
    return ProjectionSet(params, matrices, images)


def write_volume(path, vol: Volume):
    try:
        with open(path, "wb") as fh:
            fh.write(np.array([(VOL_MAGIC, vol.L)], dtype=_VOL_HEADER).tobytes())
            fh.write(vol.data.astype("<f4").tobytes())
    except OSError as exc:
        raise OSError(f"cannot write volume {os.fspath(path)!r}: {exc}") from exc


def read_volume(path) -> Volume:
    try:
        raw = open(path, "rb").read()
    except OSError as exc:
        raise OSError(f"cannot read volume {os.fspath(path)!r}: {exc}") from exc
    h = np.frombuffer(raw, dtype=_VOL_HEADER, count=1)[0]
    if h["magic"] != VOL_MAGIC:
        raise FormatError(f"{path}: bad magic {int(h['magic']):#x}")
    L = int(h["L"])
    if len(raw) != _VOL_HEADER.itemsize + 4 * L**3:
        raise FormatError(f"{path}: size does not match L={L}")
    data = np.frombuffer(raw, dtype="<f4", offset=_VOL_HEADER.itemsize).reshape(L, L, L)
    return Volume(data.astype(np.float32))
