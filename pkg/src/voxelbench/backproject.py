"""Voxel back projection: the scalar reference loop and lane-generic kernels.

The reference follows the classic three-part loop body (geometry, four
bounds-checked detector loads, bilinear combine with inverse-square weight)
one voxel at a time in single precision.  The kernels process each voxel line
``lanes`` voxels at a time and differ only in how the four detector samples are
fetched, so with exact division they agree with the reference bit for bit.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from . import _core
from .geometry import ProjectionMatrix, ReconParams

__all__ = [
    "Volume",
    "ProjectionImage",
    "ClipMask",
    "Strategy",
    "Reciprocal",
    "KernelConfig",
    "DEFAULT_PAD",
    "backproject_reference",
    "backproject_kernel",
    "compute_clip_mask",
    "full_mask",
    "pad_image",
    "unpad_image",
    "fast_reciprocal",
]

DEFAULT_PAD = 2
LANE_WIDTHS = (1, 4, 8, 16)


class Volume:
    """Cubic float32 voxel grid, indexed ``data[z, y, x]``."""

    def __init__(self, data):
        data = np.asarray(data)
        if data.ndim != 3 or len(set(data.shape)) != 1:
            raise ValueError(f"volume must be L x L x L, got shape {data.shape}")
        if data.dtype != np.float32 or not data.flags.c_contiguous:
            data = np.ascontiguousarray(data, dtype=np.float32)
        self.data = data

    @classmethod
    def zeros(cls, L: int) -> "Volume":
        return cls(np.zeros((L, L, L), dtype=np.float32))

    @property
    def L(self) -> int:
        return self.data.shape[0]

    def copy(self) -> "Volume":
        return Volume(self.data.copy())

    def __repr__(self):
        return f"Volume(L={self.L})"


class ProjectionImage:
    """Detector image, optionally surrounded by a zero apron of ``pad`` pixels.

    ``data`` has shape ``(height + 2*pad, width + 2*pad)``; detector pixel
    ``(u, v)`` lives at ``data[v + pad, u + pad]``.
    """

    def __init__(self, data, pad: int = 0):
        data = np.asarray(data)
        if data.ndim != 2:
            raise ValueError(f"projection image must be 2-D, got shape {data.shape}")
        if data.dtype != np.float32 or not data.flags.c_contiguous:
            data = np.ascontiguousarray(data, dtype=np.float32)
        if pad < 0:
            raise ValueError("pad must be non-negative")
        if data.shape[0] - 2 * pad < 2 or data.shape[1] - 2 * pad < 2:
            raise ValueError("detector interior must be at least 2x2")
        self.data = data
        self.pad = pad

    @property
    def width(self) -> int:
        return self.data.shape[1] - 2 * self.pad

    @property
    def height(self) -> int:
        return self.data.shape[0] - 2 * self.pad

    @property
    def stride(self) -> int:
        return self.data.shape[1]

    @property
    def interior(self) -> np.ndarray:
        p = self.pad
        return self.data[p:p + self.height, p:p + self.width]

    def __repr__(self):
        return f"ProjectionImage({self.width}x{self.height}, pad={self.pad})"


@dataclass
class ClipMask:
    """Per-line ``[start, stop)`` x ranges, arrays of shape (L, L) indexed [z, y]."""

    start: np.ndarray
    stop: np.ndarray

    @property
    def L(self) -> int:
        return self.start.shape[0]

    def voxel_count(self) -> int:
        return int((self.stop - self.start).sum())

    def contains(self) -> np.ndarray:
        """Boolean (L, L, L) membership volume."""
        x = np.arange(self.L)
        return (x >= self.start[..., None]) & (x < self.stop[..., None])


class Strategy(enum.Enum):
    CONDITIONAL = "conditional"
    PADDED_GATHER = "padded-gather"
    PADDED_PAIRWISE = "padded-pairwise"

    @property
    def code(self) -> int:
        return {"conditional": _core.CONDITIONAL, "padded-gather": _core.PADDED_GATHER,
                "padded-pairwise": _core.PADDED_PAIRWISE}[self.value]

    @property
    def padded(self) -> bool:
        return self is not Strategy.CONDITIONAL


class Reciprocal(enum.Enum):
    EXACT = "exact"
    FAST = "fast"
    FAST_REFINED = "fast-refined"

    @property
    def code(self) -> int:
        return {"exact": _core.EXACT, "fast": _core.FAST, "fast-refined": _core.FAST_REFINED}[self.value]


@dataclass(frozen=True)
class KernelConfig:
    lanes: int = 8
    strategy: Strategy = Strategy.PADDED_GATHER
    reciprocal: Reciprocal = Reciprocal.EXACT
    use_clip_mask: bool = True

    def __post_init__(self):
        if self.lanes not in LANE_WIDTHS:
            raise ValueError(f"lanes must be one of {LANE_WIDTHS}, got {self.lanes}")
        object.__setattr__(self, "strategy", Strategy(self.strategy))
        object.__setattr__(self, "reciprocal", Reciprocal(self.reciprocal))

    def __str__(self):
        return (f"lanes={self.lanes} strategy={self.strategy.value} "
                f"recip={self.reciprocal.value} clip={'on' if self.use_clip_mask else 'off'}")

    @classmethod
    def parse(cls, text: str) -> "KernelConfig":
        """Parse ``"lanes=8 strategy=padded-gather recip=fast-refined clip=on"``.

        Missing keys keep their defaults.
        """
        kwargs = {}
        for token in text.replace(",", " ").split():
            key, sep, value = token.partition("=")
            if not sep:
                raise ValueError(f"malformed kernel token {token!r}")
            if key == "lanes":
                kwargs["lanes"] = int(value)
            elif key == "strategy":
                kwargs["strategy"] = Strategy(value)
            elif key in ("recip", "reciprocal"):
                kwargs["reciprocal"] = Reciprocal(value)
            elif key == "clip":
                if value not in ("on", "off"):
                    raise ValueError(f"clip must be on or off, got {value!r}")
                kwargs["use_clip_mask"] = value == "on"
            else:
                raise ValueError(f"unknown kernel key {key!r}")
        return cls(**kwargs)


def _check_dims(vol: Volume, img: ProjectionImage, p: ReconParams):
    if vol.L != p.L:
        raise ValueError(f"volume edge {vol.L} does not match L={p.L}")
    if (img.width, img.height) != (p.width, p.height):
        raise ValueError(f"image is {img.width}x{img.height}, expected {p.width}x{p.height}")


def backproject_reference(vol: Volume, img: ProjectionImage, A: ProjectionMatrix,
                          p: ReconParams, z_range=None) -> Volume:
    """Add one projection into ``vol`` in place with the scalar reference loop."""
    _check_dims(vol, img, p)
    if img.pad != 0:
        raise ValueError("the reference loop expects an unpadded image")
    z0, z1 = z_range if z_range is not None else (0, p.L)
    _core.reference_planes(vol.data.reshape(-1), img.data.reshape(-1), A.a,
                           np.float32(p.O), np.float32(p.MM), p.L, p.width, p.height, z0, z1)
    return vol


def compute_clip_mask(A: ProjectionMatrix, p: ReconParams,
                      reciprocal: Reciprocal = Reciprocal.EXACT) -> ClipMask:
    """Tight per-line voxel ranges outside of which the update is exactly zero.

    The mask depends on the reciprocal mode because the approximate
    reciprocal moves detector coordinates slightly.
    """
    start = np.zeros((p.L, p.L), dtype=np.int64)
    stop = np.zeros((p.L, p.L), dtype=np.int64)
    _core.clip_mask(A.a, np.float32(p.O), np.float32(p.MM), p.L, p.width, p.height,
                    Reciprocal(reciprocal).code, start, stop)
    return ClipMask(start, stop)


def full_mask(L: int) -> ClipMask:
    return ClipMask(np.zeros((L, L), dtype=np.int64), np.full((L, L), L, dtype=np.int64))


def pad_image(img: ProjectionImage, pad: int = DEFAULT_PAD) -> ProjectionImage:
    if img.pad != 0:
        raise ValueError("image is already padded")
    if pad < 1:
        raise ValueError("pad must be >= 1")
    return ProjectionImage(np.pad(img.data, pad, mode="constant", constant_values=0), pad=pad)


def unpad_image(img: ProjectionImage) -> ProjectionImage:
    return ProjectionImage(img.interior.copy(), pad=0)


def backproject_kernel(vol: Volume, img: ProjectionImage, A: ProjectionMatrix, p: ReconParams,
                       cfg: KernelConfig, mask: ClipMask | None = None, z_range=None) -> Volume:
    """Add one projection into ``vol`` in place using the configured kernel.

    ``img`` must be unpadded for the conditional strategy and padded by at
    least ``DEFAULT_PAD`` pixels for the padded ones.  ``mask`` is required
    exactly when ``cfg.use_clip_mask`` is set.
    """
    _check_dims(vol, img, p)
    if cfg.strategy.padded and img.pad < DEFAULT_PAD:
        raise ValueError(f"{cfg.strategy.value} needs an image padded by >= {DEFAULT_PAD} pixels")
    if not cfg.strategy.padded and img.pad != 0:
        raise ValueError("the conditional strategy expects an unpadded image")
    if cfg.use_clip_mask != (mask is not None):
        raise ValueError("a clip mask must be given iff use_clip_mask is set")
    if mask is None:
        mask = full_mask(p.L)
    elif mask.L != p.L:
        raise ValueError(f"clip mask is for L={mask.L}, volume has L={p.L}")
    z0, z1 = z_range if z_range is not None else (0, p.L)
    _core.kernel_planes(vol.data.reshape(-1), img.data.reshape(-1), img.stride, img.pad, A.a,
                        np.float32(p.O), np.float32(p.MM), p.L, p.width, p.height,
                        z0, z1, mask.start, mask.stop, cfg.lanes, cfg.strategy.code,
                        cfg.reciprocal.code)
    return vol


def fast_reciprocal(x, refined: bool = False):
    """Approximate float32 reciprocal with 11 explicit mantissa bits.

    With ``refined`` one Newton-Raphson step ``r * (2 - x * r)`` is applied.
    Accepts a scalar or an array; returns float32.
    """
    arr = np.asarray(x, dtype=np.float32)
    out = _core.fast_recip_array(arr.reshape(-1), bool(refined)).reshape(arr.shape)
    return out[()] if out.ndim == 0 else out
