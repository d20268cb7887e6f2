"""Scan geometry, projection matrices and the voxel -> detector mapping.

Projection matrices are stored as 12 floats in "column-by-use" order: entries
0..2 multiply the world x coordinate and produce (u, v, w), entries 3..5 the
world y coordinate, 6..8 world z, and 9..11 are the homogeneous column.  This
is the layout the back projection loops index directly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _core

__all__ = [
    "ReconParams",
    "ProjectionMatrix",
    "ScanGeometry",
    "DetectorCoord",
    "make_centered_params",
    "make_circular_trajectory",
    "project_voxel",
    "forward_splat",
]

W_EPSILON = float(_core.W_EPSILON)


@dataclass(frozen=True)
class ReconParams:
    """Volume sampling and detector size.

    ``O`` is the world coordinate (mm) of voxel index 0 along every axis and
    ``MM`` the voxel spacing, so voxel ``i`` sits at ``O + i * MM``.
    """

    L: int
    MM: float
    O: float
    width: int
    height: int

    def __post_init__(self):
        if self.L < 1:
            raise ValueError(f"L must be >= 1, got {self.L}")
        if not self.MM > 0:
            raise ValueError(f"MM must be positive, got {self.MM}")
        if self.width < 2 or self.height < 2:
            raise ValueError(f"detector must be at least 2x2, got {self.width}x{self.height}")
        if not math.isfinite(self.O):
            raise ValueError("O must be finite")


def make_centered_params(L: int, MM: float, width: int, height: int) -> ReconParams:
    """Parameters for a volume centred on the world origin."""
    if L < 1 or width < 1 or height < 1:
        raise ValueError("dimensions must be positive")
    if not MM > 0:
        raise ValueError(f"MM must be positive, got {MM}")
    return ReconParams(L=L, MM=MM, O=-MM * (L - 1) / 2.0, width=width, height=height)


@dataclass(frozen=True, eq=False)
class ProjectionMatrix:
    a: np.ndarray = field(repr=False)

    def __post_init__(self):
        a = np.ascontiguousarray(self.a, dtype=np.float32).reshape(-1)
        if a.shape != (12,):
            raise ValueError(f"projection matrix needs 12 entries, got {a.size}")
        if not np.all(np.isfinite(a)):
            raise ValueError("projection matrix entries must be finite")
        if not np.any(a[2::3]):
            raise ValueError("third row is identically zero; w is undefined")
        a.setflags(write=False)
        object.__setattr__(self, "a", a)

    @classmethod
    def from_matrix(cls, m) -> "ProjectionMatrix":
        """Build from an ordinary 3x4 matrix acting on (x, y, z, 1)."""
        m = np.asarray(m, dtype=np.float64)
        if m.shape != (3, 4):
            raise ValueError(f"expected a 3x4 matrix, got shape {m.shape}")
        return cls(m.ravel(order="F"))

    def as_matrix(self) -> np.ndarray:
        return self.a.astype(np.float64).reshape(4, 3).T.copy()

    def scaled(self, lam: float) -> "ProjectionMatrix":
        return ProjectionMatrix(self.a * np.float32(lam))

    def __eq__(self, other):
        return isinstance(other, ProjectionMatrix) and np.array_equal(self.a, other.a)

    __hash__ = None


@dataclass(frozen=True)
class ScanGeometry:
    """Circular cone-beam scan.  Distances in mm, pitch in mm/pixel."""

    num_projections: int = 496
    source_detector_distance: float = 1200.0
    source_iso_distance: float = 750.0
    detector_pixel_pitch: float = 0.32
    angular_range: float = 2.0 * math.pi

    def __post_init__(self):
        if self.num_projections < 1:
            raise ValueError("num_projections must be >= 1")
        if not self.source_detector_distance > self.source_iso_distance > 0:
            raise ValueError("need source_detector_distance > source_iso_distance > 0")
        if not self.detector_pixel_pitch > 0:
            raise ValueError("detector_pixel_pitch must be positive")

    @property
    def magnification(self) -> float:
        return self.source_detector_distance / self.source_iso_distance

    def angles(self) -> np.ndarray:
        return np.arange(self.num_projections) * (self.angular_range / self.num_projections)


@dataclass(frozen=True)
class DetectorCoord:
    ix: float
    iy: float
    w: float
    iix: int
    iiy: int
    scalex: float
    scaley: float

    @property
    def behind_source(self) -> bool:
        return math.isnan(self.ix)


BEHIND_SOURCE_INDEX = -(2**31)


def circular_view(geom: ScanGeometry, params: ReconParams, angle: float) -> ProjectionMatrix:
    """Pinhole matrix for one source angle.

    The source sits at radius ``source_iso_distance`` in the z = 0 plane and
    rotates about the z axis; detector columns run along the tangent of the
    orbit, rows along +z, and the principal point is the detector centre.  The
    matrix is normalised so that w == 1 at the iso-centre.
    """
    c, s = math.cos(angle), math.sin(angle)
    src = np.array([-geom.source_iso_distance * s, geom.source_iso_distance * c, 0.0])
    view = np.array([s, -c, 0.0])  # unit vector from source towards iso-centre
    e_u = np.array([c, s, 0.0])
    e_v = np.array([0.0, 0.0, 1.0])
    f = geom.source_detector_distance / geom.detector_pixel_pitch
    cu = (params.width - 1) / 2.0
    cv = (params.height - 1) / 2.0
    rows = np.stack([f * e_u + cu * view, f * e_v + cv * view, view])
    m = np.empty((3, 4))
    m[:, :3] = rows
    m[:, 3] = -rows @ src
    return ProjectionMatrix.from_matrix(m / geom.source_iso_distance)


def make_circular_trajectory(geom: ScanGeometry, params: ReconParams) -> list[ProjectionMatrix]:
    return [circular_view(geom, params, t) for t in geom.angles()]


def project_voxel(A: ProjectionMatrix, params: ReconParams, x: int, y: int, z: int) -> DetectorCoord:
    """Map one voxel to detector coordinates in single precision.

    Returns a ``behind_source`` coordinate (NaN position) when ``|w|`` is
    below ``W_EPSILON``.
    """
    if not all(0 <= i < params.L for i in (x, y, z)):
        raise IndexError(f"voxel ({x}, {y}, {z}) outside a volume of edge {params.L}")
    u, v, w = map(np.float32, _core.project(A.a, np.float32(params.O), np.float32(params.MM), x, y, z))
    if abs(w) < _core.W_EPSILON:
        return DetectorCoord(math.nan, math.nan, float(w), BEHIND_SOURCE_INDEX,
                             BEHIND_SOURCE_INDEX, 0.0, 0.0)
    ix = u / w
    iy = v / w
    # plain C cast semantics; values beyond int32 are clamped to the int32 range
    iix = int(np.trunc(np.clip(ix, -2.0**31, 2.0**31 - 1)))
    iiy = int(np.trunc(np.clip(iy, -2.0**31, 2.0**31 - 1)))
    return DetectorCoord(
        ix=float(ix), iy=float(iy), w=float(w), iix=iix, iiy=iiy,
        scalex=float(ix - np.float32(iix)), scaley=float(iy - np.float32(iiy)),
    )


def forward_splat(phantom, A: ProjectionMatrix, params: ReconParams):
    """Forward project a volume by bilinear splatting (adjoint of the back projector)."""
    from .backproject import ProjectionImage, Volume

    data = phantom.data if isinstance(phantom, Volume) else np.asarray(phantom, dtype=np.float32)
    if data.shape != (params.L,) * 3:
        raise ValueError(f"phantom shape {data.shape} does not match L={params.L}")
    out = np.zeros((params.height, params.width), dtype=np.float64)
    _core.splat(np.ascontiguousarray(data, dtype=np.float32).reshape(-1), out, A.a,
                np.float32(params.O), np.float32(params.MM), params.L, params.width, params.height)
    return ProjectionImage(out.astype(np.float32))
