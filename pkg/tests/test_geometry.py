import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from voxelbench.backproject import ProjectionImage, Volume, backproject_reference
from voxelbench.geometry import (
    ProjectionMatrix,
    ReconParams,
    ScanGeometry,
    circular_view,
    forward_splat,
    make_centered_params,
    make_circular_trajectory,
    project_voxel,
)

from .conftest import random_view
from .oracles import ray_trace_pixel


@pytest.mark.parametrize("L, MM, w, h, expected", [
    (1, 1.0, 16, 16, 0.0),
    (512, 0.5, 1248, 960, -127.75),
    (3, 2.0, 8, 8, -2.0),
])
def test_centered_params(L, MM, w, h, expected):
    assert make_centered_params(L, MM, w, h).O == expected


@pytest.mark.parametrize("args", [(0, 1.0, 8, 8), (4, 0.0, 8, 8), (4, -1.0, 8, 8), (4, 1.0, 0, 8)])
def test_centered_params_rejects_bad_input(args):
    with pytest.raises(ValueError):
        make_centered_params(*args)


def test_recon_params_validation():
    with pytest.raises(ValueError):
        ReconParams(L=4, MM=1.0, O=math.nan, width=8, height=8)


def test_projection_matrix_validation():
    with pytest.raises(ValueError):
        ProjectionMatrix(np.zeros(11))
    with pytest.raises(ValueError):
        ProjectionMatrix(np.full(12, np.inf))
    with pytest.raises(ValueError):
        ProjectionMatrix.from_matrix(np.array([[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 0]]))


def test_matrix_layout_round_trip():
    m = np.arange(12, dtype=float).reshape(3, 4) + 1
    A = ProjectionMatrix.from_matrix(m)
    # first output row multiplies (x, y, z, 1) through entries 0, 3, 6, 9
    assert list(A.a[[0, 3, 6, 9]]) == [1, 2, 3, 4]
    assert np.array_equal(A.as_matrix(), m)
    assert not A.a.flags.writeable


def small_scan():
    geom = ScanGeometry(num_projections=8, source_detector_distance=1000.0,
                        source_iso_distance=400.0, detector_pixel_pitch=0.5)
    return geom, make_centered_params(32, 1.0, 120, 100)


def _dehom(A, point):
    u, v, w = A.as_matrix() @ np.append(point, 1.0)
    return u / w, v / w, w


def test_trajectory_origin_hits_detector_centre():
    geom, p = small_scan()
    mats = make_circular_trajectory(geom, p)
    assert len(mats) == geom.num_projections
    for A in mats:
        ix, iy, w = _dehom(A, [0.0, 0.0, 0.0])
        assert abs(ix - (p.width - 1) / 2) < 1e-4
        assert abs(iy - (p.height - 1) / 2) < 1e-4
        assert w == pytest.approx(1.0, abs=1e-6)


def test_opposed_views_mirror_in_plane_points():
    geom, p = small_scan()
    c = (p.width - 1) / 2
    for d in (-7.5, 3.0, 12.25):
        ix0, _, _ = _dehom(circular_view(geom, p, 0.0), [d, 0.0, 0.0])
        ix1, _, _ = _dehom(circular_view(geom, p, math.pi), [d, 0.0, 0.0])
        assert ix0 - c == pytest.approx(-(ix1 - c), abs=1e-4)
        assert ix0 != pytest.approx(c)


def test_axial_offset_scales_with_magnification():
    geom, p = small_scan()
    z0 = 5.0
    _, iy, _ = _dehom(circular_view(geom, p, 0.3), [0.0, 0.0, z0])
    expected = z0 * geom.magnification / geom.detector_pixel_pitch
    assert iy - (p.height - 1) / 2 == pytest.approx(expected, abs=1e-6)


def test_matrices_agree_with_ray_trace():
    geom, p = small_scan()
    rng = np.random.default_rng(7)
    for _ in range(5):
        point = rng.uniform(-15, 15, size=3)
        angle = rng.uniform(0, 2 * math.pi)
        ix, iy, _ = _dehom(circular_view(geom, p, angle), point)
        rx, ry = ray_trace_pixel(point, angle, geom.source_iso_distance,
                                 geom.source_detector_distance, geom.detector_pixel_pitch,
                                 p.width, p.height)
        # the stored matrix is float32, so allow single-precision rounding
        assert ix == pytest.approx(rx, abs=2e-3)
        assert iy == pytest.approx(ry, abs=2e-3)


def test_project_voxel_identity_like():
    A = ProjectionMatrix.from_matrix([[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1]])
    p = ReconParams(L=20, MM=0.2, O=0.0, width=16, height=16)
    c = project_voxel(A, p, 17, 10, 3)
    assert c.w == 1.0
    assert c.ix == pytest.approx(3.4, abs=1e-6)
    assert c.iy == pytest.approx(2.0, abs=1e-6)
    assert (c.iix, c.iiy) == (3, 2)
    assert c.scalex == pytest.approx(0.4, abs=1e-6)
    assert not c.behind_source


def test_project_voxel_matches_brute_force_multiply(rng):
    for _ in range(20):
        A, p = random_view(rng, 16, 40, 30)
        x, y, z = (int(i) for i in rng.integers(0, p.L, size=3))
        c = project_voxel(A, p, x, y, z)
        f = np.float32
        wx, wy, wz = (f(p.O) + f(i) * f(p.MM) for i in (x, y, z))
        a = A.a
        u = wx * a[0] + wy * a[3] + wz * a[6] + a[9]
        v = wx * a[1] + wy * a[4] + wz * a[7] + a[10]
        w = wx * a[2] + wy * a[5] + wz * a[8] + a[11]
        assert np.float32(c.w) == w
        assert np.float32(c.ix) == u / w
        assert np.float32(c.iy) == v / w


def test_project_voxel_out_of_range():
    A, p = random_view(np.random.default_rng(0), 8, 16, 16)
    with pytest.raises(IndexError):
        project_voxel(A, p, 8, 0, 0)
    with pytest.raises(IndexError):
        project_voxel(A, p, 0, -1, 0)


def test_project_voxel_behind_source_sentinel():
    A = ProjectionMatrix.from_matrix([[1, 0, 0, 0], [0, 1, 0, 0], [1, 0, 0, 0]])
    p = make_centered_params(3, 1.0, 8, 8)  # voxel 1 sits at wx == 0, so w == 0
    c = project_voxel(A, p, 1, 0, 0)
    assert c.behind_source
    assert not project_voxel(A, p, 2, 0, 0).behind_source


def test_scale_by_two_preserves_detector_coordinates(rng):
    for _ in range(10):
        A, p = random_view(rng, 16, 40, 30)
        B = A.scaled(2.0)
        for x, y, z in rng.integers(0, p.L, size=(10, 3)):
            c, d = project_voxel(A, p, x, y, z), project_voxel(B, p, x, y, z)
            assert (c.ix, c.iy, c.iix, c.iiy, c.scalex, c.scaley) == (d.ix, d.iy, d.iix, d.iiy, d.scalex, d.scaley)
            assert d.w == 2 * c.w


@settings(max_examples=200, deadline=None)
@given(lam=st.floats(min_value=0.05, max_value=20.0), seed=st.integers(0, 2**32 - 1))
def test_scale_invariance_general_lambda(lam, seed):
    # for non power-of-two factors the scaled entries round differently; bound the drift by
    # the usual forward error of a short dot product divided by |w|
    rng = np.random.default_rng(seed)
    A, p = random_view(rng, 8, 40, 30)
    B = A.scaled(lam)
    x, y, z = (int(i) for i in rng.integers(0, p.L, size=3))
    c, d = project_voxel(A, p, x, y, z), project_voxel(B, p, x, y, z)
    xh = np.array([p.O + i * p.MM for i in (x, y, z)] + [1.0])
    m = np.abs(A.as_matrix()) @ np.abs(xh)  # sum of |terms| for u, v, w
    eps = 8 * np.finfo(np.float32).eps
    assert abs(d.ix - c.ix) <= eps * (m[0] + abs(c.ix) * m[2]) / abs(c.w)
    assert abs(d.iy - c.iy) <= eps * (m[1] + abs(c.iy) * m[2]) / abs(c.w)
    assert abs(d.w - lam * c.w) <= eps * lam * m[2]


@settings(max_examples=300, deadline=None)
@given(t=st.floats(min_value=-2.0, max_value=2.0, exclude_max=True, allow_subnormal=False))
def test_truncation_toward_zero(t):
    # identity-like matrix with O = t puts voxel 0 exactly at ix = float32(t)
    t32 = float(np.float32(t))
    A = ProjectionMatrix.from_matrix([[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1]])
    p = ReconParams(L=1, MM=1.0, O=t32, width=8, height=8)
    c = project_voxel(A, p, 0, 0, 0)
    assert c.ix == t32
    assert c.iix == math.trunc(t32)
    assert c.scalex == pytest.approx(t32 - math.trunc(t32))
    if t32 < 0 and t32 != math.trunc(t32):
        assert c.iix != math.floor(t32)


def test_truncation_dense_grid():
    A = ProjectionMatrix.from_matrix([[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1]])
    for t in np.linspace(-2.0, 2.0, 801, endpoint=False, dtype=np.float32):
        c = project_voxel(A, ReconParams(1, 1.0, float(t), 8, 8), 0, 0, 0)
        assert c.iix == int(t)
        if t >= 0:
            assert 0.0 <= c.scalex < 1.0


def test_forward_splat_zero_phantom():
    A, p = random_view(np.random.default_rng(1), 8, 16, 16)
    out = forward_splat(Volume.zeros(8), A, p)
    assert not out.data.any()


def test_forward_splat_single_voxel_on_integer_pixel():
    # iso-centre voxel of an odd-sized centred volume sits on the detector centre pixel, w == 1
    geom = ScanGeometry(num_projections=1, source_detector_distance=1000.0,
                        source_iso_distance=500.0, detector_pixel_pitch=1.0)
    p = make_centered_params(5, 1.0, 17, 13)
    A = circular_view(geom, p, 0.0)
    phantom = np.zeros((5, 5, 5), dtype=np.float32)
    phantom[2, 2, 2] = 1.0
    out = forward_splat(phantom, A, p).data
    assert out[6, 8] == 1.0
    assert np.count_nonzero(out) == 1


def test_forward_splat_shape_mismatch():
    A, p = random_view(np.random.default_rng(1), 8, 16, 16)
    with pytest.raises(ValueError):
        forward_splat(np.zeros((4, 4, 4)), A, p)


def test_forward_splat_is_adjoint_of_reference(rng):
    for _ in range(5):
        A, p = random_view(rng, 8, 16, 16)
        x = rng.random((8, 8, 8), dtype=np.float32)
        y = rng.random((16, 16), dtype=np.float32)
        lhs = np.dot(forward_splat(x, A, p).data.astype(np.float64).ravel(), y.astype(np.float64).ravel())
        by = backproject_reference(Volume.zeros(8), ProjectionImage(y), A, p).data
        rhs = np.dot(x.astype(np.float64).ravel(), by.astype(np.float64).ravel())
        assert lhs == pytest.approx(rhs, rel=1e-5)
