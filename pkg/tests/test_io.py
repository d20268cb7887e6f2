import numpy as np
import pytest

from voxelbench.backproject import ProjectionImage, Volume, pad_image
from voxelbench.io import (
    FormatError,
    ProjectionSet,
    read_projection_set,
    read_volume,
    write_projection_set,
    write_volume,
)

from .conftest import random_image, random_view


def small_set(rng, n=3):
    mats, imgs = [], []
    for _ in range(n):
        A, p = random_view(rng, 8, 12, 10)
        mats.append(A)
        imgs.append(random_image(rng, 12, 10))
    return ProjectionSet(p, mats, imgs)


def test_projection_set_round_trip(tmp_path, rng):
    ps = small_set(rng)
    path = tmp_path / "s.vxb"
    write_projection_set(path, ps)
    back = read_projection_set(path)
    assert back.params.L == 8 and (back.params.width, back.params.height) == (12, 10)
    assert back.params.MM == np.float32(ps.params.MM) and back.params.O == np.float32(ps.params.O)
    assert all(a == b for a, b in zip(ps.matrices, back.matrices))
    assert all(np.array_equal(a.data, b.data) for a, b in zip(ps.images, back.images))
    again = tmp_path / "t.vxb"
    write_projection_set(again, back)
    assert path.read_bytes() == again.read_bytes()


def test_header_layout(tmp_path, rng):
    ps = small_set(rng, 2)
    path = tmp_path / "s.vxb"
    write_projection_set(path, ps)
    raw = path.read_bytes()
    assert raw[:4] == b"VXB1"
    assert np.frombuffer(raw[4:20], "<u4").tolist() == [2, 12, 10, 8]
    assert len(raw) == 28 + 2 * (12 + 12 * 10) * 4
    # first matrix entries follow the header directly
    assert np.array_equal(np.frombuffer(raw[28:76], "<f4"), ps.matrices[0].a)


def test_padded_images_are_written_unpadded(tmp_path, rng):
    ps = small_set(rng, 1)
    padded = ProjectionSet(ps.params, ps.matrices, [pad_image(ps.images[0])])
    path = tmp_path / "s.vxb"
    write_projection_set(path, padded)
    assert np.array_equal(read_projection_set(path).images[0].data, ps.images[0].data)


def test_corrupt_files(tmp_path, rng):
    path = tmp_path / "s.vxb"
    write_projection_set(path, small_set(rng))
    raw = path.read_bytes()
    (tmp_path / "trunc.vxb").write_bytes(raw[:-4])
    (tmp_path / "magic.vxb").write_bytes(b"XXXX" + raw[4:])
    (tmp_path / "tiny.vxb").write_bytes(raw[:10])
    for name in ("trunc.vxb", "magic.vxb", "tiny.vxb"):
        with pytest.raises(FormatError, match=name):
            read_projection_set(tmp_path / name)


def test_missing_file_reports_path(tmp_path):
    with pytest.raises(OSError, match="nope.vxb"):
        read_projection_set(tmp_path / "nope.vxb")
    with pytest.raises(OSError, match="nope.vxv"):
        read_volume(tmp_path / "nope.vxv")
    with pytest.raises(OSError, match="missing"):
        write_volume(tmp_path / "missing" / "v.vxv", Volume.zeros(2))


def test_volume_round_trip(tmp_path, rng):
    vol = Volume(rng.random((5, 5, 5), dtype=np.float32))
    path = tmp_path / "v.vxv"
    write_volume(path, vol)
    raw = path.read_bytes()
    assert raw[:4] == b"VXV1" and len(raw) == 8 + 4 * 125
    # z-major: the second stored voxel is x = 1
    assert np.frombuffer(raw[12:16], "<f4")[0] == vol.data[0, 0, 1]
    assert np.array_equal(read_volume(path).data, vol.data)
    path.write_bytes(raw[:-4])
    with pytest.raises(FormatError):
        read_volume(path)


def test_projection_set_needs_matching_lengths(rng):
    A, p = random_view(rng, 8, 12, 10)
    with pytest.raises(ValueError):
        ProjectionSet(p, [A, A], [ProjectionImage(np.zeros((10, 12)))])
