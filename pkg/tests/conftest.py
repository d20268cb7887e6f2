import math

import numpy as np
import pytest

from voxelbench.backproject import ProjectionImage
from voxelbench.geometry import ProjectionMatrix, ScanGeometry, circular_view, make_centered_params


def random_view(rng, L, width, height):
    """Perturbed pinhole view that usually covers part of the detector."""
    p = make_centered_params(L, float(rng.uniform(0.5, 2.0)) * 16 / L, width, height)
    geom = ScanGeometry(num_projections=1, source_detector_distance=float(rng.uniform(600, 1200)),
                        source_iso_distance=float(rng.uniform(250, 500)),
                        detector_pixel_pitch=float(rng.uniform(0.3, 1.2)))
    A = circular_view(geom, p, float(rng.uniform(0, 2 * math.pi)))
    m = A.as_matrix()
    m += rng.normal(scale=0.02, size=(3, 4)) * np.abs(m).max()
    m[:, 3] += rng.normal(scale=width / 4, size=3) * np.array([1.0, 1.0, 0.0])
    return ProjectionMatrix.from_matrix(m), p


def random_matrix(rng, L, width, height):
    """Unstructured matrix; w may change sign inside the volume."""
    p = make_centered_params(L, 1.0, width, height)
    m = rng.normal(size=(3, 4))
    m[:2] *= width / 2
    m[:2, 3] += width / 2
    return ProjectionMatrix.from_matrix(m), p


def random_image(rng, width, height):
    return ProjectionImage(rng.random((height, width), dtype=np.float32))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
