import os
import subprocess
import sys

import numpy as np
import pytest

from dexscaffold import _pykernels as py
from dexscaffold import kernels
from dexscaffold.geometry import euler_to_matrix

try:
    from dexscaffold import _ckernels as cy
except ImportError:
    cy = None

needs_cython = pytest.mark.skipif(cy is None, reason="compiled kernels not built")

SHAPES = np.array([kernels.SPHERE, kernels.BOX, kernels.CYLINDER])
DIMS = np.array([[0.04, 0.0, 0.0], [0.2, 0.1, 0.05], [0.03, 0.0, 0.12]])


def random_scene(rng, B=3, P=5):
    pts = rng.uniform(-0.3, 0.3, (B, P, 3))
    pos = rng.uniform(-0.1, 0.1, (B, 3, 3))
    rot = np.stack([[euler_to_matrix(rng.uniform(-np.pi, np.pi, 3)) for _ in range(3)]
                    for _ in range(B)])
    return pts, pos, rot


def sdf_oracle(p, shape, d):
    """Scalar distance to a primitive centred at the origin, by cases."""
    if shape == kernels.SPHERE:
        return np.linalg.norm(p) - d[0]
    if shape == kernels.BOX:
        half = 0.5 * d
        inside = np.all(np.abs(p) <= half)
        if inside:
            return -np.min(half - np.abs(p))
        return np.linalg.norm(np.maximum(np.abs(p) - half, 0.0))
    r = np.hypot(p[0], p[1])
    h = 0.5 * d[2]
    if r <= d[0] and abs(p[2]) <= h:
        return -min(d[0] - r, h - abs(p[2]))
    return np.hypot(max(r - d[0], 0.0), max(abs(p[2]) - h, 0.0))


def test_signed_distance_matches_case_oracle(rng):
    pts, pos, rot = random_scene(rng, B=2, P=40)
    out = kernels.signed_distances(pts, pos, rot, SHAPES, DIMS)
    for b in range(2):
        for p in range(40):
            for o in range(3):
                local = rot[b, o].T @ (pts[b, p] - pos[b, o])
                assert abs(out[b, p, o] - sdf_oracle(local, SHAPES[o], DIMS[o])) < 1e-12


def test_unknown_shape_rejected():
    with pytest.raises(ValueError):
        kernels.signed_distances(np.zeros((1, 1, 3)), np.zeros((1, 1, 3)),
                                 np.eye(3)[None, None], np.array([7]), np.ones((1, 3)))


def test_zigzag_counts_excursions():
    n = 1
    trend, ext, hi = np.zeros(n, np.int8), np.zeros(n), np.zeros(n)
    swings = np.zeros(n, np.int32)
    for z in [0.0, 0.02, 0.06, 0.01, 0.03, 0.0, 0.07, 0.1, 0.04, 0.049]:
        kernels.zigzag_update(np.array([z]), trend, ext, hi, swings, 0.05)
    assert swings[0] == 2


def zigzag_run(mod, zs, threshold):
    B = zs.shape[1]
    trend, ext, hi = np.zeros(B, np.int8), zs[0].copy(), zs[0].copy()
    swings = np.zeros(B, np.int32)
    for z in zs[1:]:
        mod.zigzag_update(np.ascontiguousarray(z), trend, ext, hi, swings, threshold)
    return trend, ext, hi, swings


@needs_cython
def test_backends_agree(rng):
    pts, pos, rot = random_scene(rng)
    np.testing.assert_array_equal(py.signed_distances(pts, pos, rot, SHAPES, DIMS),
                                  cy.signed_distances(pts, pos, rot, SHAPES, DIMS))
    r, v = rng.normal(size=(30, 8)), rng.normal(size=(30, 8))
    d = (rng.random((30, 8)) < 0.1).astype(float)
    last = rng.normal(size=8)
    np.testing.assert_allclose(py.gae(r, v, d, last, 0.99, 0.95),
                               cy.gae(r, v, d, last, 0.99, 0.95), rtol=0, atol=1e-12)
    zs = np.cumsum(rng.normal(scale=0.03, size=(200, 16)), axis=0)
    for a, b in zip(zigzag_run(py, zs, 0.05), zigzag_run(cy, zs, 0.05)):
        np.testing.assert_array_equal(a, b)


def test_pure_python_switch():
    env = dict(os.environ, DEXSCAFFOLD_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "import dexscaffold.kernels as k; print(k.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
