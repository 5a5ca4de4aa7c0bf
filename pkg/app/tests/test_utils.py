import math
import os
import sys

import numpy as np
import pytest
from scipy.spatial.transform import Rotation

sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))
from app.utils import (
    canonical_quat,
    content_streams,
    halton_samples,
    logcosh,
    matrix_to_quat,
    nearest_rank_percentile,
    quat_multiply,
    quat_to_matrix,
)


class TestLogcosh:
    def test_matches_direct_formula(self):
        x = np.linspace(-5.0, 5.0, 21)
        assert np.allclose(logcosh(x), np.log(np.cosh(x)), atol=1e-12)

    def test_large_arguments_do_not_overflow(self):
        assert logcosh(np.array([1000.0]))[0] == pytest.approx(1000.0 - math.log(2.0))


class TestQuaternions:
    def test_round_trip_through_matrix(self):
        rotations = Rotation.random(50, random_state=3)
        xyzw = rotations.as_quat()
        wxyz = canonical_quat(np.concatenate([xyzw[:, 3:], xyzw[:, :3]], axis=1))
        assert np.allclose(quat_to_matrix(wxyz), rotations.as_matrix(), atol=1e-12)
        assert np.allclose(matrix_to_quat(rotations.as_matrix()), wxyz, atol=1e-12)

    def test_half_turn(self):
        rotation = np.diag([1.0, -1.0, -1.0])
        assert np.allclose(matrix_to_quat(rotation), [0.0, 1.0, 0.0, 0.0])

    def test_multiply_composes(self):
        a = np.array([math.cos(0.2), 0.0, 0.0, math.sin(0.2)])
        b = np.array([math.cos(0.3), 0.0, 0.0, math.sin(0.3)])
        assert np.allclose(quat_multiply(a, b), [math.cos(0.5), 0.0, 0.0, math.sin(0.5)])


class TestSampling:
    def test_halton_inside_box(self):
        lower, upper = np.array([-1.0, 0.0, 2.0]), np.array([1.0, 0.5, 3.0])
        samples = halton_samples(64, lower, upper, seed=2)
        assert samples.shape == (64, 3)
        assert np.all((samples >= lower) & (samples <= upper))
        assert np.array_equal(samples, halton_samples(64, lower, upper, seed=2))

    def test_halton_empty(self):
        assert halton_samples(0, np.zeros(2), np.ones(2)).shape == (0, 2)

    def test_equal_rows_draw_equal_noise(self):
        rows = np.array([[0.1, 0.2], [0.3, 0.4], [0.1, 0.2]])
        draws = [g.normal(size=3) for g in content_streams(5, rows)]
        assert np.array_equal(draws[0], draws[2])
        assert not np.array_equal(draws[0], draws[1])

    def test_streams_depend_on_seed(self):
        rows = np.ones((1, 2))
        assert content_streams(1, rows)[0].random() != content_streams(2, rows)[0].random()


class TestPercentile:
    def test_nearest_rank(self):
        values = [15, 20, 35, 40, 50]
        assert nearest_rank_percentile(values, 30) == 20.0
        assert nearest_rank_percentile(values, 100) == 50.0
        assert nearest_rank_percentile(values, 0) == 15.0

    def test_empty(self):
        assert nearest_rank_percentile([], 75) is None
