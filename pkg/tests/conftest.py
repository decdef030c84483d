"""Shared fixtures: reference models used across the test suite."""

import numpy as np
import pytest

from knncluster.model import make_ball_mixture


@pytest.fixture(scope="session")
def two_disks():
    """Two far disks of radius 0.5 at distance 3, equal masses, no noise."""
    return make_ball_mixture(
        2, [((0.0, 0.0), 0.5, 0.5), ((3.0, 0.0), 0.5, 0.5)], model_id="two-disks"
    )


@pytest.fixture(scope="session")
def two_disks_noisy():
    """Two disks with a strong density jump inside a uniform background box.

    Component density is about 1.18 against background 0.006.  Calibrated
    by pilot so the noisy pipeline at level 0.5 with eps 0.2 and h 0.2 keeps
    every cluster point: the estimate at a disk-boundary sample stays above
    0.38 (curvature pulls it below half the jump), comfortably over the
    pruning threshold 0.3, while far background sits below 0.03.
    """
    return make_ball_mixture(
        2,
        [((0.0, 0.0), 0.35, 0.45), ((3.0, 0.0), 0.35, 0.45)],
        background={"box": [[-1.4, 4.4], [-1.4, 1.4]], "mass": 0.10},
        model_id="two-disks-noisy",
    )


@pytest.fixture(scope="session")
def two_disks_lowjump():
    """Two disks with a small density jump (0.2) over background 0.049.

    The estimator's worst-case error is near half the jump, so the accuracy
    event fires with sizable probability at eps around 0.13.
    """
    return make_ball_mixture(
        2,
        [((0.0, 0.0), 0.5, 0.157), ((3.0, 0.0), 0.5, 0.157)],
        background={"box": [[-2.0, 5.0], [-1.0, 1.0]], "mass": 0.686},
        model_id="two-disks-lowjump",
    )


@pytest.fixture()
def rng():
    return np.random.default_rng(20240811)
