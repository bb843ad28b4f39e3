"""Small shared geometries for the unit tests."""

import numpy as np
import pytest

from riscalib.channel import RisPanel, SignalSpec
from riscalib.geometry import ArrayLayout, Pose, rot_zyx


@pytest.fixture
def small_spec():
    return SignalSpec(n_subcarriers=64, n_transmissions=12, tx_power_dbm=30.0)


@pytest.fixture
def small_ris(small_spec):
    lam = small_spec.wavelength
    return RisPanel(ArrayLayout(6, 6, lam / 2), Pose(np.array([0.0, -5.0, 2.5]), rot_zyx(0, 0, -90)))


@pytest.fixture
def bs_pose():
    return Pose(np.array([5.0, 0.0, 3.0]))


@pytest.fixture
def ue_pos():
    return np.array([-2.5, 2.5, 0.0])
