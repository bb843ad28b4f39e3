"""Recover the RIS pose from anchor measurements.

Four reference UEs at known positions measure the BS-RIS-anchor delay and
the direction under which the RIS sees them. The solver returns the RIS
position and orientation. Doubling the measurement noise roughly doubles the
position error.
"""

import numpy as np

from riscalib.estimators import ris_pose_calibrate, simulate_anchor_measurements
from riscalib.geometry import Pose, rot_zyx

ris = Pose(np.array([0.3, -4.8, 2.6]), rot_zyx(5.0, -3.0, -88.0))
bs = Pose(np.array([5.0, 0.0, 3.0]))
anchors = [np.array(a) for a in ([-2.0, 2.0, 0.0], [2.0, 1.0, 0.5], [0.0, 3.0, 1.5], [-3.0, -1.0, 1.0])]

est = ris_pose_calibrate(simulate_anchor_measurements(ris, bs, anchors), bs, anchors)
print(f"noiseless: position error {np.linalg.norm(est.position - ris.position):.2e} m")

for scale in (1.0, 2.0):
    err = []
    for seed in range(100):
        meas = simulate_anchor_measurements(ris, bs, anchors, toa_std=scale * 1e-11, aod_std=scale * 1e-3, rng_seed=seed)
        err.append(np.sum((ris_pose_calibrate(meas, bs, anchors, n_starts=2).position - ris.position) ** 2))
    print(f"TOA std {scale * 10:.0f} ps, AOD std {scale:.0f} mrad: position RMSE {np.sqrt(np.mean(err)) * 1e3:.2f} mm")
