# /ucsl/kalman_filter.py
"""
Linear Kalman filter over image boxes with constant-velocity dynamics.

State (8): cx, cy, a, h, vcx, vcy, va, vh, where (cx, cy) is the box center,
a = w / h the aspect ratio and h the height. The first four are observed.

Noise is modelled relative to the box height: position standard deviation
is ``STD_WEIGHT_POSITION * h`` and velocity ``STD_WEIGHT_VELOCITY * h``. The
aspect ratio gets small fixed deviations since it barely changes for a
rigid object.
"""
import logging

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from exceptions import NonFiniteState
from models import Box, KalmanState
from utils import tlwh_to_xyah, xyah_to_tlwh

logger = logging.getLogger(__name__)

NDIM = 4
STD_WEIGHT_POSITION = 1.0 / 20
STD_WEIGHT_VELOCITY = 1.0 / 160

# 0.95 quantile of the chi-square distribution with 4 degrees of freedom
CHI2_GATE_4DOF = 9.4877

MOTION_MAT = np.eye(2 * NDIM)
MOTION_MAT[:NDIM, NDIM:] = np.eye(NDIM)
UPDATE_MAT = np.eye(NDIM, 2 * NDIM)


def _symmetrize(cov: np.ndarray) -> np.ndarray:
    return (cov + cov.T) / 2


def _checked(mean: np.ndarray, cov: np.ndarray, where: str) -> KalmanState:
    if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(cov))):
        raise NonFiniteState(f"Kalman {where} produced a non-finite state.")
    if mean[3] <= 0:
        raise NonFiniteState(f"Kalman {where} produced a non-positive box height {mean[3]}.")
    return KalmanState(mean=mean, covariance=cov)


def kalman_initiate(box: Box) -> KalmanState:
    """
    Starts a track at an unmatched detection box (left, top, w, h).

    Velocities start at zero with a wide spread.

    Raises:
        DegenerateBox: if w or h is not positive.
    """
    measurement = tlwh_to_xyah(box)
    h = measurement[3]
    mean = np.concatenate([measurement, np.zeros(NDIM)])
    std = np.array(
        [
            2 * STD_WEIGHT_POSITION * h,
            2 * STD_WEIGHT_POSITION * h,
            1e-2,
            2 * STD_WEIGHT_POSITION * h,
            10 * STD_WEIGHT_VELOCITY * h,
            10 * STD_WEIGHT_VELOCITY * h,
            1e-5,
            10 * STD_WEIGHT_VELOCITY * h,
        ]
    )
    return KalmanState(mean=mean, covariance=np.diag(np.square(std)))


def kalman_predict(state: KalmanState, freeze_height_velocity: bool = False) -> KalmanState:
    """One constant-velocity step. Lost tracks pass freeze_height_velocity so their boxes stop growing or shrinking."""
    mean = np.array(state.mean)
    if freeze_height_velocity:
        mean[7] = 0.0
    h = mean[3]
    std = np.array(
        [
            STD_WEIGHT_POSITION * h,
            STD_WEIGHT_POSITION * h,
            1e-2,
            STD_WEIGHT_POSITION * h,
            STD_WEIGHT_VELOCITY * h,
            STD_WEIGHT_VELOCITY * h,
            1e-5,
            STD_WEIGHT_VELOCITY * h,
        ]
    )
    motion_cov = np.diag(np.square(std))
    mean = MOTION_MAT @ mean
    cov = _symmetrize(MOTION_MAT @ state.covariance @ MOTION_MAT.T + motion_cov)
    return _checked(mean, cov, "predict")


def project(state: KalmanState) -> tuple[np.ndarray, np.ndarray]:
    """Measurement-space mean and covariance (innovation covariance) of a state."""
    h = state.mean[3]
    std = np.array([STD_WEIGHT_POSITION * h, STD_WEIGHT_POSITION * h, 1e-1, STD_WEIGHT_POSITION * h])
    mean = UPDATE_MAT @ state.mean
    cov = UPDATE_MAT @ state.covariance @ UPDATE_MAT.T + np.diag(np.square(std))
    return mean, _symmetrize(cov)


def kalman_update(state: KalmanState, box: Box) -> KalmanState:
    """
    Corrects the state with a measured box.

    Uses the Joseph form for the covariance so it stays symmetric positive
    semi-definite over long runs.
    """
    measurement = tlwh_to_xyah(box)
    projected_mean, projected_cov = project(state)
    measurement_cov = projected_cov - UPDATE_MAT @ state.covariance @ UPDATE_MAT.T
    try:
        factor = cho_factor(projected_cov, lower=True, check_finite=True)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise NonFiniteState(f"Innovation covariance is not positive definite: {exc}")
    gain = cho_solve(factor, (state.covariance @ UPDATE_MAT.T).T, check_finite=False).T
    mean = state.mean + gain @ (measurement - projected_mean)
    joseph = np.eye(2 * NDIM) - gain @ UPDATE_MAT
    cov = joseph @ state.covariance @ joseph.T + gain @ measurement_cov @ gain.T
    return _checked(mean, _symmetrize(cov), "update")


def gating_distance(state: KalmanState, measurements: np.ndarray) -> np.ndarray:
    """Squared Mahalanobis distance from the projected state to each (cx, cy, a, h) row of measurements."""
    projected_mean, projected_cov = project(state)
    diff = np.atleast_2d(measurements) - projected_mean
    factor = cho_factor(projected_cov, lower=True)
    return np.sum(diff * cho_solve(factor, diff.T).T, axis=1)


def state_box(state: KalmanState) -> Box:
    """The (left, top, w, h) box encoded in a state's mean."""
    return xyah_to_tlwh(state.mean[:NDIM])
