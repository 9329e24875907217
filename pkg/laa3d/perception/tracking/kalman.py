"""等速度モデルの 3D カルマンフィルタ

状態は (x, y, z, vx, vy, vz)。姿勢とサイズは状態に含めず、検出結果をそのまま使う。
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from filterpy.common import Q_discrete_white_noise
from filterpy.kalman import predict, update

from perception.exceptions import InvariantError, SingularInnovation

logger = logging.getLogger(__name__)

CONDITION_LIMIT = 1e12
OBSERVATION = np.hstack([np.eye(3), np.zeros((3, 3))])


@dataclass(frozen=True, eq=False)
class KalmanState:
    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        mean = np.array(self.mean, dtype=np.float64).reshape(6)
        covariance = np.array(self.covariance, dtype=np.float64).reshape(6, 6)
        if not np.allclose(covariance, covariance.T, atol=1e-9):
            raise InvariantError('Kalman covariance must be symmetric')
        if not np.all(np.isfinite(covariance)):
            raise InvariantError('Kalman covariance must be finite')
        smallest = np.linalg.eigvalsh(covariance).min()
        if smallest < -1e-9:
            raise InvariantError(
                f'Kalman covariance must be positive semi-definite (min eigenvalue {smallest:.3g})'
            )
        object.__setattr__(self, 'mean', mean)
        object.__setattr__(self, 'covariance', covariance)

    @property
    def position(self) -> np.ndarray:
        return self.mean[:3].copy()

    @property
    def velocity(self) -> np.ndarray:
        return self.mean[3:].copy()

    @classmethod
    def initial(
        cls,
        position,
        velocity=(0.0, 0.0, 0.0),
        position_variance: float = 10.0,
        velocity_variance: float = 100.0,
    ) -> KalmanState:
        mean = np.concatenate([np.asarray(position, float), np.asarray(velocity, float)])
        covariance = np.diag([position_variance] * 3 + [velocity_variance] * 3)
        return cls(mean, covariance)


def transition(dt: float) -> np.ndarray:
    F = np.eye(6)
    F[:3, 3:] = dt * np.eye(3)
    return F


def process_noise(dt: float, variance: float) -> np.ndarray:
    # 各軸独立の離散白色雑音 (加速度)。並びは (x, y, z, vx, vy, vz)
    return Q_discrete_white_noise(dim=2, dt=dt, var=variance, block_size=3, order_by_dim=False)


def kalman_predict(state: KalmanState, dt: float, noise: float = 1.0) -> KalmanState:
    if not dt > 0:
        raise InvariantError(f'dt must be positive, got {dt}')
    x, P = predict(state.mean, state.covariance, transition(dt), process_noise(dt, noise))
    return KalmanState(x, (P + P.T) / 2.0)


def kalman_update(state: KalmanState, observation, noise: float = 0.1) -> KalmanState:
    """3D 位置の観測で更新 (Joseph 形式)。イノベーション共分散が特異に近いときは例外"""
    z = np.asarray(observation, dtype=np.float64).reshape(3)
    R = noise * np.eye(3)
    S = OBSERVATION @ state.covariance @ OBSERVATION.T + R
    if not np.all(np.isfinite(S)) or np.linalg.cond(S) > CONDITION_LIMIT:
        raise SingularInnovation(
            f'Innovation covariance is singular (cond={np.linalg.cond(S):.3g})'
        )
    x, P = update(state.mean, state.covariance, z, R, OBSERVATION)
    return KalmanState(x, (P + P.T) / 2.0)
