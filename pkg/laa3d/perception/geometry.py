"""6-DoF 姿勢・3D ボックス・カメラ投影の幾何計算

座標系はカメラ座標 (x: 右, y: 下, z: 前方 = 光軸)。角度はラジアンで保持し、
[-pi, pi) に正規化する。オイラー角の合成順は内因性 yaw -> pitch -> roll
(R = Rz(yaw) @ Ry(pitch) @ Rx(roll))。
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import NamedTuple

import numpy as np
from scipy.spatial.distance import pdist
from scipy.spatial.transform import Rotation

from perception.exceptions import BehindCamera, FullyOutside, InvariantError, NonUnitEncoding

logger = logging.getLogger(__name__)

GIMBAL_LOCK_TOLERANCE = 1e-6
UNIT_NORM_TOLERANCE = 1e-6


def wrap_angle(angle: float) -> float:
    """角度を [-pi, pi) に正規化"""
    wrapped = (angle + math.pi) % (2.0 * math.pi) - math.pi
    # 浮動小数点の丸めで pi ちょうどになる場合がある
    if wrapped >= math.pi:
        wrapped -= 2.0 * math.pi
    return wrapped


@dataclass(frozen=True)
class Pose6DoF:
    x: float
    y: float
    z: float
    roll: float = 0.0
    pitch: float = 0.0
    yaw: float = 0.0

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.x, self.y, self.z)):
            raise InvariantError(f'Pose position must be finite, got {self.position}')
        for name in ('roll', 'pitch', 'yaw'):
            value = getattr(self, name)
            if not math.isfinite(value):
                raise InvariantError(f'Pose angle {name} must be finite, got {value}')
            object.__setattr__(self, name, wrap_angle(value))

    @property
    def position(self) -> np.ndarray:
        return np.array([self.x, self.y, self.z], dtype=np.float64)

    @property
    def angles(self) -> tuple[float, float, float]:
        return self.roll, self.pitch, self.yaw

    def rotation(self) -> np.ndarray:
        return rotation_from_euler(self.roll, self.pitch, self.yaw)

    @classmethod
    def from_matrix(cls, position, rotation: np.ndarray) -> Pose6DoF:
        roll, pitch, yaw, _ = euler_from_rotation(rotation)
        x, y, z = (float(v) for v in position)
        return cls(x, y, z, roll, pitch, yaw)


@dataclass(frozen=True)
class Box3D:
    pose: Pose6DoF
    length: float
    width: float
    height: float

    def __post_init__(self):
        if not all(math.isfinite(s) and s > 0 for s in self.size):
            raise InvariantError(f'Box size must be positive, got {self.size}')

    @property
    def size(self) -> tuple[float, float, float]:
        return self.length, self.width, self.height

    def with_pose(self, pose: Pose6DoF) -> Box3D:
        return Box3D(pose, self.length, self.width, self.height)


@dataclass(frozen=True)
class CameraModel:
    fx: float
    fy: float
    cx: float
    cy: float
    image_width: int
    image_height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise InvariantError(f'Focal lengths must be positive, got fx={self.fx} fy={self.fy}')
        if not (0 <= self.cx <= self.image_width and 0 <= self.cy <= self.image_height):
            raise InvariantError(
                f'Principal point ({self.cx}, {self.cy}) lies outside the '
                f'{self.image_width}x{self.image_height} image'
            )


@dataclass(frozen=True)
class Box2D:
    u_min: float
    v_min: float
    u_max: float
    v_max: float

    def __post_init__(self):
        if self.u_min > self.u_max or self.v_min > self.v_max:
            raise InvariantError(f'Degenerate 2D box {self}')

    @property
    def area(self) -> float:
        return (self.u_max - self.u_min) * (self.v_max - self.v_min)


@dataclass(frozen=True)
class Extrinsic:
    """ワールド座標 -> カメラ座標の剛体変換 (p_cam = R @ p_world + t)"""

    rotation: tuple[float, ...] = (1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0)
    translation: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if len(self.rotation) != 9 or len(self.translation) != 3:
            raise InvariantError('Extrinsic needs a 3x3 rotation and a 3-vector translation')
        matrix = self.matrix
        if not np.allclose(matrix.T @ matrix, np.eye(3), atol=1e-6):
            raise InvariantError('Extrinsic rotation is not orthonormal')

    @classmethod
    def from_matrix(cls, rotation: np.ndarray, translation) -> Extrinsic:
        return cls(
            tuple(float(v) for v in np.asarray(rotation).ravel()),
            tuple(float(v) for v in translation),
        )

    @property
    def matrix(self) -> np.ndarray:
        return np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)

    @property
    def vector(self) -> np.ndarray:
        return np.asarray(self.translation, dtype=np.float64)

    def world_to_camera(self, point) -> np.ndarray:
        return self.matrix @ np.asarray(point, dtype=np.float64) + self.vector

    def camera_to_world(self, point) -> np.ndarray:
        return self.matrix.T @ (np.asarray(point, dtype=np.float64) - self.vector)


class EncodingMode(str, Enum):
    SINCOS = 'sincos'
    QUATERNION = 'quaternion'


@dataclass(frozen=True)
class RotationEncoding:
    mode: EncodingMode
    values: tuple[float, ...] = field(default_factory=tuple)


class EulerAngles(NamedTuple):
    roll: float
    pitch: float
    yaw: float
    gimbal_lock: bool = False


def rotation_from_euler(roll: float, pitch: float, yaw: float) -> np.ndarray:
    return Rotation.from_euler('ZYX', [yaw, pitch, roll]).as_matrix()


def euler_from_rotation(rotation: np.ndarray) -> EulerAngles:
    """回転行列をオイラー角 (roll, pitch, yaw) に分解

    pitch が +-pi/2 から 1e-6 以内のときは gimbal lock とみなし、roll を 0 として
    残りの回転を yaw に寄せる。
    """
    r = np.asarray(rotation, dtype=np.float64)
    pitch = math.atan2(-r[2, 0], math.hypot(r[0, 0], r[1, 0]))

    if abs(abs(pitch) - math.pi / 2) <= GIMBAL_LOCK_TOLERANCE:
        yaw = math.atan2(-r[0, 1], r[1, 1])
        logger.debug('Gimbal lock at pitch=%.9f; roll fixed to 0', pitch)
        return EulerAngles(0.0, wrap_angle(pitch), wrap_angle(yaw), True)

    roll = math.atan2(r[2, 1], r[2, 2])
    yaw = math.atan2(r[1, 0], r[0, 0])
    return EulerAngles(wrap_angle(roll), wrap_angle(pitch), wrap_angle(yaw), False)


def minimal_angle_diff(theta: float, theta_prime: float) -> float:
    """pi の対称性を考慮した最小角度差 min(|θ - θ'|, |θ - (θ' + π)|)"""
    diff = wrap_angle(theta - theta_prime)
    return min(abs(diff), abs(wrap_angle(diff - math.pi)))


_UNIT_CORNERS = np.array(
    [
        [sx, sy, sz]
        for sx in (0.5, -0.5)
        for sy in (0.5, -0.5)
        for sz in (0.5, -0.5)
    ],
    dtype=np.float64,
)


def box_corners(box: Box3D) -> np.ndarray:
    """ボックスの 8 頂点 (8, 3) をカメラ座標で返す"""
    local = _UNIT_CORNERS * np.array(box.size)
    return local @ box.pose.rotation().T + box.pose.position


def box_model_points(box: Box3D) -> np.ndarray:
    """メッシュの代わりに使うモデル点群 (物体座標の 8 頂点 + 中心)"""
    local = _UNIT_CORNERS * np.array(box.size)
    return np.vstack([local, np.zeros((1, 3))])


def model_diameter(points: np.ndarray) -> float:
    points = np.asarray(points, dtype=np.float64)
    if len(points) < 2:
        return 0.0
    return float(pdist(points).max())


def project_point(cam: CameraModel, point) -> tuple[float, float]:
    x, y, z = (float(v) for v in point)
    if z <= 0:
        raise BehindCamera(f'Point ({x}, {y}, {z}) is not in front of the camera')
    return cam.cx + cam.fx * x / z, cam.cy + cam.fy * y / z


def project_box(cam: CameraModel, box: Box3D) -> Box2D:
    """8 頂点の投影の外接矩形を画像範囲でクリップして返す"""
    corners = box_corners(box)
    if np.any(corners[:, 2] <= 0):
        raise BehindCamera(f'Box at {box.pose.position} crosses the image plane')

    u = cam.cx + cam.fx * corners[:, 0] / corners[:, 2]
    v = cam.cy + cam.fy * corners[:, 1] / corners[:, 2]

    u_min = max(float(u.min()), 0.0)
    v_min = max(float(v.min()), 0.0)
    u_max = min(float(u.max()), float(cam.image_width))
    v_max = min(float(v.max()), float(cam.image_height))
    if u_min >= u_max or v_min >= v_max:
        raise FullyOutside(f'Box at {box.pose.position} projects outside the image')
    return Box2D(u_min, v_min, u_max, v_max)


def iou_2d(a: Box2D, b: Box2D) -> float:
    inter_w = min(a.u_max, b.u_max) - max(a.u_min, b.u_min)
    inter_h = min(a.v_max, b.v_max) - max(a.v_min, b.v_min)
    if inter_w <= 0 or inter_h <= 0:
        return 0.0
    intersection = inter_w * inter_h
    union = a.area + b.area - intersection
    if union <= 0:
        return 0.0
    return min(intersection / union, 1.0)


def center_distance(a: Pose6DoF, b: Pose6DoF) -> float:
    return math.sqrt((a.x - b.x) ** 2 + (a.y - b.y) ** 2 + (a.z - b.z) ** 2)


def pose_to_world(pose: Pose6DoF, extrinsic: Extrinsic) -> Pose6DoF:
    position = extrinsic.camera_to_world(pose.position)
    rotation = extrinsic.matrix.T @ pose.rotation()
    return Pose6DoF.from_matrix(position, rotation)


def pose_to_camera(pose: Pose6DoF, extrinsic: Extrinsic) -> Pose6DoF:
    position = extrinsic.world_to_camera(pose.position)
    rotation = extrinsic.matrix @ pose.rotation()
    return Pose6DoF.from_matrix(position, rotation)


def encode_rotation(pose: Pose6DoF, mode: EncodingMode | str) -> RotationEncoding:
    mode = EncodingMode(mode)
    if mode is EncodingMode.SINCOS:
        values = []
        for angle in pose.angles:
            values.extend([math.sin(angle), math.cos(angle)])
        return RotationEncoding(mode, tuple(values))

    # scipy は (x, y, z, w) の順。スカラー部を先頭にし、w >= 0 の代表元に揃える
    x, y, z, w = Rotation.from_euler('ZYX', [pose.yaw, pose.pitch, pose.roll]).as_quat()
    quaternion = np.array([w, x, y, z])
    if quaternion[0] < 0:
        quaternion = -quaternion
    return RotationEncoding(mode, tuple(float(q) for q in quaternion))


def decode_rotation(encoding: RotationEncoding) -> EulerAngles:
    mode = EncodingMode(encoding.mode)
    values = np.asarray(encoding.values, dtype=np.float64)

    if mode is EncodingMode.SINCOS:
        if values.shape != (6,):
            raise NonUnitEncoding(f'sincos encoding needs 6 values, got {len(values)}')
        pairs = values.reshape(3, 2)
        norms = np.hypot(pairs[:, 0], pairs[:, 1])
        if np.any(np.abs(norms - 1.0) > UNIT_NORM_TOLERANCE):
            raise NonUnitEncoding(f'sin/cos pairs are not unit length: {norms.tolist()}')
        roll, pitch, yaw = (math.atan2(s, c) for s, c in pairs)
        return EulerAngles(wrap_angle(roll), wrap_angle(pitch), wrap_angle(yaw))

    if values.shape != (4,):
        raise NonUnitEncoding(f'quaternion encoding needs 4 values, got {len(values)}')
    norm = float(np.linalg.norm(values))
    if abs(norm - 1.0) > UNIT_NORM_TOLERANCE:
        raise NonUnitEncoding(f'quaternion norm is {norm}')
    w, x, y, z = values if values[0] >= 0 else -values
    return euler_from_rotation(Rotation.from_quat([x, y, z, w]).as_matrix())
