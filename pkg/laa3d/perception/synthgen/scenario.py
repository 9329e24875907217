"""合成シナリオの定義 (TOML) と軌跡の計算

軌跡と物体の位置はワールド座標で与える。カメラはワールド座標での位置・姿勢と
(任意で) 等速度を持つ。書式は docs/formats.md を参照。
"""

from __future__ import annotations

import logging
import math
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Any

import numpy as np

from perception.exceptions import DegenerateSpec, InputError, InvariantError, SpecError
from perception.geometry import CameraModel
from perception.schema import ObjectClass

logger = logging.getLogger(__name__)


class TrajectoryKind(str, Enum):
    LINEAR = 'linear'
    CIRCULAR = 'circular'
    WAYPOINT = 'waypoint'


class OrientationRule(str, Enum):
    VELOCITY_ALIGNED = 'velocity-aligned'
    FIXED = 'fixed'


def _vector(value, name: str) -> tuple[float, float, float]:
    try:
        x, y, z = (float(v) for v in value)
    except (TypeError, ValueError):
        raise SpecError(f'{name} must be a list of 3 numbers, got {value!r}')
    if not all(math.isfinite(v) for v in (x, y, z)):
        raise SpecError(f'{name} must be finite, got {value!r}')
    return x, y, z


@dataclass(frozen=True)
class TrajectorySpec:
    kind: TrajectoryKind = TrajectoryKind.LINEAR
    start: tuple[float, float, float] = (0.0, 0.0, 0.0)
    velocity: tuple[float, float, float] = (0.0, 0.0, 0.0)
    # 円軌道は x-z 平面 (カメラ座標の水平面)
    center: tuple[float, float, float] = (0.0, 0.0, 0.0)
    radius: float = 1.0
    angular_rate: float = 0.0
    phase: float = 0.0
    # (時刻 [s], (x, y, z))
    waypoints: tuple[tuple[float, tuple[float, float, float]], ...] = ()
    orientation: OrientationRule = OrientationRule.VELOCITY_ALIGNED
    angles: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        object.__setattr__(self, 'kind', TrajectoryKind(self.kind))
        object.__setattr__(self, 'orientation', OrientationRule(self.orientation))
        values = (*self.start, *self.velocity, *self.center, self.angular_rate, self.phase)
        if not all(math.isfinite(v) for v in values):
            raise SpecError('Trajectory parameters must be finite')
        if self.kind is TrajectoryKind.CIRCULAR and not self.radius > 0:
            raise SpecError(f'Circular trajectory radius must be positive, got {self.radius}')
        if self.kind is TrajectoryKind.WAYPOINT:
            if not self.waypoints:
                raise DegenerateSpec('Waypoint trajectory has no waypoints')
            times = [t for t, _ in self.waypoints]
            if any(b <= a for a, b in zip(times, times[1:])):
                raise SpecError(f'Waypoint times must increase strictly: {times}')


@dataclass(frozen=True)
class ObjectSpec:
    class_id: ObjectClass
    size: tuple[float, float, float]
    trajectory: TrajectorySpec
    fine_class: str = ''

    def __post_init__(self):
        object.__setattr__(self, 'class_id', ObjectClass.parse(self.class_id))
        if not all(math.isfinite(s) and s > 0 for s in self.size):
            raise SpecError(f'Object size must be positive, got {self.size}')


@dataclass(frozen=True)
class GroupSpec:
    """領域内に一様に配置し、同じ速度で平行移動する物体群 (シードで展開)"""

    class_id: ObjectClass
    count: int
    size: tuple[float, float, float]
    region_min: tuple[float, float, float]
    region_max: tuple[float, float, float]
    velocity: tuple[float, float, float] = (0.0, 0.0, 0.0)
    min_spacing: float = 0.0
    fine_class: str = ''

    def __post_init__(self):
        object.__setattr__(self, 'class_id', ObjectClass.parse(self.class_id))
        if self.count < 0:
            raise SpecError(f'Group count must be non-negative, got {self.count}')
        if any(hi < lo for lo, hi in zip(self.region_min, self.region_max)):
            raise SpecError(f'Empty group region {self.region_min} .. {self.region_max}')
        if self.min_spacing < 0:
            raise SpecError(f'min_spacing must be non-negative, got {self.min_spacing}')


@dataclass(frozen=True)
class CameraSpec:
    model: CameraModel
    # カメラ -> ワールドの位置と姿勢 (roll, pitch, yaw)
    position: tuple[float, float, float] = (0.0, 0.0, 0.0)
    angles: tuple[float, float, float] = (0.0, 0.0, 0.0)
    velocity: tuple[float, float, float] = (0.0, 0.0, 0.0)


@dataclass(frozen=True)
class CorruptionModel:
    position_sigma: float = 0.0
    fp_rate: float = 0.0
    fn_rate: float = 0.0
    idswitch_rate: float = 0.0
    tp_score: float = 1.0
    fp_score: float = 0.5
    score_jitter: float = 0.0
    seed: int = 0

    def __post_init__(self):
        rates = (self.fp_rate, self.fn_rate, self.idswitch_rate)
        if not all(0.0 <= r <= 1.0 for r in rates):
            raise SpecError(f'Corruption rates must lie in [0, 1], got {rates}')
        if not self.position_sigma >= 0:
            raise SpecError(f'position_sigma must be >= 0, got {self.position_sigma}')
        scores = (self.tp_score, self.fp_score, self.score_jitter)
        if not all(0.0 <= s <= 1.0 for s in scores):
            raise SpecError(f'Score parameters must lie in [0, 1], got {scores}')
        if not 0 <= self.seed < 2**64:
            raise SpecError(f'seed must be an unsigned 64-bit integer, got {self.seed}')

    @property
    def is_identity(self) -> bool:
        return (
            self.position_sigma == 0
            and self.fp_rate == 0
            and self.fn_rate == 0
            and self.idswitch_rate == 0
        )


@dataclass(frozen=True)
class ScenarioSpec:
    sequence_id: str
    seed: int
    duration: int
    fps: float
    camera: CameraSpec
    objects: tuple[ObjectSpec, ...] = ()
    groups: tuple[GroupSpec, ...] = ()
    corruption: CorruptionModel | None = None

    def __post_init__(self):
        object.__setattr__(self, 'objects', tuple(self.objects))
        object.__setattr__(self, 'groups', tuple(self.groups))
        if not self.sequence_id or any(c.isspace() for c in self.sequence_id):
            raise SpecError(f'Invalid sequence_id {self.sequence_id!r}')
        if not 0 <= self.seed < 2**64:
            raise SpecError(f'seed must be an unsigned 64-bit integer, got {self.seed}')
        if self.duration < 1:
            raise SpecError(f'duration must be at least one frame, got {self.duration}')
        if not self.fps > 0:
            raise SpecError(f'fps must be positive, got {self.fps}')

    def frame_times(self) -> np.ndarray:
        return np.arange(self.duration) / self.fps


# 軌跡


def velocity_angles(velocity, fallback=(0.0, 0.0, 0.0)) -> tuple[float, float, float]:
    """ボックスの x 軸 (length 方向) を進行方向に向ける (roll, pitch, yaw)"""
    vx, vy, vz = (float(v) for v in velocity)
    horizontal = math.hypot(vx, vy)
    if horizontal == 0 and vz == 0:
        return tuple(fallback)
    # R @ e_x = (cos(yaw) cos(pitch), sin(yaw) cos(pitch), -sin(pitch))
    return 0.0, math.atan2(-vz, horizontal), math.atan2(vy, vx)


def _linear(spec: TrajectorySpec, times: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    velocity = np.asarray(spec.velocity)
    positions = np.asarray(spec.start) + times[:, None] * velocity
    return positions, np.tile(velocity, (len(times), 1))


def _circular(spec: TrajectorySpec, times: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    theta = spec.phase + spec.angular_rate * times
    offsets = np.stack([np.cos(theta), np.zeros_like(theta), np.sin(theta)], axis=1)
    tangents = np.stack([-np.sin(theta), np.zeros_like(theta), np.cos(theta)], axis=1)
    positions = np.asarray(spec.center) + spec.radius * offsets
    return positions, spec.radius * spec.angular_rate * tangents


def _waypoint(spec: TrajectorySpec, times: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    knots = np.array([t for t, _ in spec.waypoints], dtype=np.float64)
    points = np.array([p for _, p in spec.waypoints], dtype=np.float64).reshape(-1, 3)
    # 範囲外は端点で止まる
    positions = np.stack([np.interp(times, knots, points[:, k]) for k in range(3)], axis=1)
    velocities = np.zeros_like(positions)
    if len(knots) > 1:
        segment_velocity = np.diff(points, axis=0) / np.diff(knots)[:, None]
        segment = np.searchsorted(knots, times, side='right') - 1
        inside = (segment >= 0) & (segment < len(knots) - 1)
        velocities[inside] = segment_velocity[segment[inside]]
    return positions, velocities


_TRAJECTORIES = {
    TrajectoryKind.LINEAR: _linear,
    TrajectoryKind.CIRCULAR: _circular,
    TrajectoryKind.WAYPOINT: _waypoint,
}


def make_trajectory(spec: TrajectorySpec, times) -> tuple[np.ndarray, np.ndarray]:
    """各時刻の位置 (n, 3) と姿勢 (roll, pitch, yaw) (n, 3)

    進行方向に合わせる場合、速度 0 の時刻は直前の姿勢 (最初は ``angles``) を保つ。
    """
    times = np.asarray(times, dtype=np.float64).reshape(-1)
    positions, velocities = _TRAJECTORIES[spec.kind](spec, times)
    if spec.orientation is OrientationRule.FIXED:
        return positions, np.tile(np.asarray(spec.angles, dtype=np.float64), (len(times), 1))

    angles = np.empty((len(times), 3))
    previous = spec.angles
    for k, velocity in enumerate(velocities):
        previous = velocity_angles(velocity, previous)
        angles[k] = previous
    return positions, angles


# TOML


def _take(table: dict[str, Any], allowed: set[str], where: str) -> dict[str, Any]:
    unknown = set(table) - allowed
    if unknown:
        raise SpecError(f'Unknown keys in {where}: {sorted(unknown)}')
    return table


def _required(table: dict[str, Any], key: str, where: str):
    if key not in table:
        raise SpecError(f'Missing required key {key!r} in {where}')
    return table[key]


def _trajectory_from_table(table: dict[str, Any], where: str) -> TrajectorySpec:
    kind = TrajectoryKind(table.get('trajectory', 'linear'))
    waypoints = []
    for row in table.get('waypoints', []):
        if len(row) != 4:
            raise SpecError(f'{where}: waypoint rows are [t, x, y, z], got {row!r}')
        waypoints.append((float(row[0]), _vector(row[1:], f'{where}.waypoints')))
    if kind is TrajectoryKind.WAYPOINT and not waypoints:
        raise DegenerateSpec(f'{where}: waypoint trajectory has no waypoints')
    return TrajectorySpec(
        kind=kind,
        start=_vector(table.get('start', (0, 0, 0)), f'{where}.start'),
        velocity=_vector(table.get('velocity', (0, 0, 0)), f'{where}.velocity'),
        center=_vector(table.get('center', (0, 0, 0)), f'{where}.center'),
        radius=float(table.get('radius', 1.0)),
        angular_rate=float(table.get('angular_rate', 0.0)),
        phase=float(table.get('phase', 0.0)),
        waypoints=tuple(waypoints),
        orientation=OrientationRule(table.get('orientation', 'velocity-aligned')),
        angles=_vector(table.get('angles', (0, 0, 0)), f'{where}.angles'),
    )


_OBJECT_KEYS = {
    'class',
    'fine_class',
    'size',
    'trajectory',
    'start',
    'velocity',
    'center',
    'radius',
    'angular_rate',
    'phase',
    'waypoints',
    'orientation',
    'angles',
}
_GROUP_KEYS = {
    'class',
    'fine_class',
    'count',
    'size',
    'region_min',
    'region_max',
    'velocity',
    'min_spacing',
}
_CAMERA_KEYS = {'fx', 'fy', 'cx', 'cy', 'width', 'height', 'position', 'angles', 'velocity'}


def scenario_from_document(document: dict[str, Any]) -> ScenarioSpec:
    _take(document, {'scenario', 'camera', 'objects', 'groups', 'corruption'}, 'scenario file')
    try:
        scenario = _take(
            _required(document, 'scenario', 'scenario file'),
            {'sequence_id', 'seed', 'duration', 'fps'},
            '[scenario]',
        )
        camera = _take(_required(document, 'camera', 'scenario file'), _CAMERA_KEYS, '[camera]')
        camera_spec = CameraSpec(
            CameraModel(
                float(_required(camera, 'fx', '[camera]')),
                float(_required(camera, 'fy', '[camera]')),
                float(_required(camera, 'cx', '[camera]')),
                float(_required(camera, 'cy', '[camera]')),
                int(_required(camera, 'width', '[camera]')),
                int(_required(camera, 'height', '[camera]')),
            ),
            _vector(camera.get('position', (0, 0, 0)), 'camera.position'),
            _vector(camera.get('angles', (0, 0, 0)), 'camera.angles'),
            _vector(camera.get('velocity', (0, 0, 0)), 'camera.velocity'),
        )

        objects = []
        for k, table in enumerate(document.get('objects', [])):
            where = f'[[objects]] #{k + 1}'
            _take(table, _OBJECT_KEYS, where)
            objects.append(
                ObjectSpec(
                    ObjectClass.parse(_required(table, 'class', where)),
                    _vector(_required(table, 'size', where), f'{where}.size'),
                    _trajectory_from_table(table, where),
                    str(table.get('fine_class', '')),
                )
            )

        groups = []
        for k, table in enumerate(document.get('groups', [])):
            where = f'[[groups]] #{k + 1}'
            _take(table, _GROUP_KEYS, where)
            groups.append(
                GroupSpec(
                    ObjectClass.parse(_required(table, 'class', where)),
                    int(_required(table, 'count', where)),
                    _vector(_required(table, 'size', where), f'{where}.size'),
                    _vector(_required(table, 'region_min', where), f'{where}.region_min'),
                    _vector(_required(table, 'region_max', where), f'{where}.region_max'),
                    _vector(table.get('velocity', (0, 0, 0)), f'{where}.velocity'),
                    float(table.get('min_spacing', 0.0)),
                    str(table.get('fine_class', '')),
                )
            )

        seed = int(scenario.get('seed', 0))
        corruption = None
        if 'corruption' in document:
            table = _take(
                document['corruption'],
                {
                    'position_sigma',
                    'fp_rate',
                    'fn_rate',
                    'idswitch_rate',
                    'tp_score',
                    'fp_score',
                    'score_jitter',
                    'seed',
                },
                '[corruption]',
            )
            # シード未指定なら [scenario] のシード
            corruption = CorruptionModel(**{'seed': seed, **table})

        return ScenarioSpec(
            sequence_id=str(_required(scenario, 'sequence_id', '[scenario]')),
            seed=seed,
            duration=int(_required(scenario, 'duration', '[scenario]')),
            fps=float(_required(scenario, 'fps', '[scenario]')),
            camera=camera_spec,
            objects=tuple(objects),
            groups=tuple(groups),
            corruption=corruption,
        )
    except InvariantError as e:
        raise SpecError(str(e))
    except (TypeError, ValueError) as e:
        if isinstance(e, InputError):
            raise
        raise SpecError(f'Invalid scenario value: {e}')


def load_scenario(path: Path | str) -> ScenarioSpec:
    path = Path(path)
    if not path.exists():
        raise InputError(f'`{path}` not found. Please check the scenario file path.')
    try:
        with path.open('rb') as f:
            document = tomllib.load(f)
    except (tomllib.TOMLDecodeError, UnicodeDecodeError) as e:
        raise SpecError(f'{path}: {e}')
    try:
        return scenario_from_document(document)
    except SpecError as e:
        raise type(e)(f'{path}: {e}')
