"""データセットのスキーマ (アノテーション・フレーム・シーケンス・検出結果)

値はすべてイミュータブルで、コンストラクタで不変条件を検査する。
不正な値は公開 API からは作れない。
"""

from __future__ import annotations

import math
from collections.abc import Iterator, Mapping
from dataclasses import dataclass, field
from enum import Enum

from perception.exceptions import InvariantError
from perception.geometry import (
    Box2D,
    Box3D,
    CameraModel,
    Extrinsic,
    Pose6DoF,
    pose_to_camera,
    pose_to_world,
)


class ObjectClass(str, Enum):
    MAV = 'MAV'
    EVTOL = 'eVTOL'
    HELICOPTER = 'Helicopter'

    def __str__(self):
        return self.value

    @classmethod
    def parse(cls, value: str) -> ObjectClass:
        try:
            return cls(value)
        except ValueError:
            valid = ', '.join(c.value for c in cls)
            raise InvariantError(f'Unknown class {value!r}; expected one of {valid}')


@dataclass(frozen=True)
class AnnotatedObject:
    class_id: ObjectClass
    track_id: int
    box: Box3D
    fine_class: str = ''
    box2d: Box2D | None = None

    def __post_init__(self):
        object.__setattr__(self, 'class_id', ObjectClass.parse(self.class_id))
        if not isinstance(self.track_id, int) or self.track_id < 0:
            raise InvariantError(f'track_id must be a non-negative integer, got {self.track_id}')
        if any(c in self.fine_class for c in '\t\n\r'):
            raise InvariantError(f'fine_class may not contain tabs or newlines: {self.fine_class!r}')

    @property
    def pose(self) -> Pose6DoF:
        return self.box.pose


@dataclass(frozen=True)
class Frame:
    frame_index: int
    timestamp: float
    camera: CameraModel
    extrinsic: Extrinsic = field(default_factory=Extrinsic)
    objects: tuple[AnnotatedObject, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, 'objects', tuple(self.objects))
        if self.frame_index < 0:
            raise InvariantError(f'frame_index must be >= 0, got {self.frame_index}')
        if not math.isfinite(self.timestamp):
            raise InvariantError(f'Frame {self.frame_index} has a non-finite timestamp')

        seen = set()
        for obj in self.objects:
            if obj.track_id in seen:
                raise InvariantError(
                    f'Duplicate track_id {obj.track_id} in frame {self.frame_index}'
                )
            seen.add(obj.track_id)


@dataclass(frozen=True)
class Sequence:
    sequence_id: str
    fps: float
    frames: tuple[Frame, ...]

    def __post_init__(self):
        object.__setattr__(self, 'frames', tuple(self.frames))
        if not self.sequence_id or any(c.isspace() for c in self.sequence_id):
            raise InvariantError(f'Invalid sequence_id {self.sequence_id!r}')
        if not (self.fps > 0):
            raise InvariantError(f'fps must be positive, got {self.fps}')
        if not self.frames:
            raise InvariantError(f'Sequence {self.sequence_id} has no frames')

        first = self.frames[0].camera
        for previous, current in zip(self.frames, self.frames[1:]):
            if current.frame_index <= previous.frame_index:
                raise InvariantError(
                    f'frame_index must increase: {previous.frame_index} -> {current.frame_index}'
                )
            if current.timestamp < previous.timestamp:
                raise InvariantError(
                    f'Timestamps decrease at frame {current.frame_index}: '
                    f'{previous.timestamp} -> {current.timestamp}'
                )
        for frame in self.frames:
            camera = frame.camera
            if (camera.image_width, camera.image_height) != (first.image_width, first.image_height):
                raise InvariantError(
                    f'Frame {frame.frame_index} image size {camera.image_width}x'
                    f'{camera.image_height} differs from {first.image_width}x{first.image_height}'
                )

    def frame(self, frame_index: int) -> Frame:
        return self.frames_by_index()[frame_index]

    def frames_by_index(self) -> dict[int, Frame]:
        return {frame.frame_index: frame for frame in self.frames}

    def objects_by_frame(self, class_id: ObjectClass | None = None) -> dict[int, list[AnnotatedObject]]:
        return {
            frame.frame_index: [
                obj for obj in frame.objects if class_id is None or obj.class_id == class_id
            ]
            for frame in self.frames
        }

    def classes(self) -> set[ObjectClass]:
        return {obj.class_id for frame in self.frames for obj in frame.objects}


@dataclass(frozen=True)
class Detection:
    frame_index: int
    class_id: ObjectClass
    score: float
    box: Box3D

    def __post_init__(self):
        object.__setattr__(self, 'class_id', ObjectClass.parse(self.class_id))
        if self.frame_index < 0:
            raise InvariantError(f'frame_index must be >= 0, got {self.frame_index}')
        if not (0.0 <= self.score <= 1.0):
            raise InvariantError(f'Detection score must lie in [0, 1], got {self.score}')

    @property
    def pose(self) -> Pose6DoF:
        return self.box.pose


@dataclass(frozen=True)
class DetectionSet(Mapping):
    """frame_index -> そのフレームの検出結果 (存在しないフレームは検出 0 件)"""

    frames: Mapping[int, tuple[Detection, ...]] = field(default_factory=dict)

    def __post_init__(self):
        frames = {}
        for frame_index in sorted(self.frames):
            detections = tuple(self.frames[frame_index])
            for det in detections:
                if det.frame_index != frame_index:
                    raise InvariantError(
                        f'Detection for frame {det.frame_index} stored under frame {frame_index}'
                    )
            frames[frame_index] = detections
        object.__setattr__(self, 'frames', frames)

    @classmethod
    def from_detections(cls, detections) -> DetectionSet:
        frames: dict[int, list[Detection]] = {}
        for det in detections:
            frames.setdefault(det.frame_index, []).append(det)
        return cls(frames)

    def __getitem__(self, frame_index: int) -> tuple[Detection, ...]:
        return self.frames.get(frame_index, ())

    def __iter__(self) -> Iterator[int]:
        return iter(self.frames)

    def __len__(self) -> int:
        return len(self.frames)

    def __hash__(self):
        return hash(tuple(self.frames.items()))

    def for_class(self, class_id: ObjectClass) -> dict[int, list[Detection]]:
        return {
            frame_index: [det for det in dets if det.class_id == class_id]
            for frame_index, dets in self.frames.items()
        }

    def all(self) -> list[Detection]:
        return [det for dets in self.frames.values() for det in dets]


@dataclass(frozen=True)
class TrackedObject:
    frame_index: int
    track_id: int
    class_id: ObjectClass
    box: Box3D
    score: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, 'class_id', ObjectClass.parse(self.class_id))
        if self.frame_index < 0:
            raise InvariantError(f'frame_index must be >= 0, got {self.frame_index}')
        if self.track_id < 0:
            raise InvariantError(f'track_id must be non-negative, got {self.track_id}')
        if not (0.0 <= self.score <= 1.0):
            raise InvariantError(f'Track score must lie in [0, 1], got {self.score}')

    @property
    def pose(self) -> Pose6DoF:
        return self.box.pose


@dataclass(frozen=True)
class TrackSet:
    """frame_index -> そのフレームで出力されたトラック"""

    frames: Mapping[int, tuple[TrackedObject, ...]] = field(default_factory=dict)

    def __post_init__(self):
        frames = {}
        for frame_index in sorted(self.frames):
            objects = tuple(self.frames[frame_index])
            seen = set()
            for obj in objects:
                if obj.frame_index != frame_index:
                    raise InvariantError(
                        f'Track object for frame {obj.frame_index} stored under frame {frame_index}'
                    )
                if obj.track_id in seen:
                    raise InvariantError(
                        f'Duplicate track_id {obj.track_id} in frame {frame_index}'
                    )
                seen.add(obj.track_id)
            frames[frame_index] = objects
        object.__setattr__(self, 'frames', frames)

    def __hash__(self):
        return hash(tuple(self.frames.items()))

    @classmethod
    def from_objects(cls, objects) -> TrackSet:
        frames: dict[int, list[TrackedObject]] = {}
        for obj in objects:
            frames.setdefault(obj.frame_index, []).append(obj)
        return cls(frames)

    @classmethod
    def from_sequence(cls, sequence: Sequence) -> TrackSet:
        return cls(
            {
                frame.frame_index: tuple(
                    TrackedObject(frame.frame_index, obj.track_id, obj.class_id, obj.box)
                    for obj in frame.objects
                )
                for frame in sequence.frames
            }
        )

    def get(self, frame_index: int) -> tuple[TrackedObject, ...]:
        return self.frames.get(frame_index, ())

    def frame_indices(self) -> list[int]:
        return list(self.frames)

    def all(self) -> list[TrackedObject]:
        return [obj for objs in self.frames.values() for obj in objs]

    def for_class(self, class_id: ObjectClass) -> TrackSet:
        return TrackSet(
            {
                frame_index: tuple(obj for obj in objs if obj.class_id == class_id)
                for frame_index, objs in self.frames.items()
            }
        )

    def to_detections(self) -> DetectionSet:
        return DetectionSet.from_detections(
            Detection(obj.frame_index, obj.class_id, obj.score, obj.box) for obj in self.all()
        )

    def transformed(self, sequence: Sequence, to_world: bool) -> TrackSet:
        """シーケンスの外部パラメータでワールド座標 (またはカメラ座標) に変換"""
        frames = sequence.frames_by_index()
        convert = pose_to_world if to_world else pose_to_camera
        result = {}
        for frame_index, objs in self.frames.items():
            extrinsic = frames[frame_index].extrinsic
            result[frame_index] = tuple(
                TrackedObject(
                    obj.frame_index,
                    obj.track_id,
                    obj.class_id,
                    obj.box.with_pose(convert(obj.pose, extrinsic)),
                    obj.score,
                )
                for obj in objs
            )
        return TrackSet(result)
