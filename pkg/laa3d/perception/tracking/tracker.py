"""距離ゲート付きハンガリアン法による 3D 多物体追跡 (AB3DMOT 方式)

状態は位置と速度のみ。姿勢とサイズは最後に対応した検出結果をそのまま引き継ぐ。
"""

from __future__ import annotations

import logging
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field, fields
from enum import Enum
from typing import Any

import numpy as np

from perception.assignment import CostMatrix, partial_assignment
from perception.config import ClassConfig
from perception.exceptions import InputError, InvariantError
from perception.geometry import Box3D, Pose6DoF, pose_to_camera, pose_to_world
from perception.schema import (
    Detection,
    DetectionSet,
    ObjectClass,
    Sequence,
    TrackedObject,
    TrackSet,
)
from perception.tracking.kalman import KalmanState, kalman_predict, kalman_update

logger = logging.getLogger(__name__)


class TrackStatus(str, Enum):
    TENTATIVE = 'tentative'
    CONFIRMED = 'confirmed'
    DEAD = 'dead'


@dataclass(frozen=True)
class TrackerParams:
    max_age: int = 2
    min_hits: int = 3
    # 指定の無いクラスは ClassConfig の mot_threshold を使う
    gates: Mapping[ObjectClass, float] = field(default_factory=dict)
    process_noise: float = 1.0
    measurement_noise: float = 0.1
    initial_position_variance: float = 10.0
    initial_velocity_variance: float = 100.0

    def __post_init__(self):
        object.__setattr__(
            self, 'gates', {ObjectClass.parse(k): float(v) for k, v in self.gates.items()}
        )
        if self.max_age < 0 or self.min_hits < 1:
            raise InvariantError(
                f'max_age must be >= 0 and min_hits >= 1, got {self.max_age}, {self.min_hits}'
            )
        positive = (
            self.process_noise,
            self.measurement_noise,
            self.initial_position_variance,
            self.initial_velocity_variance,
            *self.gates.values(),
        )
        if not all(v > 0 for v in positive):
            raise InvariantError(f'Tracker noise scales and gates must be positive: {self}')

    @classmethod
    def from_settings(cls, values: Mapping[str, Any]) -> TrackerParams:
        valid = {f.name for f in fields(cls)}
        unknown = set(values) - valid
        if unknown:
            raise InputError(f'Unknown tracker parameters: {sorted(unknown)}')
        return cls(**values)

    def gate(self, class_id: ObjectClass, config: ClassConfig) -> float:
        return self.gates.get(class_id, config[class_id].mot_threshold)


@dataclass
class Track:
    track_id: int | None
    class_id: ObjectClass
    state: KalmanState
    last_box: Box3D
    hits: int = 1
    age: int = 1
    misses: int = 0
    status: TrackStatus = TrackStatus.TENTATIVE
    # 確定前に対応した検出 (確定時にさかのぼって出力する)
    pending: list[TrackedObject] = field(default_factory=list)

    @property
    def alive(self) -> bool:
        return self.status != TrackStatus.DEAD


def _estimate(track: Track, frame_index: int, score: float) -> TrackedObject:
    pose = track.last_box.pose
    x, y, z = (float(v) for v in track.state.position)
    box = track.last_box.with_pose(Pose6DoF(x, y, z, pose.roll, pose.pitch, pose.yaw))
    return TrackedObject(frame_index, track.track_id or 0, track.class_id, box, score)


class Tracker:
    """1 シーケンス分の追跡状態"""

    def __init__(self, params: TrackerParams, config: ClassConfig):
        self.params = params
        self.config = config
        self.tracks: list[Track] = []
        self.output: list[TrackedObject] = []
        self._next_id = 0

    def step(self, frame_index: int, detections: Iterable[Detection], dt: float):
        live = [track for track in self.tracks if track.alive]
        for track in live:
            track.state = kalman_predict(track.state, dt, self.params.process_noise)
            track.age += 1

        detections = list(detections)
        matched_tracks = set()
        for class_id in ObjectClass:
            tracks = [t for t in live if t.class_id == class_id]
            dets = [d for d in detections if d.class_id == class_id]
            if not dets:
                continue
            track_positions = np.array([t.state.position for t in tracks]).reshape(-1, 3)
            det_positions = np.array([d.pose.position for d in dets]).reshape(-1, 3)
            distances = np.linalg.norm(track_positions[:, None] - det_positions[None], axis=2)
            matching = partial_assignment(
                CostMatrix.gated(distances, self.params.gate(class_id, self.config))
            )
            for row, col in matching.pairs:
                self._update(tracks[row], dets[col], frame_index)
                matched_tracks.add(id(tracks[row]))
            for col in matching.unmatched_cols:
                self._birth(dets[col], frame_index)

        for track in live:
            if id(track) in matched_tracks:
                continue
            track.misses += 1
            if track.misses > self.params.max_age:
                track.status = TrackStatus.DEAD
                logger.debug(
                    'Track %s (%s) died at frame %d', track.track_id, track.class_id, frame_index
                )
        # 確定済みの推定は self.output に出力済み。未確定のまま消えたものは捨てる
        self.tracks = [track for track in self.tracks if track.alive]

    def _update(self, track: Track, det: Detection, frame_index: int):
        track.state = kalman_update(track.state, det.pose.position, self.params.measurement_noise)
        track.last_box = det.box
        track.hits += 1
        track.misses = 0
        estimate = _estimate(track, frame_index, det.score)
        if track.status == TrackStatus.CONFIRMED:
            self.output.append(estimate)
            return
        track.pending.append(estimate)
        if track.hits >= self.params.min_hits:
            self._confirm(track)

    def _birth(self, det: Detection, frame_index: int):
        state = KalmanState.initial(
            det.pose.position,
            position_variance=self.params.initial_position_variance,
            velocity_variance=self.params.initial_velocity_variance,
        )
        track = Track(None, det.class_id, state, det.box)
        track.pending.append(_estimate(track, frame_index, det.score))
        self.tracks.append(track)
        if track.hits >= self.params.min_hits:
            self._confirm(track)

    def _confirm(self, track: Track):
        # ID は確定順に振る
        track.track_id = self._next_id
        self._next_id += 1
        track.status = TrackStatus.CONFIRMED
        logger.debug('Track %d (%s) confirmed', track.track_id, track.class_id)
        self.output.extend(
            TrackedObject(o.frame_index, track.track_id, o.class_id, o.box, o.score)
            for o in track.pending
        )
        track.pending.clear()

    def result(self) -> TrackSet:
        return TrackSet.from_objects(
            sorted(self.output, key=lambda o: (o.frame_index, o.track_id))
        )


def run_tracker(
    detections: DetectionSet,
    params: TrackerParams,
    config: ClassConfig,
    timestamps: Mapping[int, float] | None = None,
    fps: float = 1.0,
) -> TrackSet:
    """フレーム順に検出結果を追跡し、確定したトラックを返す

    ``timestamps`` があればそのフレーム集合を処理し、dt は時刻差から求める。
    無ければ検出のある最初から最後のフレームまでを連続に処理し、dt = (フレーム差) / fps。
    """
    if timestamps:
        frame_indices = sorted(timestamps)
    elif len(detections):
        first, last = min(detections), max(detections)
        frame_indices = list(range(first, last + 1))
    else:
        return TrackSet()

    tracker = Tracker(params, config)
    previous = None
    for frame_index in frame_indices:
        if previous is None:
            dt = 1.0 / fps
        elif timestamps and timestamps[frame_index] > timestamps[previous]:
            dt = timestamps[frame_index] - timestamps[previous]
        else:
            dt = (frame_index - previous) / fps
        tracker.step(frame_index, detections[frame_index], dt)
        previous = frame_index
    return tracker.result()


def _convert(detections: DetectionSet, sequence: Sequence, to_world: bool) -> DetectionSet:
    frames = sequence.frames_by_index()
    convert = pose_to_world if to_world else pose_to_camera
    return DetectionSet.from_detections(
        Detection(
            det.frame_index,
            det.class_id,
            det.score,
            det.box.with_pose(convert(det.pose, frames[det.frame_index].extrinsic)),
        )
        for det in detections.all()
    )


def track_sequence(
    detections: DetectionSet,
    params: TrackerParams,
    config: ClassConfig,
    sequence: Sequence | None = None,
    world: bool = False,
    fps: float = 1.0,
) -> TrackSet:
    """シーケンスの時刻と外部パラメータを使って追跡する

    ``world`` のときはワールド座標で追跡し、出力はカメラ座標に戻す。
    """
    if sequence is None:
        if world:
            raise InputError('World-frame tracking needs the sequence extrinsics (--gt)')
        return run_tracker(detections, params, config, fps=fps)

    known = sequence.frames_by_index()
    unknown = sorted(set(detections) - set(known))
    if unknown:
        raise InputError(
            f'Detections reference frames {unknown[:5]} not present in sequence '
            f'{sequence.sequence_id}'
        )
    timestamps = {frame.frame_index: frame.timestamp for frame in sequence.frames}
    if world:
        tracks = run_tracker(
            _convert(detections, sequence, True), params, config, timestamps, sequence.fps
        )
        return tracks.transformed(sequence, to_world=False)
    return run_tracker(detections, params, config, timestamps, sequence.fps)
