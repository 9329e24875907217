"""合成シナリオからアノテーション付きのシーケンスを生成する

乱数は numpy の ``Generator(Philox(key=seed))`` (カウンタベース) を使う。
値はファイル書き出しと同じ 9 桁に丸めてあり、write -> load で元に戻る。
"""

from __future__ import annotations

import logging

import numpy as np

from perception.exceptions import BehindCamera, DegenerateSpec, FullyOutside
from perception.formats import quantize
from perception.geometry import (
    Box2D,
    Box3D,
    CameraModel,
    Extrinsic,
    Pose6DoF,
    pose_to_camera,
    project_box,
    rotation_from_euler,
)
from perception.schema import AnnotatedObject, Frame, Sequence
from perception.synthgen.scenario import (
    GroupSpec,
    ObjectSpec,
    OrientationRule,
    ScenarioSpec,
    TrajectoryKind,
    TrajectorySpec,
    make_trajectory,
)

logger = logging.getLogger(__name__)

MAX_PLACEMENT_ATTEMPTS = 1000


def random_stream(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=seed))


def _place_group(group: GroupSpec, rng: np.random.Generator) -> list[ObjectSpec]:
    low = np.asarray(group.region_min)
    high = np.asarray(group.region_max)
    starts: list[np.ndarray] = []
    for _ in range(group.count):
        for _ in range(MAX_PLACEMENT_ATTEMPTS):
            candidate = low + (high - low) * rng.random(3)
            if all(np.linalg.norm(candidate - s) >= group.min_spacing for s in starts):
                starts.append(candidate)
                break
        else:
            raise DegenerateSpec(
                f'Could not place {group.count} {group.class_id} objects '
                f'{group.min_spacing} m apart in {group.region_min} .. {group.region_max}'
            )
    return [
        ObjectSpec(
            group.class_id,
            group.size,
            TrajectorySpec(
                TrajectoryKind.LINEAR,
                start=tuple(quantize(v) for v in start),
                velocity=group.velocity,
                orientation=OrientationRule.VELOCITY_ALIGNED,
            ),
            group.fine_class,
        )
        for start in starts
    ]


def expand_objects(spec: ScenarioSpec) -> list[ObjectSpec]:
    """明示された物体のあとに、グループをファイル順に展開した物体を並べる (track_id はこの順)"""
    rng = random_stream(spec.seed)
    objects = list(spec.objects)
    for group in spec.groups:
        objects.extend(_place_group(group, rng))
    return objects


def camera_extrinsic(spec: ScenarioSpec, t: float) -> Extrinsic:
    """時刻 t のワールド -> カメラ変換"""
    camera = spec.camera
    rotation = rotation_from_euler(*camera.angles)
    position = np.asarray(camera.position) + t * np.asarray(camera.velocity)
    matrix = rotation.T
    translation = -matrix @ position
    return Extrinsic(
        tuple(quantize(v) for v in matrix.ravel()),
        tuple(quantize(v) for v in translation),
    )


def _quantized_pose(pose: Pose6DoF) -> Pose6DoF:
    return Pose6DoF(*(quantize(v) for v in (pose.x, pose.y, pose.z, *pose.angles)))


def _box2d(box: Box3D, camera: CameraModel) -> Box2D | None:
    try:
        projected = project_box(camera, box)
    except (BehindCamera, FullyOutside):
        return None
    corners = (projected.u_min, projected.v_min, projected.u_max, projected.v_max)
    return Box2D(*(quantize(v) for v in corners))


def simulate_sequence(spec: ScenarioSpec) -> Sequence:
    """シナリオのすべてのフレームのアノテーションを生成する

    カメラの後ろ (中心の z <= 0) にある物体はそのフレームのアノテーションから外す。
    """
    objects = expand_objects(spec)
    times = spec.frame_times()
    trajectories = [make_trajectory(obj.trajectory, times) for obj in objects]
    sizes = [tuple(quantize(s) for s in obj.size) for obj in objects]
    model = spec.camera.model
    camera = CameraModel(
        *(quantize(v) for v in (model.fx, model.fy, model.cx, model.cy)),
        model.image_width,
        model.image_height,
    )

    frames = []
    for k, t in enumerate(times):
        extrinsic = camera_extrinsic(spec, float(t))
        annotations = []
        for track_id, (obj, (positions, angles)) in enumerate(zip(objects, trajectories)):
            world = Pose6DoF(*(float(v) for v in positions[k]), *(float(a) for a in angles[k]))
            pose = _quantized_pose(pose_to_camera(world, extrinsic))
            if pose.z <= 0:
                logger.info(
                    'Object %d (%s) is behind the camera at frame %d; dropped',
                    track_id,
                    obj.class_id,
                    k,
                )
                continue
            box = Box3D(pose, *sizes[track_id])
            annotations.append(
                AnnotatedObject(obj.class_id, track_id, box, obj.fine_class, _box2d(box, camera))
            )
        frames.append(Frame(k, quantize(t), camera, extrinsic, tuple(annotations)))

    logger.info(
        'Simulated %s: %d frames, %d objects', spec.sequence_id, len(frames), len(objects)
    )
    return Sequence(spec.sequence_id, quantize(spec.fps), tuple(frames))
