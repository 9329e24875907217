"""6-DoF 姿勢推定の評価 (ADD / ADD-S と直径 50% での正解率)"""

from __future__ import annotations

import logging
from collections.abc import Iterable

import numpy as np
import pandas as pd
from scipy.spatial import cKDTree

from perception.geometry import Pose6DoF, box_model_points, model_diameter
from perception.metrics.detection import match_frame_image
from perception.schema import DetectionSet, ObjectClass, Sequence

logger = logging.getLogger(__name__)

INSTANCE_COLUMNS = ['sequence_id', 'frame_index', 'class', 'track_id', 'add', 'adds', 'diameter']
INSTANCE_DTYPES = {
    'frame_index': 'int64',
    'track_id': 'int64',
    'add': 'float64',
    'adds': 'float64',
    'diameter': 'float64',
}


def _transform(points: np.ndarray, pose: Pose6DoF) -> np.ndarray:
    return points @ pose.rotation().T + pose.position


def add_error(model_points, pose_pred: Pose6DoF, pose_gt: Pose6DoF) -> float:
    """対応する点どうしの距離の平均"""
    points = np.asarray(model_points, dtype=np.float64).reshape(-1, 3)
    pred = _transform(points, pose_pred)
    gt = _transform(points, pose_gt)
    return float(np.mean(np.linalg.norm(pred - gt, axis=1)))


def adds_error(model_points, pose_pred: Pose6DoF, pose_gt: Pose6DoF) -> float:
    """各予測点から最も近い GT 点までの距離の平均 (対称物体向け)"""
    points = np.asarray(model_points, dtype=np.float64).reshape(-1, 3)
    pred = _transform(points, pose_pred)
    gt = _transform(points, pose_gt)
    distances, _ = cKDTree(gt).query(pred)
    return float(np.mean(distances))


def pose_accuracy_at_half_diameter(errors, diameter) -> float:
    """誤差が直径の 50% 未満のインスタンスの割合 (%)"""
    errors = np.asarray(errors, dtype=np.float64)
    if errors.size == 0:
        return 0.0
    diameter = np.broadcast_to(np.asarray(diameter, dtype=np.float64), errors.shape)
    return 100.0 * float(np.mean(errors < 0.5 * diameter))


def pose_instances(
    sequence: Sequence,
    detections: DetectionSet,
    classes: Iterable[ObjectClass],
) -> pd.DataFrame:
    """GT ごとの ADD / ADD-S

    画像上の TP マッチングで予測と対応付け、対応の無い GT は誤差 inf とする。
    モデル点群は GT ボックスの 8 頂点と中心。

    Returns
    -------
    pandas.DataFrame
        columns=['sequence_id', 'frame_index', 'class', 'track_id', 'add', 'adds', 'diameter']
    """
    rows = []
    for class_id in classes:
        for frame in sequence.frames:
            gts = [o for o in frame.objects if o.class_id == class_id and o.box2d is not None]
            preds = [d for d in detections[frame.frame_index] if d.class_id == class_id]
            matched = {id(gt): pred for pred, gt in match_frame_image(preds, gts, frame.camera)}
            for gt in gts:
                points = box_model_points(gt.box)
                pred = matched.get(id(gt))
                if pred is None:
                    add = adds = np.inf
                else:
                    add = add_error(points, pred.pose, gt.pose)
                    adds = adds_error(points, pred.pose, gt.pose)
                rows.append(
                    (
                        sequence.sequence_id,
                        frame.frame_index,
                        class_id.value,
                        gt.track_id,
                        add,
                        adds,
                        model_diameter(points),
                    )
                )
    return pd.DataFrame(rows, columns=INSTANCE_COLUMNS).astype(INSTANCE_DTYPES)


def summarize_poses(instances: pd.DataFrame) -> pd.DataFrame:
    """クラスごとの ADD / ADD-S の 50% 直径正解率

    Returns
    -------
    pandas.DataFrame
        columns=['class', 'n_instances', 'n_matched', 'add_accuracy', 'adds_accuracy',
                 'mean_add', 'mean_adds']
            add_accuracy, adds_accuracy: 直径の 50% 未満の割合 (%),
            mean_add, mean_adds: 対応の取れたインスタンスでの平均誤差 [m]
    """
    rows = []
    for class_id in ObjectClass:
        group = instances[instances['class'] == class_id.value]
        if group.empty:
            continue
        matched = group[np.isfinite(group['add'])]
        rows.append(
            {
                'class': class_id.value,
                'n_instances': len(group),
                'n_matched': len(matched),
                'add_accuracy': pose_accuracy_at_half_diameter(group['add'], group['diameter']),
                'adds_accuracy': pose_accuracy_at_half_diameter(group['adds'], group['diameter']),
                'mean_add': matched['add'].mean() if len(matched) else np.nan,
                'mean_adds': matched['adds'].mean() if len(matched) else np.nan,
            }
        )
    return pd.DataFrame(
        rows,
        columns=[
            'class',
            'n_instances',
            'n_matched',
            'add_accuracy',
            'adds_accuracy',
            'mean_add',
            'mean_adds',
        ],
    )


def evaluate_poses(
    pairs: Iterable[tuple[Sequence, DetectionSet]],
    classes: Iterable[ObjectClass] | None = None,
) -> pd.DataFrame:
    classes = list(classes or ObjectClass)
    instances = [pose_instances(sequence, detections, classes) for sequence, detections in pairs]
    if not instances:
        return summarize_poses(pd.DataFrame(columns=INSTANCE_COLUMNS).astype(INSTANCE_DTYPES))
    return summarize_poses(pd.concat(instances, ignore_index=True))
