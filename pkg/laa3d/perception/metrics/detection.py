"""3D 検出の評価 (距離しきい値の AP, TP 誤差, 検出再現率, ADS)

評価はシーケンスごとの ``ClassTally`` に集計してから結合する。結合は連結と和だけなので
順序に依らず、並列に集計したものをまとめても結果は変わらない。
"""

from __future__ import annotations

import logging
import math
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
import pandas as pd
from scipy.spatial.distance import cdist

from perception.assignment import greedy_match_matrix
from perception.config import ClassConfig, ClassThresholds
from perception.exceptions import (
    BehindCamera,
    EmptyGroundTruth,
    FrameRangeError,
    FullyOutside,
    InvariantError,
)
from perception.geometry import (
    Box2D,
    CameraModel,
    center_distance,
    iou_2d,
    minimal_angle_diff,
    project_box,
)
from perception.schema import AnnotatedObject, Detection, DetectionSet, ObjectClass, Sequence

logger = logging.getLogger(__name__)

IMAGE_IOU_THRESHOLD = 0.1
RECALL_SAMPLES = np.arange(101) / 100
TRIM_MIN_RECALL = 0.1
TRIM_MIN_PRECISION = 0.1


class SizeErrorMode(str, Enum):
    RELATIVE = 'relative'
    ABSOLUTE = 'absolute'


def _by_frame(items) -> dict[int, list]:
    """frame_index -> 要素のリスト。リストが渡されたときは 1 フレームとみなす"""
    if isinstance(items, Mapping):
        return {int(k): list(v) for k, v in items.items()}
    return {0: list(items)}


def _of_class(items: list, class_id: ObjectClass) -> list:
    return [item for item in items if item.class_id == class_id]


def _evaluable(gts: list, class_id: ObjectClass) -> list:
    """画像外 (2D ボックスなし) の GT は評価から除く"""
    return [g for g in _of_class(gts, class_id) if g.box2d is not None]


def _positions(items: list) -> np.ndarray:
    return np.array([[i.pose.x, i.pose.y, i.pose.z] for i in items], dtype=np.float64).reshape(
        -1, 3
    )


# PR 曲線と AP


@dataclass(frozen=True, eq=False)
class PRCurve:
    """スコア降順の (recall, precision) 点列。同点スコアはまとめて 1 点"""

    threshold: float
    recall: np.ndarray
    precision: np.ndarray
    scores: np.ndarray

    def __len__(self):
        return len(self.recall)

    def points(self) -> list[tuple[float, float]]:
        return [(float(r), float(p)) for r, p in zip(self.recall, self.precision)]

    def to_frame(self) -> pd.DataFrame:
        """
        Returns
        -------
        pandas.DataFrame
            columns=['score', 'recall', 'precision']
                score: その点を作るスコアのしきい値,
                recall: 再現率,
                precision: 適合率
        """
        return pd.DataFrame(
            {'score': self.scores, 'recall': self.recall, 'precision': self.precision}
        )


def curve_from_flags(scores, tp_flags, n_gt: int, threshold: float) -> PRCurve:
    if n_gt <= 0:
        raise EmptyGroundTruth('PR curve needs at least one ground truth')
    scores = np.asarray(scores, dtype=np.float64)
    tp_flags = np.asarray(tp_flags, dtype=bool)
    order = np.argsort(-scores, kind='stable')
    scores = scores[order]
    tp_flags = tp_flags[order]
    if len(scores) == 0:
        empty = np.zeros(0)
        return PRCurve(threshold, empty, empty, empty)

    cum_tp = np.cumsum(tp_flags)
    # 同じスコアの最後の位置でのみ点を打つ
    ends = np.flatnonzero(np.append(scores[1:] != scores[:-1], True))
    recall = cum_tp[ends] / n_gt
    precision = cum_tp[ends] / (ends + 1)
    return PRCurve(threshold, recall, precision, scores[ends])


def _center_flags(preds: list, gts: list, threshold: float) -> np.ndarray:
    if not preds:
        return np.zeros(0, dtype=bool)
    distances = cdist(_positions(preds), _positions(gts)) if gts else np.zeros((len(preds), 0))
    matching = greedy_match_matrix([p.score for p in preds], distances, threshold)
    flags = np.zeros(len(preds), dtype=bool)
    for row, _ in matching.pairs:
        flags[row] = True
    return flags


def pr_curve(preds, gts, class_id: ObjectClass, threshold: float) -> PRCurve:
    """中心距離 ``threshold`` 以内を TP とするフレームごとの貪欲マッチングから PR 曲線を作る"""
    class_id = ObjectClass.parse(class_id)
    pred_frames = _by_frame(preds)
    gt_frames = {k: _evaluable(v, class_id) for k, v in _by_frame(gts).items()}
    n_gt = sum(len(objs) for objs in gt_frames.values())
    if n_gt == 0:
        raise EmptyGroundTruth(f'No ground truth of class {class_id}')

    scores, flags = [], []
    for frame_index in sorted(pred_frames):
        frame_preds = _of_class(pred_frames[frame_index], class_id)
        frame_gts = gt_frames.get(frame_index, [])
        scores.extend(p.score for p in frame_preds)
        flags.append(_center_flags(frame_preds, frame_gts, threshold))
    flags = np.concatenate(flags) if flags else np.zeros(0, dtype=bool)
    return curve_from_flags(scores, flags, n_gt, threshold)


def average_precision(curve: PRCurve, trim: bool = False) -> float:
    """101 点補間 AP (各 recall 以上での最大 precision の平均)

    ``trim=True`` では recall 10% 以下と precision 10% 以下を除いて正規化する。
    """
    if len(curve) == 0:
        return 0.0
    envelope = np.maximum.accumulate(curve.precision[::-1])[::-1]
    index = np.searchsorted(curve.recall, RECALL_SAMPLES, side='left')
    reachable = index < len(curve)
    sampled = np.where(reachable, envelope[np.minimum(index, len(curve) - 1)], 0.0)
    if not trim:
        return float(sampled.mean())

    tail = sampled[round(100 * TRIM_MIN_RECALL) + 1 :] - TRIM_MIN_PRECISION
    return float(np.clip(tail, 0.0, None).mean() / (1.0 - TRIM_MIN_PRECISION))


@dataclass(frozen=True, eq=False)
class ClassAP:
    class_id: ObjectClass
    ap_per_threshold: tuple[float, ...]
    class_ap: float
    curves: tuple[PRCurve, ...]


def class_ap(
    preds, gts, class_id: ObjectClass, config: ClassConfig, trim: bool = False
) -> ClassAP:
    """クラスの 4 つの距離しきい値での AP の平均 (%)"""
    class_id = ObjectClass.parse(class_id)
    curves = tuple(pr_curve(preds, gts, class_id, t) for t in config[class_id].ap_thresholds)
    aps = tuple(average_precision(c, trim) for c in curves)
    return ClassAP(class_id, aps, 100.0 * float(np.mean(aps)), curves)


# 画像上の TP と TP 誤差


def _gt_box2d(obj: AnnotatedObject, camera: CameraModel) -> Box2D | None:
    if obj.box2d is not None:
        return obj.box2d
    try:
        return project_box(camera, obj.box)
    except (BehindCamera, FullyOutside):
        return None


def _camera_for(cameras, frame_index: int) -> CameraModel:
    if isinstance(cameras, CameraModel):
        return cameras
    return cameras[frame_index]


def match_frame_image(preds: list, gts: list, camera: CameraModel) -> list[tuple]:
    gt_boxes = [(g, _gt_box2d(g, camera)) for g in gts]
    gt_boxes = [(g, b) for g, b in gt_boxes if b is not None]
    if not preds or not gt_boxes:
        return []

    # 距離 = -IoU とし、gate -0.1 以下 (IoU >= 0.1) を候補にする
    distances = np.full((len(preds), len(gt_boxes)), np.inf)
    for i, pred in enumerate(preds):
        try:
            pred_box = project_box(camera, pred.box)
        except (BehindCamera, FullyOutside):
            continue
        for j, (_, gt_box) in enumerate(gt_boxes):
            distances[i, j] = -iou_2d(pred_box, gt_box)
    matching = greedy_match_matrix([p.score for p in preds], distances, -IMAGE_IOU_THRESHOLD)
    return [(preds[i], gt_boxes[j][0]) for i, j in matching.pairs]


def match_tp_image(preds, gts, cameras) -> list[tuple[Detection, AnnotatedObject]]:
    """投影した 2D ボックスの IoU >= 0.1 でスコア順に貪欲マッチング (クラスは呼び出し側で揃える)"""
    pred_frames = _by_frame(preds)
    gt_frames = _by_frame(gts)
    pairs = []
    for frame_index in sorted(pred_frames):
        pairs.extend(
            match_frame_image(
                pred_frames[frame_index],
                gt_frames.get(frame_index, []),
                _camera_for(cameras, frame_index),
            )
        )
    return pairs


def pair_errors(pred, gt, size_mode: SizeErrorMode | str = SizeErrorMode.RELATIVE):
    """1 組の (並進 [m], 回転 [deg], サイズ [% または m]) 誤差"""
    translation = center_distance(pred.pose, gt.pose)
    rotation = (
        sum(minimal_angle_diff(a, b) for a, b in zip(pred.pose.angles, gt.pose.angles)) / 3.0
    )
    pred_size = np.array(pred.box.size)
    gt_size = np.array(gt.box.size)
    if SizeErrorMode(size_mode) is SizeErrorMode.RELATIVE:
        size = 100.0 * float(np.mean(np.abs(pred_size - gt_size) / gt_size))
    else:
        size = float(np.mean(np.abs(pred_size - gt_size)))
    return translation, math.degrees(rotation), size


def size_error_max(thresholds: ClassThresholds, size_mode: SizeErrorMode | str) -> float:
    if SizeErrorMode(size_mode) is SizeErrorMode.RELATIVE:
        return 100.0 * thresholds.tp_max_size
    return thresholds.tp_max_size


@dataclass(frozen=True)
class TPErrors:
    ate: float
    aoe: float
    ase: float
    n_tp: int


def tp_errors(
    pairs,
    class_id: ObjectClass,
    config: ClassConfig,
    size_mode: SizeErrorMode | str = SizeErrorMode.RELATIVE,
) -> TPErrors:
    """TP の平均誤差。TP が無いときは正規化の最大値を返す"""
    thresholds = config[class_id]
    pairs = list(pairs)
    if not pairs:
        logger.debug('No true positives for %s; TP errors pinned at maxima', class_id)
        return TPErrors(
            thresholds.tp_max_translation,
            thresholds.tp_max_rotation,
            size_error_max(thresholds, size_mode),
            0,
        )
    errors = np.array([pair_errors(p, g, size_mode) for p, g in pairs])
    ate, aoe, ase = errors.mean(axis=0)
    return TPErrors(float(ate), float(aoe), float(ase), len(pairs))


def detection_recall(preds, gts, cameras, class_id: ObjectClass) -> float:
    class_id = ObjectClass.parse(class_id)
    gt_frames = {k: _evaluable(v, class_id) for k, v in _by_frame(gts).items()}
    n_gt = sum(len(v) for v in gt_frames.values())
    if n_gt == 0:
        raise EmptyGroundTruth(f'No ground truth of class {class_id}')
    pred_frames = {k: _of_class(v, class_id) for k, v in _by_frame(preds).items()}
    return 100.0 * len(match_tp_image(pred_frames, gt_frames, cameras)) / n_gt


def normalize_error(error: float, error_max: float) -> float:
    return min(error / error_max, 1.0)


# 集計


@dataclass(frozen=True)
class ClassDetectionResult:
    class_id: ObjectClass
    ap_per_threshold: tuple[float, ...]
    class_ap: float
    ate: float
    aoe: float
    ase: float
    dr: float
    n_tp: int = 0
    n_gt: int = 0

    def __post_init__(self):
        object.__setattr__(self, 'class_id', ObjectClass.parse(self.class_id))
        if self.ap_per_threshold and not math.isclose(
            self.class_ap, 100.0 * float(np.mean(self.ap_per_threshold)), abs_tol=1e-9
        ):
            raise InvariantError('class_ap must equal 100 * mean(ap_per_threshold)')

    @classmethod
    def from_components(cls, class_id, class_ap, ate, aoe, ase, dr) -> ClassDetectionResult:
        """公開された表の値のように AP の内訳が無い場合"""
        return cls(class_id, (), class_ap, ate, aoe, ase, dr)


@dataclass(frozen=True)
class AdsReport:
    per_class: dict[ObjectClass, ClassDetectionResult]
    mAP: float
    mATE: float
    mAOE: float
    mASE: float
    mDR: float
    n_ate: float
    n_aoe: float
    n_ase: float
    ads: float

    def __hash__(self):
        return hash((tuple(self.per_class.items()), self.ads))

    def to_frame(self) -> pd.DataFrame:
        """
        Returns
        -------
        pandas.DataFrame
            columns=['class', 'metric', 'value']
                class: クラス名 (全体の値は 'all'),
                metric: 指標名,
                value: 値
        """
        rows = []
        for class_id, result in self.per_class.items():
            for i, ap in enumerate(result.ap_per_threshold):
                rows.append((class_id.value, f'AP@{i}', 100.0 * ap))
            rows.extend(
                [
                    (class_id.value, 'AP', result.class_ap),
                    (class_id.value, 'ATE', result.ate),
                    (class_id.value, 'AOE', result.aoe),
                    (class_id.value, 'ASE', result.ase),
                    (class_id.value, 'DR', result.dr),
                    (class_id.value, 'n_tp', result.n_tp),
                    (class_id.value, 'n_gt', result.n_gt),
                ]
            )
        for metric in ('mAP', 'mATE', 'mAOE', 'mASE', 'mDR', 'n_ate', 'n_aoe', 'n_ase', 'ads'):
            rows.append(('all', metric, getattr(self, metric)))
        return pd.DataFrame(rows, columns=['class', 'metric', 'value'])


def aggregate_ads(
    results,
    config: ClassConfig,
    size_mode: SizeErrorMode | str = SizeErrorMode.RELATIVE,
) -> AdsReport:
    """ADS = (4 mAP + 100 sum(1 - N(mTP)) + mDR) / 8

    TP 誤差はクラスごとに最大値で正規化 (1 で打ち切り) してからクラス平均する。
    """
    if isinstance(results, Mapping):
        results = results.values()
    order = list(ObjectClass)
    per_class = {r.class_id: r for r in sorted(results, key=lambda r: order.index(r.class_id))}
    if not per_class:
        raise EmptyGroundTruth('No class with ground truth to aggregate')

    values = list(per_class.values())
    n_ate = np.mean(
        [normalize_error(r.ate, config[r.class_id].tp_max_translation) for r in values]
    )
    n_aoe = np.mean([normalize_error(r.aoe, config[r.class_id].tp_max_rotation) for r in values])
    n_ase = np.mean(
        [normalize_error(r.ase, size_error_max(config[r.class_id], size_mode)) for r in values]
    )
    m_ap = float(np.mean([r.class_ap for r in values]))
    m_dr = float(np.mean([r.dr for r in values]))
    ads = (4.0 * m_ap + 100.0 * ((1 - n_ate) + (1 - n_aoe) + (1 - n_ase)) + m_dr) / 8.0
    return AdsReport(
        per_class=per_class,
        mAP=m_ap,
        mATE=float(np.mean([r.ate for r in values])),
        mAOE=float(np.mean([r.aoe for r in values])),
        mASE=float(np.mean([r.ase for r in values])),
        mDR=m_dr,
        n_ate=float(n_ate),
        n_aoe=float(n_aoe),
        n_ase=float(n_ase),
        ads=float(ads),
    )


@dataclass(frozen=True, eq=False)
class ClassTally:
    """1 クラス分の集計 (スコア, しきい値ごとの TP フラグ, GT 数, 画像 TP と誤差の和)"""

    class_id: ObjectClass
    thresholds: tuple[float, ...]
    scores: np.ndarray = field(default_factory=lambda: np.zeros(0))
    tp_flags: np.ndarray | None = None
    n_gt: int = 0
    n_image_tp: int = 0
    translation_sum: float = 0.0
    rotation_sum: float = 0.0
    size_sum: float = 0.0

    def __post_init__(self):
        if self.tp_flags is None:
            object.__setattr__(
                self, 'tp_flags', np.zeros((len(self.scores), len(self.thresholds)), dtype=bool)
            )

    def merge(self, other: ClassTally) -> ClassTally:
        if (other.class_id, other.thresholds) != (self.class_id, self.thresholds):
            raise InvariantError('Cannot merge tallies of different classes or thresholds')
        return ClassTally(
            self.class_id,
            self.thresholds,
            np.concatenate([self.scores, other.scores]),
            np.concatenate([self.tp_flags, other.tp_flags]),
            self.n_gt + other.n_gt,
            self.n_image_tp + other.n_image_tp,
            self.translation_sum + other.translation_sum,
            self.rotation_sum + other.rotation_sum,
            self.size_sum + other.size_sum,
        )

    def curves(self) -> list[PRCurve]:
        return [
            curve_from_flags(self.scores, self.tp_flags[:, k], self.n_gt, threshold)
            for k, threshold in enumerate(self.thresholds)
        ]

    def result(
        self,
        config: ClassConfig,
        size_mode: SizeErrorMode | str = SizeErrorMode.RELATIVE,
        trim: bool = False,
    ) -> ClassDetectionResult:
        thresholds = config[self.class_id]
        aps = tuple(average_precision(c, trim) for c in self.curves())
        if self.n_image_tp:
            ate = self.translation_sum / self.n_image_tp
            aoe = self.rotation_sum / self.n_image_tp
            ase = self.size_sum / self.n_image_tp
        else:
            ate = thresholds.tp_max_translation
            aoe = thresholds.tp_max_rotation
            ase = size_error_max(thresholds, size_mode)
        return ClassDetectionResult(
            self.class_id,
            aps,
            100.0 * float(np.mean(aps)),
            ate,
            aoe,
            ase,
            100.0 * self.n_image_tp / self.n_gt,
            self.n_image_tp,
            self.n_gt,
        )


def tally_sequence(
    sequence: Sequence,
    detections: DetectionSet,
    config: ClassConfig,
    size_mode: SizeErrorMode | str = SizeErrorMode.RELATIVE,
    classes: Iterable[ObjectClass] | None = None,
) -> dict[ObjectClass, ClassTally]:
    """1 シーケンス分の検出結果をクラスごとに集計 (2D ボックスの無い GT は対象外)"""
    frames = sequence.frames_by_index()
    outside = sorted(set(detections) - set(frames))
    if outside:
        raise FrameRangeError(
            f'Detections reference frames {outside[:5]} absent from sequence {sequence.sequence_id}'
        )

    tallies = {}
    for class_id in classes or list(config):
        thresholds = config[class_id].ap_thresholds
        scores, flags = [], []
        n_gt = n_tp = 0
        sums = np.zeros(3)
        for frame in sequence.frames:
            gts = _evaluable(frame.objects, class_id)
            preds = _of_class(list(detections[frame.frame_index]), class_id)
            n_gt += len(gts)
            scores.extend(p.score for p in preds)
            flags.append(
                np.stack([_center_flags(preds, gts, t) for t in thresholds], axis=1).reshape(
                    len(preds), len(thresholds)
                )
            )
            for pred, gt in match_frame_image(preds, gts, frame.camera):
                sums += pair_errors(pred, gt, size_mode)
                n_tp += 1
        tallies[class_id] = ClassTally(
            class_id,
            thresholds,
            np.asarray(scores, dtype=np.float64),
            np.concatenate(flags) if flags else None,
            n_gt,
            n_tp,
            *(float(s) for s in sums),
        )
    return tallies


def merge_tallies(tallies: Iterable[dict[ObjectClass, ClassTally]]) -> dict[ObjectClass, ClassTally]:
    merged: dict[ObjectClass, ClassTally] = {}
    for tally in tallies:
        for class_id, class_tally in tally.items():
            merged[class_id] = (
                merged[class_id].merge(class_tally) if class_id in merged else class_tally
            )
    return merged


@dataclass(frozen=True, eq=False)
class DetectionEvaluation:
    report: AdsReport
    curves: dict[tuple[ObjectClass, float], PRCurve]
    excluded: tuple[ObjectClass, ...] = ()


def summarize_tallies(
    tallies: dict[ObjectClass, ClassTally],
    config: ClassConfig,
    size_mode: SizeErrorMode | str = SizeErrorMode.RELATIVE,
    trim: bool = False,
) -> DetectionEvaluation:
    results = {}
    curves = {}
    excluded = []
    for class_id, tally in tallies.items():
        if tally.n_gt == 0:
            logger.info('Class %s has no ground truth; excluded from class means', class_id)
            excluded.append(class_id)
            continue
        results[class_id] = tally.result(config, size_mode, trim)
        for curve in tally.curves():
            curves[(class_id, curve.threshold)] = curve
    report = aggregate_ads(results, config, size_mode)
    return DetectionEvaluation(report, curves, tuple(excluded))


def evaluate_detections(
    pairs: Iterable[tuple[Sequence, DetectionSet]],
    config: ClassConfig,
    size_mode: SizeErrorMode | str = SizeErrorMode.RELATIVE,
    trim: bool = False,
    classes: Iterable[ObjectClass] | None = None,
) -> DetectionEvaluation:
    classes = list(classes) if classes else None
    tallies = merge_tallies(
        tally_sequence(sequence, detections, config, size_mode, classes)
        for sequence, detections in pairs
    )
    return summarize_tallies(tallies, config, size_mode, trim)
