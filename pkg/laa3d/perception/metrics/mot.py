"""距離ベースの対応付けによる 3D MOT の評価 (CLEAR, identity, HOTA)

クラスごとに独立に評価する。各指標はまず件数 (counts) として集計し、複数シーケンスの
件数を足し合わせてから率を計算する。
"""

from __future__ import annotations

import logging
import math
from collections import Counter
from collections.abc import Iterable
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
import pandas as pd
from scipy.spatial.distance import cdist

from perception.assignment import CostMatrix, maximum_weight_matching, partial_assignment
from perception.config import ClassConfig
from perception.exceptions import EmptyGroundTruth, FrameRangeError
from perception.schema import ObjectClass, Sequence, TrackedObject, TrackSet

logger = logging.getLogger(__name__)

HOTA_ALPHAS = np.arange(1, 20) * 0.05

REPORT_COLUMNS = [
    'sequence_id',
    'class',
    'MOTA',
    'MOTP',
    'MODA',
    'IDSW',
    'Frag',
    'IDF1',
    'IDTP',
    'IDFP',
    'IDFN',
    'HOTA',
    'DetA',
    'AssA',
    'LocA',
]


class Similarity(str, Enum):
    LINEAR = 'linear'
    QUADRATIC = 'quadratic'


def similarity_from_distance(distances, threshold: float, mode=Similarity.LINEAR) -> np.ndarray:
    ratio = np.asarray(distances, dtype=np.float64) / threshold
    if Similarity(mode) is Similarity.QUADRATIC:
        ratio = ratio**2
    return np.clip(1.0 - ratio, 0.0, None)


def _positions(objs) -> np.ndarray:
    return np.array([o.pose.position for o in objs], dtype=np.float64).reshape(-1, 3)


def _distances(gt_objs, pred_objs) -> np.ndarray:
    if not gt_objs or not pred_objs:
        return np.zeros((len(gt_objs), len(pred_objs)))
    return cdist(_positions(gt_objs), _positions(pred_objs))


def _frames(gt: TrackSet, pred: TrackSet) -> list[int]:
    return sorted(set(gt.frame_indices()) | set(pred.frame_indices()))


# CLEAR


@dataclass(frozen=True)
class FrameMatch:
    """1 フレームの対応 (gt_id, pred_id, 距離)"""

    pairs: tuple[tuple[int, int, float], ...]
    n_gt: int
    n_pred: int

    def mapping(self) -> dict[int, int]:
        return {g: p for g, p, _ in self.pairs}


def frame_associate(
    gt_objs: Iterable[TrackedObject],
    pred_objs: Iterable[TrackedObject],
    threshold: float,
    carry: dict[int, int] | None = None,
) -> FrameMatch:
    """前フレームの対応を距離しきい値内なら維持し、残りを最適割当で決める"""
    gt_objs = list(gt_objs)
    pred_objs = list(pred_objs)
    distances = _distances(gt_objs, pred_objs)
    gt_index = {o.track_id: i for i, o in enumerate(gt_objs)}
    pred_index = {o.track_id: j for j, o in enumerate(pred_objs)}

    pairs = []
    used_gt, used_pred = set(), set()
    for gt_id, pred_id in (carry or {}).items():
        i, j = gt_index.get(gt_id), pred_index.get(pred_id)
        if i is None or j is None or distances[i, j] > threshold:
            continue
        pairs.append((i, j))
        used_gt.add(i)
        used_pred.add(j)

    rest_gt = [i for i in range(len(gt_objs)) if i not in used_gt]
    rest_pred = [j for j in range(len(pred_objs)) if j not in used_pred]
    if rest_gt and rest_pred:
        sub = distances[np.ix_(rest_gt, rest_pred)]
        matching = partial_assignment(CostMatrix.gated(sub, threshold))
        pairs.extend((rest_gt[r], rest_pred[c]) for r, c in matching.pairs)

    return FrameMatch(
        tuple(
            sorted(
                (gt_objs[i].track_id, pred_objs[j].track_id, float(distances[i, j]))
                for i, j in pairs
            )
        ),
        len(gt_objs),
        len(pred_objs),
    )


@dataclass(frozen=True)
class ClearCounts:
    n_gt: int = 0
    n_matches: int = 0
    fn: int = 0
    fp: int = 0
    idsw: int = 0
    frag: int = 0
    distance_sum: float = 0.0

    def __add__(self, other: ClearCounts) -> ClearCounts:
        return ClearCounts(
            self.n_gt + other.n_gt,
            self.n_matches + other.n_matches,
            self.fn + other.fn,
            self.fp + other.fp,
            self.idsw + other.idsw,
            self.frag + other.frag,
            self.distance_sum + other.distance_sum,
        )

    @property
    def mota(self) -> float:
        return 100.0 * (1.0 - (self.fn + self.fp + self.idsw) / self.n_gt)

    @property
    def moda(self) -> float:
        return 100.0 * (1.0 - (self.fn + self.fp) / self.n_gt)

    @property
    def motp(self) -> float:
        return self.distance_sum / self.n_matches if self.n_matches else math.nan


def clear_mot(
    gt: TrackSet, pred: TrackSet, class_id: ObjectClass, threshold: float
) -> ClearCounts:
    """CLEAR MOT の件数 (MOTA, MODA, MOTP はプロパティ)"""
    gt = gt.for_class(class_id)
    pred = pred.for_class(class_id)
    n_gt = sum(len(gt.get(f)) for f in gt.frame_indices())
    if n_gt == 0:
        raise EmptyGroundTruth(f'No ground truth of class {class_id} to track')

    carry: dict[int, int] = {}
    last_pred: dict[int, int] = {}
    # gt_id -> 直前に存在したフレームで追跡されていたか
    tracked: dict[int, bool] = {}
    counts = ClearCounts()
    for frame_index in _frames(gt, pred):
        gt_objs = gt.get(frame_index)
        match = frame_associate(gt_objs, pred.get(frame_index), threshold, carry)
        mapping = match.mapping()

        idsw = frag = 0
        for obj in gt_objs:
            gt_id = obj.track_id
            pred_id = mapping.get(gt_id)
            if pred_id is not None:
                if gt_id in last_pred and last_pred[gt_id] != pred_id:
                    idsw += 1
                if gt_id in last_pred and not tracked.get(gt_id, True):
                    frag += 1
                last_pred[gt_id] = pred_id
            tracked[gt_id] = pred_id is not None

        n_matches = len(match.pairs)
        counts = counts + ClearCounts(
            match.n_gt,
            n_matches,
            match.n_gt - n_matches,
            match.n_pred - n_matches,
            idsw,
            frag,
            sum(d for _, _, d in match.pairs),
        )
        carry = mapping
    return counts


# Identity


@dataclass(frozen=True)
class IdentityCounts:
    idtp: int = 0
    idfp: int = 0
    idfn: int = 0

    def __add__(self, other: IdentityCounts) -> IdentityCounts:
        return IdentityCounts(
            self.idtp + other.idtp, self.idfp + other.idfp, self.idfn + other.idfn
        )

    @property
    def idf1(self) -> float:
        denominator = 2 * self.idtp + self.idfp + self.idfn
        return 100.0 * 2 * self.idtp / denominator if denominator else 0.0


def identity_metrics(
    gt: TrackSet, pred: TrackSet, class_id: ObjectClass, threshold: float
) -> IdentityCounts:
    """軌跡単位の最適な対応 (距離しきい値内で共起したフレーム数を最大化) から IDTP/IDFP/IDFN"""
    gt = gt.for_class(class_id)
    pred = pred.for_class(class_id)

    co_occurrence: Counter = Counter()
    n_gt_dets = n_pred_dets = 0
    for frame_index in _frames(gt, pred):
        gt_objs = gt.get(frame_index)
        pred_objs = pred.get(frame_index)
        n_gt_dets += len(gt_objs)
        n_pred_dets += len(pred_objs)
        distances = _distances(gt_objs, pred_objs)
        for i, j in zip(*np.nonzero(distances <= threshold)):
            co_occurrence[(gt_objs[i].track_id, pred_objs[j].track_id)] += 1

    gt_ids = sorted({g for g, _ in co_occurrence})
    pred_ids = sorted({p for _, p in co_occurrence})
    weights = np.zeros((len(gt_ids), len(pred_ids)))
    for (g, p), count in co_occurrence.items():
        weights[gt_ids.index(g), pred_ids.index(p)] = count
    matching = maximum_weight_matching(weights, weights > 0)
    idtp = int(sum(weights[r, c] for r, c in matching.pairs))
    return IdentityCounts(idtp, n_pred_dets - idtp, n_gt_dets - idtp)


# HOTA


@dataclass(frozen=True, eq=False)
class HotaCounts:
    """α ごとの TP/FN/FP と、TP についての A(c) の和・類似度の和"""

    tp: np.ndarray = field(default_factory=lambda: np.zeros(len(HOTA_ALPHAS)))
    fn: np.ndarray = field(default_factory=lambda: np.zeros(len(HOTA_ALPHAS)))
    fp: np.ndarray = field(default_factory=lambda: np.zeros(len(HOTA_ALPHAS)))
    association_sum: np.ndarray = field(default_factory=lambda: np.zeros(len(HOTA_ALPHAS)))
    similarity_sum: np.ndarray = field(default_factory=lambda: np.zeros(len(HOTA_ALPHAS)))

    def __add__(self, other: HotaCounts) -> HotaCounts:
        return HotaCounts(
            self.tp + other.tp,
            self.fn + other.fn,
            self.fp + other.fp,
            self.association_sum + other.association_sum,
            self.similarity_sum + other.similarity_sum,
        )

    @staticmethod
    def _ratio(numerator, denominator) -> np.ndarray:
        return np.divide(
            numerator,
            denominator,
            out=np.zeros(len(HOTA_ALPHAS)),
            where=np.asarray(denominator) > 0,
        )

    @property
    def det_a_alpha(self) -> np.ndarray:
        return self._ratio(self.tp, self.tp + self.fn + self.fp)

    @property
    def ass_a_alpha(self) -> np.ndarray:
        return self._ratio(self.association_sum, self.tp)

    @property
    def loc_a_alpha(self) -> np.ndarray:
        return self._ratio(self.similarity_sum, self.tp)

    @property
    def hota_alpha(self) -> np.ndarray:
        return np.sqrt(self.det_a_alpha * self.ass_a_alpha)

    @property
    def hota(self) -> float:
        return 100.0 * float(self.hota_alpha.mean())

    @property
    def det_a(self) -> float:
        return 100.0 * float(self.det_a_alpha.mean())

    @property
    def ass_a(self) -> float:
        return 100.0 * float(self.ass_a_alpha.mean())

    @property
    def loc_a(self) -> float:
        return 100.0 * float(self.loc_a_alpha.mean())

    def to_frame(self) -> pd.DataFrame:
        """
        Returns
        -------
        pandas.DataFrame
            columns=['alpha', 'HOTA', 'DetA', 'AssA', 'LocA']  (各 α の値, %)
        """
        return pd.DataFrame(
            {
                'alpha': HOTA_ALPHAS,
                'HOTA': 100.0 * self.hota_alpha,
                'DetA': 100.0 * self.det_a_alpha,
                'AssA': 100.0 * self.ass_a_alpha,
                'LocA': 100.0 * self.loc_a_alpha,
            }
        )


def hota(
    gt: TrackSet,
    pred: TrackSet,
    class_id: ObjectClass,
    threshold: float,
    similarity: Similarity | str = Similarity.LINEAR,
) -> HotaCounts:
    """α = 0.05, ..., 0.95 ごとに、類似度 >= α の組から類似度の和が最大の対応を取る"""
    gt = gt.for_class(class_id)
    pred = pred.for_class(class_id)
    frames = _frames(gt, pred)

    gt_counts: Counter = Counter(o.track_id for f in frames for o in gt.get(f))
    pred_counts: Counter = Counter(o.track_id for f in frames for o in pred.get(f))
    n_gt = sum(gt_counts.values())
    n_pred = sum(pred_counts.values())
    per_frame = []
    for frame_index in frames:
        gt_objs = gt.get(frame_index)
        pred_objs = pred.get(frame_index)
        scores = similarity_from_distance(_distances(gt_objs, pred_objs), threshold, similarity)
        per_frame.append((gt_objs, pred_objs, scores))

    tp = np.zeros(len(HOTA_ALPHAS))
    association_sum = np.zeros(len(HOTA_ALPHAS))
    similarity_sum = np.zeros(len(HOTA_ALPHAS))
    for a, alpha in enumerate(HOTA_ALPHAS):
        matches: Counter = Counter()
        for gt_objs, pred_objs, scores in per_frame:
            allowed = (scores >= alpha) & (scores > 0)
            if not allowed.any():
                continue
            matching = maximum_weight_matching(scores, allowed)
            for r, c in matching.pairs:
                matches[(gt_objs[r].track_id, pred_objs[c].track_id)] += 1
                similarity_sum[a] += scores[r, c]
        tp[a] = sum(matches.values())
        for (g, p), tpa in matches.items():
            # A(c) = TPA / (TPA + FNA + FPA)
            fna = gt_counts[g] - tpa
            fpa = pred_counts[p] - tpa
            association_sum[a] += tpa * tpa / (tpa + fna + fpa)

    return HotaCounts(tp, n_gt - tp, n_pred - tp, association_sum, similarity_sum)


# 評価のまとめ


@dataclass(frozen=True, eq=False)
class MotCounts:
    class_id: ObjectClass
    clear: ClearCounts
    identity: IdentityCounts
    hota: HotaCounts

    def __add__(self, other: MotCounts) -> MotCounts:
        return MotCounts(
            self.class_id,
            self.clear + other.clear,
            self.identity + other.identity,
            self.hota + other.hota,
        )

    def row(self, sequence_id: str) -> dict:
        return {
            'sequence_id': sequence_id,
            'class': self.class_id.value,
            'MOTA': self.clear.mota,
            'MOTP': self.clear.motp,
            'MODA': self.clear.moda,
            'IDSW': self.clear.idsw,
            'Frag': self.clear.frag,
            'IDF1': self.identity.idf1,
            'IDTP': self.identity.idtp,
            'IDFP': self.identity.idfp,
            'IDFN': self.identity.idfn,
            'HOTA': self.hota.hota,
            'DetA': self.hota.det_a,
            'AssA': self.hota.ass_a,
            'LocA': self.hota.loc_a,
        }


class EvaluationFrame(str, Enum):
    CAMERA = 'camera'
    WORLD = 'world'


def evaluate_tracking(
    sequence: Sequence,
    tracks: TrackSet,
    config: ClassConfig,
    classes: Iterable[ObjectClass] | None = None,
    frame: EvaluationFrame | str = EvaluationFrame.WORLD,
    similarity: Similarity | str = Similarity.LINEAR,
) -> dict[ObjectClass, MotCounts]:
    """1 シーケンスのトラックをクラスごとに評価 (GT の無いクラスは除外)"""
    frames = sequence.frames_by_index()
    outside = sorted(set(tracks.frame_indices()) - set(frames))
    if outside:
        raise FrameRangeError(
            f'Tracks reference frames {outside[:5]} absent from sequence {sequence.sequence_id}'
        )

    gt = TrackSet.from_sequence(sequence)
    if EvaluationFrame(frame) is EvaluationFrame.WORLD:
        gt = gt.transformed(sequence, to_world=True)
        tracks = tracks.transformed(sequence, to_world=True)

    results = {}
    for class_id in classes or list(config):
        threshold = config[class_id].mot_threshold
        try:
            clear = clear_mot(gt, tracks, class_id, threshold)
        except EmptyGroundTruth:
            logger.info('Sequence %s has no %s ground truth', sequence.sequence_id, class_id)
            continue
        results[class_id] = MotCounts(
            class_id,
            clear,
            identity_metrics(gt, tracks, class_id, threshold),
            hota(gt, tracks, class_id, threshold, similarity),
        )
    return results


def mot_report(per_sequence: dict[str, dict[ObjectClass, MotCounts]]) -> pd.DataFrame:
    """(シーケンス, クラス) ごとの行と、シーケンスを合算した集計行 (sequence_id='all')

    Returns
    -------
    pandas.DataFrame
        columns=REPORT_COLUMNS
    """
    rows = [
        counts.row(sequence_id)
        for sequence_id in sorted(per_sequence)
        for counts in per_sequence[sequence_id].values()
    ]
    totals = merge_counts(per_sequence)
    if not totals:
        raise EmptyGroundTruth('No class with ground truth in any sequence')
    for class_id in ObjectClass:
        if class_id in totals:
            rows.append(totals[class_id].row('all'))
    return pd.DataFrame(rows, columns=REPORT_COLUMNS)


def merge_counts(
    per_sequence: dict[str, dict[ObjectClass, MotCounts]],
) -> dict[ObjectClass, MotCounts]:
    totals: dict[ObjectClass, MotCounts] = {}
    for results in per_sequence.values():
        for class_id, counts in results.items():
            totals[class_id] = totals[class_id] + counts if class_id in totals else counts
    return totals
