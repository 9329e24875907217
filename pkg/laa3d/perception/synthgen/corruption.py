"""GT から検出結果を作り、ノイズ・見逃し・誤検出・ID 入れ替えを加える

加えたイベントはすべて台帳 (CorruptionLedger) に記録するので、sigma = 0 のときの
CLEAR MOT の値は台帳から閉じた形で求まる。乱数の引き順は docs/formats.md を参照。
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
import pandas as pd

from perception.config import ClassConfig, default_class_config
from perception.formats import quantize
from perception.geometry import Box3D, Pose6DoF
from perception.metrics.mot import ClearCounts
from perception.schema import (
    AnnotatedObject,
    Detection,
    DetectionSet,
    Frame,
    ObjectClass,
    Sequence,
    TrackedObject,
    TrackSet,
)
from perception.synthgen.generator import random_stream
from perception.synthgen.scenario import CorruptionModel

logger = logging.getLogger(__name__)

LEDGER_COLUMNS = ['frame_index', 'event', 'class', 'track_id', 'other']
MAX_FP_ATTEMPTS = 100
# 誤検出を置く深度の下限 [m]
FP_MIN_DEPTH = 1.0


class EventKind(str, Enum):
    FALSE_NEGATIVE = 'fn'
    FALSE_POSITIVE = 'fp'
    SWITCH = 'switch'


@dataclass(frozen=True)
class LedgerEvent:
    frame_index: int
    kind: EventKind
    class_id: ObjectClass
    # fn: 見逃した GT, fp: 誤検出のトラック ID, switch: 入れ替えた 2 つの GT
    track_id: int
    other: int = -1


@dataclass(frozen=True)
class CorruptionLedger:
    events: tuple[LedgerEvent, ...]
    # (class, gt track_id) -> [(frame_index, 出力したラベル or None)]
    observations: dict[tuple[ObjectClass, int], tuple[tuple[int, int | None], ...]] = field(
        default_factory=dict
    )

    def __hash__(self):
        return hash(self.events)

    def count(self, kind: EventKind | str, class_id: ObjectClass | None = None) -> int:
        kind = EventKind(kind)
        return sum(
            1
            for e in self.events
            if e.kind is kind and (class_id is None or e.class_id == class_id)
        )

    def expected_clear(self, class_id: ObjectClass | str) -> ClearCounts:
        """台帳から求まる CLEAR MOT の件数

        GT どうしの間隔と誤検出から GT までの距離が MOT しきい値より大きく、
        sigma = 0 のときに ``clear_mot`` の結果と一致する。
        """
        class_id = ObjectClass.parse(class_id)
        n_gt = fn = idsw = frag = 0
        for (c, _), history in sorted(self.observations.items()):
            if c != class_id:
                continue
            last_label = None
            tracked_before = True
            for _, label in history:
                n_gt += 1
                if label is None:
                    fn += 1
                else:
                    if last_label is not None and label != last_label:
                        idsw += 1
                    if last_label is not None and not tracked_before:
                        frag += 1
                    last_label = label
                tracked_before = label is not None
        return ClearCounts(
            n_gt=n_gt,
            n_matches=n_gt - fn,
            fn=fn,
            fp=self.count(EventKind.FALSE_POSITIVE, class_id),
            idsw=idsw,
            frag=frag,
            distance_sum=0.0,
        )

    def to_frame(self) -> pd.DataFrame:
        """
        Returns
        -------
        pandas.DataFrame
            columns=['frame_index', 'event', 'class', 'track_id', 'other']
        """
        return pd.DataFrame(
            [
                (e.frame_index, e.kind.value, e.class_id.value, e.track_id, e.other)
                for e in self.events
            ],
            columns=LEDGER_COLUMNS,
        )


@dataclass(frozen=True, eq=False)
class CorruptionResult:
    detections: DetectionSet
    tracks: TrackSet
    ledger: CorruptionLedger


def _score(base: float, jitter: float, u: float) -> float:
    return float(np.clip(base + jitter * (2.0 * u - 1.0), 0.0, 1.0))


def _ordered(frame: Frame) -> list[AnnotatedObject]:
    order = list(ObjectClass)
    return sorted(frame.objects, key=lambda o: (order.index(o.class_id), o.track_id))


def _sample_fp(
    rng: np.random.Generator,
    frame: Frame,
    class_id: ObjectClass,
    config: ClassConfig,
) -> np.ndarray | None:
    """画像内に写る視錐台から一様に位置を選ぶ (同クラスの GT から MOT しきい値より遠い位置のみ)"""
    camera = frame.camera
    thresholds = config[class_id]
    far = thresholds.depth_range
    gts = np.array(
        [o.pose.position for o in frame.objects if o.class_id == class_id], dtype=np.float64
    ).reshape(-1, 3)
    for _ in range(MAX_FP_ATTEMPTS):
        u, v, s = rng.random(3)
        z = FP_MIN_DEPTH + (far - FP_MIN_DEPTH) * s
        point = np.array(
            [
                (u * camera.image_width - camera.cx) * z / camera.fx,
                (v * camera.image_height - camera.cy) * z / camera.fy,
                z,
            ]
        )
        point = np.array([quantize(p) for p in point])
        if len(gts) == 0 or np.linalg.norm(gts - point, axis=1).min() > thresholds.mot_threshold:
            return point
    return None


def corrupt_detections(
    sequence: Sequence,
    model: CorruptionModel,
    config: ClassConfig | None = None,
    fp_sizes: dict[ObjectClass, tuple[float, float, float]] | None = None,
) -> CorruptionResult:
    """GT から破損させた検出結果・トラック・台帳を作る

    フレームごとの乱数の引き順:
      1. GT ごと (クラス順, track_id 順) に一様乱数 1 つ。idswitch_rate 未満なら
         同じクラスの別の GT から整数乱数 1 つで相手を選び、以降のラベルを入れ替える
      2. GT ごとに見逃し用の一様乱数 1 つ、位置ノイズ用の正規乱数 3 つ、スコア用の一様乱数 1 つ
      3. 誤検出の個数 (ポアソン, 平均 fp_rate)、誤検出ごとにクラス (整数乱数)、
         位置 (一様乱数 3 つ x 試行回数)、スコア (一様乱数 1 つ)
    """
    config = config or default_class_config()
    rng = random_stream(model.seed)

    present = {o.class_id for f in sequence.frames for o in f.objects}
    classes = [c for c in ObjectClass if c in present] or list(ObjectClass)
    sizes = dict(fp_sizes or {})
    for frame in sequence.frames:
        for obj in frame.objects:
            sizes.setdefault(obj.class_id, obj.box.size)

    labels: dict[int, int] = {}
    next_label = 1 + max((o.track_id for f in sequence.frames for o in f.objects), default=-1)
    events: list[LedgerEvent] = []
    observations: dict[tuple[ObjectClass, int], list[tuple[int, int | None]]] = {}
    detections: list[Detection] = []
    tracks: list[TrackedObject] = []

    for frame in sequence.frames:
        objects = _ordered(frame)
        for obj in objects:
            labels.setdefault(obj.track_id, obj.track_id)

        for obj in objects:
            if rng.random() >= model.idswitch_rate:
                continue
            partners = [o for o in objects if o.class_id == obj.class_id and o is not obj]
            if not partners:
                continue
            partner = partners[int(rng.integers(len(partners)))]
            a, b = obj.track_id, partner.track_id
            labels[a], labels[b] = labels[b], labels[a]
            events.append(LedgerEvent(frame.frame_index, EventKind.SWITCH, obj.class_id, a, b))

        for obj in objects:
            dropped = rng.random() < model.fn_rate
            noise = rng.standard_normal(3) * model.position_sigma
            score = _score(model.tp_score, model.score_jitter, rng.random())
            key = (obj.class_id, obj.track_id)
            if dropped:
                events.append(
                    LedgerEvent(
                        frame.frame_index, EventKind.FALSE_NEGATIVE, obj.class_id, obj.track_id
                    )
                )
                observations.setdefault(key, []).append((frame.frame_index, None))
                continue
            pose = obj.pose
            if model.position_sigma > 0:
                x, y, z = (quantize(p) for p in pose.position + noise)
                pose = Pose6DoF(x, y, z, pose.roll, pose.pitch, pose.yaw)
            box = obj.box.with_pose(pose)
            label = labels[obj.track_id]
            detections.append(Detection(frame.frame_index, obj.class_id, score, box))
            tracks.append(TrackedObject(frame.frame_index, label, obj.class_id, box, score))
            observations.setdefault(key, []).append((frame.frame_index, label))

        for _ in range(int(rng.poisson(model.fp_rate))):
            class_id = classes[int(rng.integers(len(classes)))]
            position = _sample_fp(rng, frame, class_id, config)
            score = _score(model.fp_score, model.score_jitter, rng.random())
            if position is None:
                logger.warning(
                    'No free position for a %s false positive in frame %d; skipped',
                    class_id,
                    frame.frame_index,
                )
                continue
            x, y, z = (float(p) for p in position)
            box = Box3D(Pose6DoF(x, y, z), *sizes.get(class_id, (1.0, 1.0, 1.0)))
            detections.append(Detection(frame.frame_index, class_id, score, box))
            tracks.append(TrackedObject(frame.frame_index, next_label, class_id, box, score))
            events.append(
                LedgerEvent(frame.frame_index, EventKind.FALSE_POSITIVE, class_id, next_label)
            )
            next_label += 1

    ledger = CorruptionLedger(
        tuple(events), {key: tuple(history) for key, history in observations.items()}
    )
    logger.info(
        'Corrupted %s: %d FN, %d FP, %d switches',
        sequence.sequence_id,
        ledger.count(EventKind.FALSE_NEGATIVE),
        ledger.count(EventKind.FALSE_POSITIVE),
        ledger.count(EventKind.SWITCH),
    )
    return CorruptionResult(
        DetectionSet.from_detections(detections), TrackSet.from_objects(tracks), ledger
    )
