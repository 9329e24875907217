"""カルマンフィルタによる軌跡予測と ADE / FDE"""

from __future__ import annotations

import logging
from collections.abc import Sequence as SequenceABC

import numpy as np
import pandas as pd

from perception.exceptions import InsufficientHistory, InvariantError, LengthMismatch
from perception.schema import ObjectClass, Sequence
from perception.tracking.kalman import KalmanState, kalman_predict, kalman_update
from perception.tracking.tracker import TrackerParams

logger = logging.getLogger(__name__)

WINDOW_COLUMNS = ['class', 'track_id', 'start_frame', 'ADE', 'FDE']
TRACK_COLUMNS = ['class', 'track_id', 'skipped']
SUMMARY_COLUMNS = ['class', 'n_tracks', 'n_windows', 'n_skipped', 'ADE', 'FDE']

TrackKey = tuple[ObjectClass, int]


def predict_trajectory(
    times: SequenceABC[float],
    positions,
    horizon: int,
    params: TrackerParams | None = None,
    future_times: SequenceABC[float] | None = None,
) -> np.ndarray:
    """過去の位置から等速度モデルで ``horizon`` ステップ先までの位置を予測する

    最初の 2 点で初期化 (速度は差分) し、残りの点で更新してから予測だけを繰り返す。
    ``future_times`` が無いときの予測間隔は履歴の最後の時刻差。

    Returns
    -------
    numpy.ndarray
        shape=(horizon, 3)
    """
    params = params or TrackerParams()
    times = np.asarray(times, dtype=np.float64)
    positions = np.asarray(positions, dtype=np.float64).reshape(-1, 3)
    if len(times) != len(positions):
        raise LengthMismatch(f'{len(times)} timestamps for {len(positions)} positions')
    if len(positions) < 2:
        raise InsufficientHistory(f'Need at least 2 past positions, got {len(positions)}')
    if np.any(np.diff(times) <= 0):
        raise InvariantError(f'History timestamps must increase strictly: {times.tolist()}')
    if horizon < 1:
        raise InvariantError(f'horizon must be >= 1, got {horizon}')

    dt0 = times[1] - times[0]
    noise = params.measurement_noise
    # 差分で求めた速度の分散は 2 * R / dt^2
    state = KalmanState(
        np.concatenate([positions[1], (positions[1] - positions[0]) / dt0]),
        np.diag([noise] * 3 + [2.0 * noise / dt0**2] * 3),
    )
    for previous, current, position in zip(times[1:], times[2:], positions[2:]):
        state = kalman_predict(state, current - previous, params.process_noise)
        state = kalman_update(state, position, noise)

    if future_times is None:
        step = times[-1] - times[-2]
        future_times = times[-1] + step * np.arange(1, horizon + 1)
    future_times = np.asarray(future_times, dtype=np.float64)
    if len(future_times) != horizon:
        raise LengthMismatch(f'{len(future_times)} future timestamps for horizon {horizon}')

    predicted = np.empty((horizon, 3))
    previous = times[-1]
    for k, t in enumerate(future_times):
        state = kalman_predict(state, t - previous, params.process_noise)
        predicted[k] = state.position
        previous = t
    return predicted


def ade_fde(predicted, ground_truth) -> tuple[float, float]:
    """平均変位誤差 (ADE) と最終変位誤差 (FDE) [m]"""
    predicted = np.asarray(predicted, dtype=np.float64).reshape(-1, 3)
    ground_truth = np.asarray(ground_truth, dtype=np.float64).reshape(-1, 3)
    if len(predicted) != len(ground_truth) or len(predicted) == 0:
        raise LengthMismatch(
            f'Predicted ({len(predicted)}) and ground truth ({len(ground_truth)}) lengths differ '
            'or are empty'
        )
    errors = np.linalg.norm(predicted - ground_truth, axis=1)
    return float(errors.mean()), float(errors[-1])


def _world_tracks(sequence: Sequence) -> dict[TrackKey, list[tuple[int, float, np.ndarray]]]:
    tracks: dict[TrackKey, list] = {}
    for frame in sequence.frames:
        for obj in frame.objects:
            position = frame.extrinsic.camera_to_world(obj.pose.position)
            tracks.setdefault((obj.class_id, obj.track_id), []).append(
                (frame.frame_index, frame.timestamp, position)
            )
    return tracks


def prediction_windows(
    sequence: Sequence,
    history: int = 3,
    horizon: int = 10,
    stride: int = 1,
    params: TrackerParams | None = None,
) -> tuple[pd.DataFrame, pd.DataFrame]:
    """GT トラックごとに history + horizon の窓をずらしながら予測する (ワールド座標)

    Returns
    -------
    windows : pandas.DataFrame
        columns=['class', 'track_id', 'start_frame', 'ADE', 'FDE']
    tracks : pandas.DataFrame
        columns=['class', 'track_id', 'skipped']
    """
    if history < 2 or horizon < 1 or stride < 1:
        raise InvariantError(
            'history >= 2, horizon >= 1 and stride >= 1 required, '
            f'got {history}, {horizon}, {stride}'
        )
    length = history + horizon
    rows, track_rows = [], []
    for (class_id, track_id), observations in sorted(_world_tracks(sequence).items()):
        skipped = len(observations) < length
        track_rows.append((class_id.value, track_id, skipped))
        if skipped:
            logger.info(
                'Track %d (%s) in %s has %d frames, shorter than %d; skipped',
                track_id,
                class_id,
                sequence.sequence_id,
                len(observations),
                length,
            )
            continue
        times = np.array([t for _, t, _ in observations])
        positions = np.array([p for _, _, p in observations])
        for start in range(0, len(observations) - length + 1, stride):
            past = slice(start, start + history)
            future = slice(start + history, start + length)
            predicted = predict_trajectory(
                times[past], positions[past], horizon, params, future_times=times[future]
            )
            ade, fde = ade_fde(predicted, positions[future])
            rows.append((class_id.value, track_id, observations[start][0], ade, fde))
    return (
        pd.DataFrame(rows, columns=WINDOW_COLUMNS),
        pd.DataFrame(track_rows, columns=TRACK_COLUMNS),
    )


def summarize_prediction(windows: pd.DataFrame, tracks: pd.DataFrame) -> pd.DataFrame:
    """クラスごとと全体 ('all') の ADE / FDE

    Returns
    -------
    pandas.DataFrame
        columns=['class', 'n_tracks', 'n_windows', 'n_skipped', 'ADE', 'FDE']
            ADE, FDE: 窓の平均 [m] (窓が無いときは NaN)
    """
    rows = []
    groups = [
        (c.value, windows['class'] == c.value, tracks['class'] == c.value) for c in ObjectClass
    ]
    groups.append(('all', windows['class'].notna(), tracks['class'].notna()))
    for name, window_mask, track_mask in groups:
        selected = windows[window_mask]
        counted = tracks[track_mask]
        if name != 'all' and counted.empty:
            continue
        rows.append(
            (
                name,
                len(counted),
                len(selected),
                int(counted['skipped'].sum()),
                selected['ADE'].mean() if len(selected) else np.nan,
                selected['FDE'].mean() if len(selected) else np.nan,
            )
        )
    return pd.DataFrame(rows, columns=SUMMARY_COLUMNS)


def evaluate_prediction(
    sequences: SequenceABC[Sequence],
    history: int = 3,
    horizon: int = 10,
    stride: int = 1,
    params: TrackerParams | None = None,
) -> pd.DataFrame:
    """複数シーケンスの窓をまとめて集計する (列は summarize_prediction と同じ)"""
    windows, tracks = [], []
    for sequence in sequences:
        w, t = prediction_windows(sequence, history, horizon, stride, params)
        windows.append(w)
        tracks.append(t)
    if not windows:
        return summarize_prediction(
            pd.DataFrame(columns=WINDOW_COLUMNS), pd.DataFrame(columns=TRACK_COLUMNS)
        )
    return summarize_prediction(
        pd.concat(windows, ignore_index=True), pd.concat(tracks, ignore_index=True)
    )
