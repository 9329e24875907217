"""シーケンス・検出結果・トラックのテキストファイル入出力

どのファイルも 1 行目がバージョン付きヘッダで、以降はタブ区切りのレコード。
数値は有効数字 9 桁で書き出す。文法の詳細は docs/formats.md を参照。
"""

from __future__ import annotations

import csv
import io
import logging
import math
from pathlib import Path

import numpy as np
import pandas as pd

from perception.exceptions import (
    BehindCamera,
    FullyOutside,
    InputError,
    InvariantError,
    ParseError,
    SchemaError,
    ScoreRangeError,
)
from perception.geometry import Box2D, Box3D, CameraModel, Extrinsic, Pose6DoF, project_box
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

logger = logging.getLogger(__name__)

SEQUENCE_HEADER = 'LAA3D-SEQ v1'
DETECTION_HEADER = 'LAA3D-DET v1'
TRACK_HEADER = 'LAA3D-TRK v1'

POSE_COLUMNS = ['x', 'y', 'z', 'roll', 'pitch', 'yaw', 'length', 'width', 'height']
DETECTION_COLUMNS = ['frame_index', 'class_id', 'score', *POSE_COLUMNS]
TRACK_COLUMNS = ['frame_index', 'track_id', 'class_id', 'score', *POSE_COLUMNS]

_SEQ_FIELDS = 3
_FRAME_FIELDS = 21
_OBJ_FIELDS = 17
_MISSING = '-'


def format_number(value: float) -> str:
    return format(float(value), '.9g')


def quantize(value: float) -> float:
    """ファイルに書き出したときと同じ精度に丸める"""
    return float(format_number(value))


def _read_lines(path: Path) -> list[tuple[int, str]]:
    if not path.exists():
        raise InputError(f'`{path}` not found. Please check the input path.')
    lines = []
    with path.open('rb') as f:
        for number, raw in enumerate(f, start=1):
            try:
                line = raw.decode('utf-8').rstrip('\r\n')
            except UnicodeDecodeError as e:
                raise ParseError(f'invalid UTF-8: {e.reason}', number, str(path))
            if line.strip():
                lines.append((number, line))
    return lines


def _check_header(lines: list[tuple[int, str]], header: str, path: Path):
    number, first = lines[0]
    if first.strip() != header:
        raise ParseError(f'expected header {header!r}, got {first!r}', number, str(path))


def _float(text: str, name: str, number: int, path: Path) -> float:
    try:
        value = float(text)
    except ValueError:
        raise ParseError(f'{name} is not a number: {text!r}', number, str(path))
    if not math.isfinite(value):
        raise ParseError(f'{name} is not finite: {text!r}', number, str(path))
    return value


def _int(text: str, name: str, number: int, path: Path) -> int:
    try:
        return int(text)
    except ValueError:
        raise ParseError(f'{name} is not an integer: {text!r}', number, str(path))


def _class(text: str, number: int, path: Path) -> ObjectClass:
    try:
        return ObjectClass.parse(text)
    except InvariantError as e:
        raise ParseError(str(e), number, str(path))


# シーケンス


def load_sequence(path: Path | str) -> Sequence:
    """シーケンスファイルを読み込み、全ての不変条件を検査した Sequence を返す"""
    path = Path(path)
    lines = _read_lines(path)
    if not lines:
        raise SchemaError('empty sequence file', None, str(path))
    _check_header(lines, SEQUENCE_HEADER, path)

    header = None
    frames: list[dict] = []
    for number, line in lines[1:]:
        fields = line.split('\t')
        record = fields[0]
        if record == 'SEQ':
            if header is not None:
                raise ParseError('duplicate SEQ record', number, str(path))
            if len(fields) != _SEQ_FIELDS:
                raise SchemaError(
                    f'SEQ record needs {_SEQ_FIELDS} fields, got {len(fields)}', number, str(path)
                )
            header = (fields[1], _float(fields[2], 'fps', number, path))
        elif record == 'FRAME':
            if header is None:
                raise SchemaError('FRAME record before SEQ record', number, str(path))
            frames.append(_parse_frame(fields, number, path))
        elif record == 'OBJ':
            if not frames:
                raise SchemaError('OBJ record before any FRAME record', number, str(path))
            frames[-1]['objects'].append(_parse_object(fields, frames[-1], number, path))
        else:
            raise ParseError(f'unknown record type {record!r}', number, str(path))

    if header is None:
        raise SchemaError('missing SEQ record', None, str(path))

    built = []
    for raw in frames:
        try:
            built.append(
                Frame(
                    raw['frame_index'],
                    raw['timestamp'],
                    raw['camera'],
                    raw['extrinsic'],
                    tuple(raw['objects']),
                )
            )
        except InvariantError as e:
            raise InvariantError(f'{path}:{raw["line"]}: {e}')
    try:
        return Sequence(header[0], header[1], tuple(built))
    except InvariantError as e:
        raise InvariantError(f'{path}: {e}')


def _parse_frame(fields: list[str], number: int, path: Path) -> dict:
    if len(fields) != _FRAME_FIELDS:
        raise SchemaError(
            f'FRAME record needs {_FRAME_FIELDS} fields, got {len(fields)}', number, str(path)
        )
    frame_index = _int(fields[1], 'frame_index', number, path)
    timestamp = _float(fields[2], 'timestamp', number, path)
    fx, fy, cx, cy = (_float(v, 'intrinsic', number, path) for v in fields[3:7])
    width = _int(fields[7], 'image_width', number, path)
    height = _int(fields[8], 'image_height', number, path)
    rotation = tuple(_float(v, 'rotation', number, path) for v in fields[9:18])
    translation = tuple(_float(v, 'translation', number, path) for v in fields[18:21])
    try:
        camera = CameraModel(fx, fy, cx, cy, width, height)
        extrinsic = Extrinsic(rotation, translation)
    except InvariantError as e:
        raise ParseError(str(e), number, str(path))
    return {
        'line': number,
        'frame_index': frame_index,
        'timestamp': timestamp,
        'camera': camera,
        'extrinsic': extrinsic,
        'objects': [],
    }


def _parse_box(fields: list[str], number: int, path: Path) -> Box3D:
    x, y, z, roll, pitch, yaw, length, width, height = (
        _float(v, name, number, path) for v, name in zip(fields, POSE_COLUMNS)
    )
    try:
        return Box3D(Pose6DoF(x, y, z, roll, pitch, yaw), length, width, height)
    except InvariantError as e:
        raise ParseError(str(e), number, str(path))


def _parse_object(fields: list[str], frame: dict, number: int, path: Path) -> AnnotatedObject:
    if len(fields) != _OBJ_FIELDS:
        raise SchemaError(
            f'OBJ record needs {_OBJ_FIELDS} fields, got {len(fields)}', number, str(path)
        )
    class_id = _class(fields[1], number, path)
    fine_class = fields[2]
    track_id = _int(fields[3], 'track_id', number, path)
    box = _parse_box(fields[4:13], number, path)

    raw_box2d = fields[13:17]
    try:
        if all(v == _MISSING for v in raw_box2d):
            # 2D ボックスが無いときは投影し直す (画像外なら None のまま)
            try:
                box2d = project_box(frame['camera'], box)
            except (BehindCamera, FullyOutside):
                box2d = None
        else:
            box2d = Box2D(*(_float(v, 'box2d', number, path) for v in raw_box2d))
        return AnnotatedObject(class_id, track_id, box, fine_class, box2d)
    except InvariantError as e:
        raise ParseError(str(e), number, str(path))


def _pose_fields(box: Box3D) -> list[str]:
    pose = box.pose
    values = (pose.x, pose.y, pose.z, pose.roll, pose.pitch, pose.yaw, *box.size)
    return [format_number(v) for v in values]


def write_sequence(sequence: Sequence, path: Path | str) -> Path:
    # 書き込み前に不変条件を再検査する
    sequence = Sequence(sequence.sequence_id, sequence.fps, sequence.frames)

    lines = [SEQUENCE_HEADER, '\t'.join(['SEQ', sequence.sequence_id, format_number(sequence.fps)])]
    for frame in sequence.frames:
        camera = frame.camera
        lines.append(
            '\t'.join(
                [
                    'FRAME',
                    str(frame.frame_index),
                    format_number(frame.timestamp),
                    *(format_number(v) for v in (camera.fx, camera.fy, camera.cx, camera.cy)),
                    str(camera.image_width),
                    str(camera.image_height),
                    *(format_number(v) for v in frame.extrinsic.rotation),
                    *(format_number(v) for v in frame.extrinsic.translation),
                ]
            )
        )
        for obj in frame.objects:
            if obj.box2d is None:
                box2d = [_MISSING] * 4
            else:
                b = obj.box2d
                box2d = [format_number(v) for v in (b.u_min, b.v_min, b.u_max, b.v_max)]
            lines.append(
                '\t'.join(
                    [
                        'OBJ',
                        obj.class_id.value,
                        obj.fine_class,
                        str(obj.track_id),
                        *_pose_fields(obj.box),
                        *box2d,
                    ]
                )
            )
    path = Path(path)
    path.write_text('\n'.join(lines) + '\n', encoding='utf-8')
    return path


# 検出結果・トラック


def _read_table(path: Path, header: str, columns: list[str]) -> tuple[pd.DataFrame, list[int]]:
    """ヘッダ以降をタブ区切りの表として読む

    Returns
    -------
    pandas.DataFrame
        columns=columns (全て文字列)
    list[int]
        各行のファイル上の行番号
    """
    lines = _read_lines(path)
    # 0 バイトのファイルは空として扱う
    if not lines:
        return pd.DataFrame(columns=columns, dtype=str), []
    _check_header(lines, header, path)
    body = lines[1:]
    if not body:
        return pd.DataFrame(columns=columns, dtype=str), []

    for number, line in body:
        n_fields = line.count('\t') + 1
        if n_fields != len(columns):
            raise SchemaError(
                f'expected {len(columns)} fields per record, got {n_fields}', number, str(path)
            )

    line_numbers = [number for number, _ in body]
    text = '\n'.join(line for _, line in body)
    try:
        df = pd.read_csv(
            io.StringIO(text),
            sep='\t',
            header=None,
            dtype=str,
            keep_default_na=False,
            skip_blank_lines=False,
            quoting=csv.QUOTE_NONE,
        )
    except pd.errors.ParserError as e:
        raise ParseError(f'malformed record: {e}', None, str(path))

    if df.shape[1] != len(columns):
        raise SchemaError(
            f'expected {len(columns)} fields per record, got {df.shape[1]}',
            line_numbers[0],
            str(path),
        )
    df.columns = columns
    missing = df.isna() | (df == '')
    if missing.to_numpy().any():
        row = int(missing.any(axis=1).to_numpy().argmax())
        column = missing.columns[missing.iloc[row].to_numpy().argmax()]
        raise SchemaError(f'missing field {column!r}', line_numbers[row], str(path))
    return df, line_numbers


def _to_numeric(df: pd.DataFrame, column: str, line_numbers: list[int], path: Path, integer=False):
    values = pd.to_numeric(df[column], errors='coerce')
    bad = ~np.isfinite(values.to_numpy(dtype=np.float64))
    if integer:
        bad |= np.nan_to_num(values.to_numpy(dtype=np.float64)) % 1 != 0
    if bad.any():
        row = int(bad.argmax())
        kind = 'an integer' if integer else 'a number'
        raise ParseError(
            f'{column} is not {kind}: {df[column].iloc[row]!r}', line_numbers[row], str(path)
        )
    return values.astype('int64') if integer else values.astype('float64')


def _parse_table(df: pd.DataFrame, line_numbers: list[int], path: Path, integer_columns):
    parsed = pd.DataFrame(index=df.index)
    for column in df.columns:
        if column == 'class_id':
            parsed[column] = df[column]
            continue
        parsed[column] = _to_numeric(
            df, column, line_numbers, path, integer=column in integer_columns
        )

    out_of_range = (parsed['score'] < 0) | (parsed['score'] > 1)
    if out_of_range.any():
        row = int(out_of_range.to_numpy().argmax())
        raise ScoreRangeError(
            f'score must lie in [0, 1], got {df["score"].iloc[row]}', line_numbers[row], str(path)
        )
    return parsed


def _box_from_row(row, number: int, path: Path) -> Box3D:
    try:
        return Box3D(
            Pose6DoF(row.x, row.y, row.z, row.roll, row.pitch, row.yaw),
            row.length,
            row.width,
            row.height,
        )
    except InvariantError as e:
        raise ParseError(str(e), number, str(path))


def load_detections(path: Path | str) -> DetectionSet:
    """検出ファイルを読み込む。検出の無いフレームは省略されていてよい"""
    path = Path(path)
    df, line_numbers = _read_table(path, DETECTION_HEADER, DETECTION_COLUMNS)
    if df.empty:
        return DetectionSet()
    parsed = _parse_table(df, line_numbers, path, integer_columns={'frame_index'})

    detections = []
    for row, number in zip(parsed.itertuples(index=False), line_numbers):
        try:
            detections.append(
                Detection(
                    int(row.frame_index),
                    _class(row.class_id, number, path),
                    float(row.score),
                    _box_from_row(row, number, path),
                )
            )
        except InvariantError as e:
            raise ParseError(str(e), number, str(path))
    return DetectionSet.from_detections(detections)


def write_detections(detections: DetectionSet, path: Path | str) -> Path:
    lines = [DETECTION_HEADER]
    for det in detections.all():
        lines.append(
            '\t'.join(
                [
                    str(det.frame_index),
                    det.class_id.value,
                    format_number(det.score),
                    *_pose_fields(det.box),
                ]
            )
        )
    path = Path(path)
    path.write_text('\n'.join(lines) + '\n', encoding='utf-8')
    return path


def load_tracks(path: Path | str) -> TrackSet:
    path = Path(path)
    df, line_numbers = _read_table(path, TRACK_HEADER, TRACK_COLUMNS)
    if df.empty:
        return TrackSet()
    parsed = _parse_table(df, line_numbers, path, integer_columns={'frame_index', 'track_id'})

    objects = []
    for row, number in zip(parsed.itertuples(index=False), line_numbers):
        try:
            objects.append(
                TrackedObject(
                    int(row.frame_index),
                    int(row.track_id),
                    _class(row.class_id, number, path),
                    _box_from_row(row, number, path),
                    float(row.score),
                )
            )
        except InvariantError as e:
            raise ParseError(str(e), number, str(path))
    try:
        return TrackSet.from_objects(objects)
    except InvariantError as e:
        raise InvariantError(f'{path}: {e}')


def write_tracks(tracks: TrackSet, path: Path | str) -> Path:
    lines = [TRACK_HEADER]
    for obj in tracks.all():
        lines.append(
            '\t'.join(
                [
                    str(obj.frame_index),
                    str(obj.track_id),
                    obj.class_id.value,
                    format_number(obj.score),
                    *_pose_fields(obj.box),
                ]
            )
        )
    path = Path(path)
    path.write_text('\n'.join(lines) + '\n', encoding='utf-8')
    return path
