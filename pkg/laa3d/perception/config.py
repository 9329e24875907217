"""クラス別しきい値と実行時設定

優先順位はコマンドラインのフラグ > ``--config`` の TOML > ``settings.LAA3D``。
"""

from __future__ import annotations

import copy
import logging
import math
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Any

from django.conf import settings

from perception.exceptions import InputError, InvariantError
from perception.schema import ObjectClass

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class ClassThresholds:
    ap_thresholds: tuple[float, ...]
    tp_max_translation: float
    tp_max_rotation: float
    tp_max_size: float
    mot_threshold: float
    depth_range: float

    def __post_init__(self):
        object.__setattr__(self, 'ap_thresholds', tuple(float(t) for t in self.ap_thresholds))
        if not self.ap_thresholds:
            raise InvariantError('ap_thresholds must not be empty')
        values = (
            *self.ap_thresholds,
            self.tp_max_translation,
            self.tp_max_rotation,
            self.tp_max_size,
            self.mot_threshold,
            self.depth_range,
        )
        if not all(math.isfinite(v) and v > 0 for v in values):
            raise InvariantError(f'Class thresholds must be positive, got {self}')
        if any(b <= a for a, b in zip(self.ap_thresholds, self.ap_thresholds[1:])):
            raise InvariantError(f'ap_thresholds must increase strictly: {self.ap_thresholds}')


@dataclass(frozen=True)
class ClassConfig:
    classes: dict[ObjectClass, ClassThresholds]

    def __getitem__(self, class_id: ObjectClass | str) -> ClassThresholds:
        return self.classes[ObjectClass.parse(class_id)]

    def __iter__(self):
        return iter(self.classes)

    def __hash__(self):
        return hash(tuple(self.classes.items()))

    def with_overrides(self, overrides: dict[str, dict[str, Any]]) -> ClassConfig:
        valid = {f.name for f in fields(ClassThresholds)}
        classes = dict(self.classes)
        for name, values in overrides.items():
            class_id = ObjectClass.parse(name)
            unknown = set(values) - valid
            if unknown:
                raise InputError(f'Unknown keys for class {name}: {sorted(unknown)}')
            classes[class_id] = replace(classes[class_id], **values)
        return ClassConfig(classes)


def default_class_config() -> ClassConfig:
    """ベンチマークで公開されているクラス別の定数"""
    return ClassConfig(
        {
            ObjectClass.MAV: ClassThresholds(
                ap_thresholds=(1.0, 2.0, 4.0, 8.0),
                tp_max_translation=4.0,
                tp_max_rotation=45.0,
                tp_max_size=0.5,
                mot_threshold=4.0,
                depth_range=100.0,
            ),
            ObjectClass.EVTOL: ClassThresholds(
                ap_thresholds=(1.5, 3.0, 6.0, 12.0),
                tp_max_translation=6.0,
                tp_max_rotation=45.0,
                tp_max_size=0.5,
                mot_threshold=6.0,
                depth_range=150.0,
            ),
            ObjectClass.HELICOPTER: ClassThresholds(
                ap_thresholds=(3.0, 6.0, 12.0, 24.0),
                tp_max_translation=12.0,
                tp_max_rotation=45.0,
                tp_max_size=0.5,
                mot_threshold=12.0,
                depth_range=300.0,
            ),
        }
    )


# TOML のテーブル名 -> settings.LAA3D のキー
_SECTIONS = {
    'detection': 'DETECTION',
    'mot': 'MOT',
    'tracker': 'TRACKER',
    'prediction': 'PREDICTION',
    'depth': 'DEPTH',
}


def load_config(path: Path | str) -> dict[str, Any]:
    """``--config`` の TOML を読み込み、キーを検証して返す"""
    path = Path(path)
    if not path.exists():
        raise InputError(f'`{path}` not found. Please check the config file path.')
    try:
        with path.open('rb') as f:
            document = tomllib.load(f)
    except (tomllib.TOMLDecodeError, UnicodeDecodeError) as e:
        raise InputError(f'{path}: {e}')

    unknown = set(document) - set(_SECTIONS) - {'classes'}
    if unknown:
        raise InputError(f'{path}: unknown config tables {sorted(unknown)}')

    defaults = settings.LAA3D
    for section, key in _SECTIONS.items():
        extra = set(document.get(section, {})) - set(defaults[key])
        if extra:
            raise InputError(f'{path}: unknown keys in [{section}]: {sorted(extra)}')

    # クラス名と値はここで検証しておく
    resolve_class_config(document.get('classes', {}))
    return document


def resolve_settings(document: dict[str, Any] | None = None) -> dict[str, Any]:
    """settings.LAA3D に設定ファイルの値を重ねた辞書を返す"""
    resolved = copy.deepcopy(settings.LAA3D)
    for section, key in _SECTIONS.items():
        resolved[key].update((document or {}).get(section, {}))
    # クラスごとにフィールド単位で重ねる
    overrides = {name: dict(values) for name, values in (resolved.get('CLASS_CONFIG') or {}).items()}
    for name, values in (document or {}).get('classes', {}).items():
        overrides.setdefault(name, {}).update(values)
    resolved['CLASS_CONFIG'] = resolve_class_config(overrides)
    return resolved


def resolve_class_config(overrides: dict[str, dict[str, Any]] | None = None) -> ClassConfig:
    try:
        return default_class_config().with_overrides(overrides or {})
    except TypeError as e:
        raise InputError(f'Invalid class config override: {e}')
