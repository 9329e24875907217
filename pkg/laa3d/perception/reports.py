"""レポート・CSV・実行マニフェストの書き出し

report.txt は INI 形式で、先頭にマニフェスト (実行時間を除く) を埋め込む。
同じ入力と設定で再実行すると report.* はバイト単位で一致する。
"""

from __future__ import annotations

import configparser
import io
import logging
import math
from collections.abc import Mapping
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd

import laa3d
from perception.formats import format_number

logger = logging.getLogger(__name__)

CSV_FLOAT_FORMAT = '%.9g'


@dataclass(frozen=True)
class RunManifest:
    command: str
    inputs: tuple[str, ...]
    options: Mapping[str, Any] = field(default_factory=dict)
    config: Mapping[str, Any] = field(default_factory=dict)
    seed: int = 0
    version: str = laa3d.__version__
    wall_time: float | None = None

    def section(self, include_wall_time: bool = False) -> dict[str, str]:
        values = {
            'command': self.command,
            'version': self.version,
            'seed': str(self.seed),
            'inputs': ' '.join(self.inputs),
        }
        for key in sorted(self.options):
            values[f'option.{key}'] = _text(self.options[key])
        for key, value in _flatten(self.config):
            values[f'config.{key}'] = _text(value)
        if include_wall_time and self.wall_time is not None:
            values['wall_time'] = f'{self.wall_time:.3f}'
        return values


def _flatten(mapping: Mapping[str, Any], prefix: str = ''):
    for key in sorted(mapping):
        value = mapping[key]
        name = f'{prefix}{key}'
        if isinstance(value, Mapping):
            yield from _flatten(value, f'{name}.')
        else:
            yield name, value


def _text(value: Any) -> str:
    if value is None:
        return '-'
    if isinstance(value, (bool, np.bool_)):
        return 'true' if value else 'false'
    if isinstance(value, (float, np.floating)):
        return 'nan' if math.isnan(value) else format_number(value)
    if isinstance(value, (list, tuple)):
        return ','.join(_text(v) for v in value)
    if hasattr(value, 'value'):
        return str(value.value)
    return str(value)


def render_ini(sections: Mapping[str, Mapping[str, Any]]) -> str:
    parser = configparser.ConfigParser(interpolation=None)
    # キーの大文字・小文字を保つ (mAP, ATE など)
    parser.optionxform = str
    for name, values in sections.items():
        parser[name] = {key: _text(value) for key, value in values.items()}
    buffer = io.StringIO()
    parser.write(buffer)
    return buffer.getvalue()


def write_report(
    out_dir: Path, manifest: RunManifest, sections: Mapping[str, Mapping[str, Any]]
) -> Path:
    path = out_dir / 'report.txt'
    path.write_text(render_ini({'manifest': manifest.section(), **sections}), encoding='utf-8')
    return path


def write_manifest(out_dir: Path, manifest: RunManifest) -> Path:
    path = out_dir / 'manifest.txt'
    path.write_text(
        render_ini({'manifest': manifest.section(include_wall_time=True)}), encoding='utf-8'
    )
    return path


def write_csv(df: pd.DataFrame, path: Path) -> Path:
    df.to_csv(path, index=False, float_format=CSV_FLOAT_FORMAT, lineterminator='\n')
    return path


def pr_curve_filename(class_name: str, threshold: float) -> str:
    return f'pr_{class_name}_{format_number(threshold)}.csv'


def frame_sections(df: pd.DataFrame, key_columns: list[str], prefix: str) -> dict[str, dict]:
    """DataFrame の各行を ``[prefix.key1.key2]`` セクションに変換する"""
    sections = {}
    value_columns = [c for c in df.columns if c not in key_columns]
    for row in df.to_dict('records'):
        name = '.'.join([prefix, *(str(row[c]) for c in key_columns)])
        sections[name] = {c: row[c] for c in value_columns}
    return sections
