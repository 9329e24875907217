"""単眼 3D 検出の深度ターゲット変換

- 焦点距離の統一 (FLU): 深度を基準焦点距離でのスケールに変換する
- クラス別深度 (CSD): クラスごとの深度レンジをビン番号とビン内の残差 ([0, 1)) に符号化する

スカラーと numpy 配列の両方を受け付け、配列は要素ごとに変換する。
"""

from __future__ import annotations

import logging
from collections.abc import Mapping
from dataclasses import dataclass, field
from enum import Enum
from typing import Any

import numpy as np

from perception.config import ClassConfig, default_class_config
from perception.exceptions import (
    BinOutOfRange,
    DepthOutOfRange,
    InvariantError,
    NonPositiveDepth,
)
from perception.schema import ObjectClass

logger = logging.getLogger(__name__)

# 1280x720, 水平画角 90 度に相当
CANONICAL_FOCAL = 640.0
DEFAULT_BIN_COUNT = 100


class BinSpacing(str, Enum):
    UNIFORM = 'uniform'
    # e_i = (1 + range)^(i / K) - 1
    INCREASING = 'increasing'


@dataclass(frozen=True)
class FluConfig:
    canonical_focal: float = CANONICAL_FOCAL

    def __post_init__(self):
        if not self.canonical_focal > 0:
            raise InvariantError(f'canonical_focal must be positive, got {self.canonical_focal}')


@dataclass(frozen=True)
class CsdConfig:
    ranges: Mapping[ObjectClass, float] = field(default_factory=dict)
    bin_count: int = DEFAULT_BIN_COUNT
    spacing: BinSpacing = BinSpacing.UNIFORM

    def __post_init__(self):
        ranges = self.ranges or {
            c: t.depth_range for c, t in default_class_config().classes.items()
        }
        object.__setattr__(
            self, 'ranges', {ObjectClass.parse(c): float(r) for c, r in ranges.items()}
        )
        object.__setattr__(self, 'spacing', BinSpacing(self.spacing))
        if not all(r > 0 for r in self.ranges.values()):
            raise InvariantError(f'Depth ranges must be positive, got {self.ranges}')
        if int(self.bin_count) != self.bin_count or self.bin_count < 1:
            raise InvariantError(f'bin_count must be a positive integer, got {self.bin_count}')

    def __hash__(self):
        return hash((tuple(self.ranges.items()), self.bin_count, self.spacing))

    def edges(self, class_id: ObjectClass | str) -> np.ndarray:
        """ビンの境界 (bin_count + 1 個)"""
        depth_range = self.ranges[ObjectClass.parse(class_id)]
        i = np.arange(self.bin_count + 1)
        if self.spacing == BinSpacing.UNIFORM:
            edges = depth_range * i / self.bin_count
        else:
            edges = np.expm1(np.log1p(depth_range) * i / self.bin_count)
        edges[-1] = depth_range
        return edges


def depth_configs(
    values: Mapping[str, Any], class_config: ClassConfig | None = None
) -> tuple[FluConfig, CsdConfig]:
    """``settings.LAA3D['DEPTH']`` 形式の辞書から設定を作る"""
    class_config = class_config or default_class_config()
    return (
        FluConfig(float(values.get('canonical_focal', CANONICAL_FOCAL))),
        CsdConfig(
            {c: t.depth_range for c, t in class_config.classes.items()},
            int(values.get('bin_count', DEFAULT_BIN_COUNT)),
            values.get('spacing', BinSpacing.UNIFORM),
        ),
    )


def _unwrap(value: np.ndarray, scalar: bool):
    return value.item() if scalar else value


def _positive(name: str, values: np.ndarray):
    if not np.all(np.isfinite(values) & (values > 0)):
        raise NonPositiveDepth(f'{name} must be positive and finite')


def flu_to_canonical(z, focal, cfg: FluConfig | None = None):
    """z' = f'_c * z / f_c"""
    cfg = cfg or FluConfig()
    z_arr, focal_arr = np.asarray(z, dtype=np.float64), np.asarray(focal, dtype=np.float64)
    _positive('Depth', z_arr)
    _positive('Focal length', focal_arr)
    result = cfg.canonical_focal * z_arr / focal_arr
    return _unwrap(result, result.ndim == 0)


def flu_from_canonical(z_canonical, focal, cfg: FluConfig | None = None):
    """z = f_c * z' / f'_c"""
    cfg = cfg or FluConfig()
    z_arr, focal_arr = (
        np.asarray(z_canonical, dtype=np.float64),
        np.asarray(focal, dtype=np.float64),
    )
    _positive('Canonical depth', z_arr)
    _positive('Focal length', focal_arr)
    result = focal_arr * z_arr / cfg.canonical_focal
    return _unwrap(result, result.ndim == 0)


def csd_encode(z, class_id: ObjectClass | str, cfg: CsdConfig | None = None):
    """深度をビン番号とビン内の位置 (残差, [0, 1)) に符号化する"""
    cfg = cfg or CsdConfig()
    class_id = ObjectClass.parse(class_id)
    depth_range = cfg.ranges[class_id]
    z_arr = np.asarray(z, dtype=np.float64)
    if not np.all(np.isfinite(z_arr) & (z_arr >= 0) & (z_arr < depth_range)):
        raise DepthOutOfRange(f'{class_id} depth must lie in [0, {depth_range:g}) m')

    edges = cfg.edges(class_id)
    K = cfg.bin_count
    if cfg.spacing == BinSpacing.UNIFORM:
        scaled = z_arr * K / depth_range
        bins = np.clip(np.floor(scaled).astype(np.int64), 0, K - 1)
        residual = scaled - bins
    else:
        bins = np.clip(np.searchsorted(edges, z_arr, side='right') - 1, 0, K - 1)
        residual = (z_arr - edges[bins]) / (edges[bins + 1] - edges[bins])
    # 丸めで 1 に届いた場合
    residual = np.clip(residual, 0.0, np.nextafter(1.0, 0.0))
    return _unwrap(bins, z_arr.ndim == 0), _unwrap(residual, z_arr.ndim == 0)


def csd_decode(bin_index, residual, class_id: ObjectClass | str, cfg: CsdConfig | None = None):
    """(ビン番号, 残差) から深度 [m] を復元する"""
    cfg = cfg or CsdConfig()
    class_id = ObjectClass.parse(class_id)
    bins = np.asarray(bin_index)
    residual_arr = np.asarray(residual, dtype=np.float64)
    if not np.all((bins >= 0) & (bins < cfg.bin_count) & (np.floor(bins) == bins)):
        raise BinOutOfRange(f'Bin index must be an integer in [0, {cfg.bin_count})')
    if not np.all((residual_arr >= 0) & (residual_arr < 1)):
        raise BinOutOfRange('Residual must lie in [0, 1)')

    bins = bins.astype(np.int64)
    if cfg.spacing == BinSpacing.UNIFORM:
        result = (bins + residual_arr) * (cfg.ranges[class_id] / cfg.bin_count)
    else:
        edges = cfg.edges(class_id)
        result = edges[bins] + residual_arr * (edges[bins + 1] - edges[bins])
    result = np.asarray(result, dtype=np.float64)
    return _unwrap(result, result.ndim == 0)


def encode_depth_target(
    z,
    focal,
    class_id: ObjectClass | str,
    flu: FluConfig | None = None,
    csd: CsdConfig | None = None,
):
    """FLU で基準焦点距離の深度に変換してから CSD で符号化する"""
    return csd_encode(flu_to_canonical(z, focal, flu), class_id, csd)


def decode_depth_target(
    bin_index,
    residual,
    focal,
    class_id: ObjectClass | str,
    flu: FluConfig | None = None,
    csd: CsdConfig | None = None,
):
    return flu_from_canonical(csd_decode(bin_index, residual, class_id, csd), focal, flu)
