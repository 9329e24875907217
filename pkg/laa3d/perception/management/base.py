"""management command の共通部分

共通フラグ (--config, --classes, --frame, --out, --seed, --jobs)、入力ファイルの対応付け、
シーケンス単位の並列実行、例外から終了コードへの変換をまとめる。
"""

from __future__ import annotations

import logging
import time
from collections.abc import Callable, Iterable
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, replace
from pathlib import Path
from typing import Any

from django.core.management.base import BaseCommand, CommandError

from perception.config import load_config, resolve_settings
from perception.exceptions import EvaluationError, InputError
from perception.reports import RunManifest, write_manifest
from perception.schema import ObjectClass

logger = logging.getLogger(__name__)

# 入力エラーと評価の前提条件エラーの終了コード
INPUT_ERROR = 2
EVALUATION_ERROR = 3

SEQUENCE_SUFFIX = '.seq'
DETECTION_SUFFIX = '.det'
TRACK_SUFFIX = '.trk'


def parse_classes(value: str | None) -> list[ObjectClass] | None:
    if not value:
        return None
    return [ObjectClass.parse(name.strip()) for name in value.split(',') if name.strip()]


def require_path(path: Path, what: str) -> Path:
    if not path.exists():
        raise InputError(f'`{path}` not found. Please check the {what} path.')
    return path


def pair_inputs(gt: Path, other: Path, suffix: str) -> list[tuple[str, Path, Path]]:
    """GT と予測の入力を (stem, gt_path, other_path) の組にする

    両方ファイルならその 1 組、両方ディレクトリなら ``<id>.seq`` と ``<id><suffix>`` を
    stem で対応付ける (stem 順)。
    """
    require_path(gt, 'ground truth')
    require_path(other, 'prediction')
    if gt.is_file() and other.is_file():
        return [(gt.stem, gt, other)]
    if not (gt.is_dir() and other.is_dir()):
        raise InputError(f'`{gt}` and `{other}` must both be files or both be directories')

    pairs = []
    for seq_path in sorted(gt.glob(f'*{SEQUENCE_SUFFIX}')):
        counterpart = other / f'{seq_path.stem}{suffix}'
        if not counterpart.exists():
            raise InputError(f'`{counterpart}` not found for sequence `{seq_path}`')
        pairs.append((seq_path.stem, seq_path, counterpart))
    if not pairs:
        raise InputError(f'No `*{SEQUENCE_SUFFIX}` files found in `{gt}`')
    return pairs


def list_inputs(path: Path, suffix: str, what: str) -> list[tuple[str, Path]]:
    require_path(path, what)
    if path.is_file():
        return [(path.stem, path)]
    files = sorted(path.glob(f'*{suffix}'))
    if not files:
        raise InputError(f'No `*{suffix}` files found in `{path}`')
    return [(f.stem, f) for f in files]


def run_parallel(function: Callable, jobs: Iterable[tuple], n_jobs: int = 1) -> list:
    """シーケンスごとの処理を並列に実行し、入力順の結果を返す"""
    jobs = list(jobs)
    if n_jobs <= 1 or len(jobs) <= 1:
        return [function(*args) for args in jobs]
    with ProcessPoolExecutor(max_workers=min(n_jobs, len(jobs))) as executor:
        futures = [executor.submit(function, *args) for args in jobs]
        return [future.result() for future in futures]


def manifest_config(resolved: dict[str, Any]) -> dict[str, Any]:
    """マニフェストに載せる設定値 (ClassConfig は辞書に展開)"""
    config = {k: v for k, v in resolved.items() if k not in ('CLASS_CONFIG', 'JOBS')}
    config['CLASS_CONFIG'] = {
        class_id.value: asdict(thresholds)
        for class_id, thresholds in resolved['CLASS_CONFIG'].classes.items()
    }
    return config


class PerceptionCommand(BaseCommand):
    """評価・追跡コマンドの基底クラス

    派生クラスは ``add_command_arguments`` と ``run`` を実装する。``run`` は書き出した
    ファイルのリストを返す。
    """

    requires_system_checks = []
    # マニフェストに載せるオプション (入力パスと --jobs 以外)
    manifest_options: tuple[str, ...] = ()

    def add_arguments(self, parser):
        parser.add_argument('--config', type=Path, help='TOML file overriding settings.LAA3D')
        parser.add_argument('--classes', help='comma separated classes, e.g. MAV,eVTOL')
        parser.add_argument('--frame', choices=['camera', 'world'], help='evaluation frame')
        parser.add_argument('--out', type=Path, default=Path('.'), help='output directory')
        parser.add_argument('--seed', type=int, help='unsigned 64-bit seed')
        parser.add_argument('--jobs', type=int, help='worker processes')
        self.add_command_arguments(parser)

    def add_command_arguments(self, parser):
        pass

    def apply_flags(self, options: dict[str, Any], resolved: dict[str, Any]):
        """フラグで指定された値を設定に重ねる (フラグ > 設定ファイル > settings)"""
        if options['frame']:
            resolved['MOT']['frame'] = options['frame']

    def run(self, options: dict[str, Any], resolved: dict[str, Any]) -> list[Path]:
        raise NotImplementedError

    def handle(self, *args, **options):
        started = time.perf_counter()
        try:
            document = load_config(options['config']) if options['config'] else None
            resolved = resolve_settings(document)
            if options['seed'] is not None:
                seed = options['seed']
                if not 0 <= seed < 2**64:
                    raise InputError(f'--seed must be an unsigned 64-bit integer, got {seed}')
                resolved['SEED'] = seed
            if options['jobs'] is not None:
                resolved['JOBS'] = max(1, options['jobs'])
            options['classes'] = parse_classes(options['classes'])
            self.apply_flags(options, resolved)

            out_dir = options['out'] = Path(options['out'])
            out_dir.mkdir(parents=True, exist_ok=True)
            self.manifest = RunManifest(
                command=self.command_name(),
                inputs=tuple(str(p) for p in self.input_paths(options)),
                options={k: options.get(k) for k in self.manifest_options},
                config=manifest_config(resolved),
                seed=resolved['SEED'],
            )
            written = self.run(options, resolved)
        except InputError as e:
            raise CommandError(str(e), returncode=INPUT_ERROR)
        except EvaluationError as e:
            raise CommandError(str(e), returncode=EVALUATION_ERROR)

        manifest = replace(self.manifest, wall_time=time.perf_counter() - started)
        written.append(write_manifest(out_dir, manifest))
        logger.info('%s wrote %d files to %s', self.command_name(), len(written), out_dir)
        for path in written:
            self.stdout.write(str(path))

    def command_name(self) -> str:
        return self.__module__.rsplit('.', 1)[-1]

    def input_paths(self, options: dict[str, Any]) -> list[Path]:
        return []
