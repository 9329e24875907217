from pathlib import Path

from perception.exceptions import InputError
from perception.formats import load_detections, load_sequence, write_tracks
from perception.management.base import (
    DETECTION_SUFFIX,
    SEQUENCE_SUFFIX,
    PerceptionCommand,
    list_inputs,
    require_path,
    run_parallel,
)
from perception.tracking.tracker import TrackerParams, track_sequence

DEFAULT_FPS = 1.0


def track_file(det_path, gt_path, params, config, world, fps):
    sequence = load_sequence(gt_path) if gt_path is not None else None
    return track_sequence(load_detections(det_path), params, config, sequence, world, fps)


class Command(PerceptionCommand):
    help = 'Track 3D detections with a constant-velocity Kalman filter and gated assignment'
    manifest_options = ('gt', 'frame', 'fps')

    def add_command_arguments(self, parser):
        parser.add_argument('det', type=Path, help='detection file or directory of *.det')
        parser.add_argument(
            '--gt',
            type=Path,
            help='sequence file or directory of *.seq supplying timestamps and extrinsics',
        )
        parser.add_argument('--max-age', type=int, help='frames a track survives unmatched')
        parser.add_argument('--min-hits', type=int, help='matches before a track is emitted')
        parser.add_argument(
            '--fps', type=float, help=f'frame rate without --gt (default {DEFAULT_FPS})'
        )

    def input_paths(self, options):
        return [p for p in (options['det'], options.get('gt')) if p is not None]

    def apply_flags(self, options, resolved):
        super().apply_flags(options, resolved)
        for key in ('max_age', 'min_hits'):
            if options.get(key) is not None:
                resolved['TRACKER'][key] = options[key]

    def _jobs(self, options) -> list[tuple[str, Path, Path | None]]:
        det = Path(options['det'])
        gt = Path(options['gt']) if options.get('gt') else None
        detections = list_inputs(det, DETECTION_SUFFIX, 'detection')
        if gt is None:
            return [(stem, path, None) for stem, path in detections]
        require_path(gt, 'ground truth')
        if det.is_file() and gt.is_file():
            return [(detections[0][0], det, gt)]
        if not (det.is_dir() and gt.is_dir()):
            raise InputError(f'`{det}` and `{gt}` must both be files or both be directories')
        jobs = []
        for stem, path in detections:
            seq_path = require_path(gt / f'{stem}{SEQUENCE_SUFFIX}', 'ground truth')
            jobs.append((stem, path, seq_path))
        return jobs

    def run(self, options, resolved):
        params = TrackerParams.from_settings(resolved['TRACKER'])
        config = resolved['CLASS_CONFIG']
        jobs = self._jobs(options)
        has_gt = jobs[0][2] is not None
        # --frame が無いときは GT があればワールド座標、無ければカメラ座標で追跡する
        frame = options['frame'] or ('world' if has_gt else 'camera')
        if frame == 'world' and not has_gt:
            raise InputError('--frame world needs --gt for the camera extrinsics')
        fps = options['fps'] or DEFAULT_FPS
        if not fps > 0:
            raise InputError(f'--fps must be positive, got {fps}')

        results = run_parallel(
            track_file,
            [(det, gt, params, config, frame == 'world', fps) for _, det, gt in jobs],
            resolved['JOBS'],
        )

        out_dir = options['out']
        written = []
        single = Path(options['det']).is_file()
        for (stem, _, _), tracks in zip(jobs, results):
            path = out_dir / ('tracks.trk' if single else f'{stem}.trk')
            write_tracks(tracks, path)
            written.append(path)
            self.stdout.write(
                f'{stem}: {len({o.track_id for o in tracks.all()})} tracks, '
                f'{len(tracks.all())} boxes'
            )
        return written
