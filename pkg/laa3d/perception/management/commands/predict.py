from pathlib import Path

import pandas as pd

from perception.formats import load_sequence
from perception.management.base import (
    SEQUENCE_SUFFIX,
    PerceptionCommand,
    list_inputs,
    run_parallel,
)
from perception.reports import frame_sections, write_csv, write_report
from perception.tracking.tracker import TrackerParams
from perception.tracking.trajectory import (
    TRACK_COLUMNS,
    WINDOW_COLUMNS,
    prediction_windows,
    summarize_prediction,
)


def windows_file(path, history, horizon, stride, params):
    sequence = load_sequence(path)
    windows, tracks = prediction_windows(sequence, history, horizon, stride, params)
    return sequence.sequence_id, windows, tracks


class Command(PerceptionCommand):
    help = 'Predict future positions of ground-truth tracks and report ADE / FDE'

    def add_command_arguments(self, parser):
        parser.add_argument('gt', type=Path, help='sequence file or directory of *.seq')
        parser.add_argument('--history', type=int, help='observed frames per window')
        parser.add_argument('--horizon', type=int, help='predicted frames per window')
        parser.add_argument('--stride', type=int, help='frames between window starts')

    def input_paths(self, options):
        return [options['gt']]

    def apply_flags(self, options, resolved):
        super().apply_flags(options, resolved)
        for key in ('history', 'horizon', 'stride'):
            if options.get(key) is not None:
                resolved['PREDICTION'][key] = options[key]

    def run(self, options, resolved):
        prediction = resolved['PREDICTION']
        params = TrackerParams.from_settings(resolved['TRACKER'])
        inputs = list_inputs(Path(options['gt']), SEQUENCE_SUFFIX, 'ground truth')
        results = run_parallel(
            windows_file,
            [
                (path, prediction['history'], prediction['horizon'], prediction['stride'], params)
                for _, path in inputs
            ],
            resolved['JOBS'],
        )

        windows = pd.concat(
            [w.assign(sequence_id=sid) for sid, w, _ in results], ignore_index=True
        ).reindex(columns=['sequence_id', *WINDOW_COLUMNS])
        tracks = pd.concat([t for _, _, t in results], ignore_index=True)
        if tracks.empty:
            tracks = pd.DataFrame(columns=TRACK_COLUMNS)
        df = summarize_prediction(windows, tracks)

        out_dir = options['out']
        written = [
            write_report(out_dir, self.manifest, frame_sections(df, ['class'], 'class')),
            write_csv(df, out_dir / 'report.csv'),
            write_csv(windows, out_dir / 'windows.csv'),
        ]
        total = df[df['class'] == 'all'].iloc[0]
        self.stdout.write(
            f"ADE {total['ADE']:.3f} m FDE {total['FDE']:.3f} m over {total['n_windows']} windows"
        )
        return written
