from dataclasses import replace
from pathlib import Path

import pandas as pd

from perception.formats import write_detections, write_sequence, write_tracks
from perception.management.base import PerceptionCommand, list_inputs, run_parallel
from perception.reports import write_csv
from perception.synthgen.corruption import LEDGER_COLUMNS, corrupt_detections
from perception.synthgen.generator import simulate_sequence
from perception.synthgen.scenario import load_scenario

SCENARIO_SUFFIX = '.toml'


def simulate_file(path, seed, config):
    """シナリオ 1 つ分を生成する (ワーカープロセスで実行)"""
    spec = load_scenario(path)
    if seed is not None:
        corruption = spec.corruption and replace(spec.corruption, seed=seed)
        spec = replace(spec, seed=seed, corruption=corruption)
    sequence = simulate_sequence(spec)
    if spec.corruption is None:
        return sequence, None
    return sequence, corrupt_detections(sequence, spec.corruption, config)


class Command(PerceptionCommand):
    help = 'Generate synthetic sequences and corrupted detections from scenario files'

    def add_command_arguments(self, parser):
        parser.add_argument('spec', type=Path, help='scenario TOML file or directory of *.toml')

    def input_paths(self, options):
        return [options['spec']]

    def run(self, options, resolved):
        inputs = list_inputs(Path(options['spec']), SCENARIO_SUFFIX, 'scenario')
        results = run_parallel(
            simulate_file,
            [(path, options['seed'], resolved['CLASS_CONFIG']) for _, path in inputs],
            resolved['JOBS'],
        )

        out_dir = options['out']
        written, ledgers = [], []
        for sequence, corrupted in results:
            sid = sequence.sequence_id
            written.append(write_sequence(sequence, out_dir / f'{sid}.seq'))
            if corrupted is None:
                continue
            written.append(write_detections(corrupted.detections, out_dir / f'{sid}.det'))
            written.append(write_tracks(corrupted.tracks, out_dir / f'{sid}.trk'))
            ledgers.append(corrupted.ledger.to_frame().assign(sequence_id=sid))
            self.stdout.write(
                f'{sid}: {len(sequence.frames)} frames, '
                f'{len(corrupted.ledger.events)} corruption events'
            )
        if ledgers:
            ledger = pd.concat(ledgers, ignore_index=True)
            ledger = ledger.reindex(columns=['sequence_id', *LEDGER_COLUMNS])
            written.append(write_csv(ledger, out_dir / 'ledger.csv'))
        return written
