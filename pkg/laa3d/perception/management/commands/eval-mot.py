from pathlib import Path

from perception.formats import format_number, load_sequence, load_tracks
from perception.management.base import (
    TRACK_SUFFIX,
    PerceptionCommand,
    pair_inputs,
    run_parallel,
)
from perception.metrics.mot import (
    HOTA_ALPHAS,
    Similarity,
    evaluate_tracking,
    merge_counts,
    mot_report,
)
from perception.reports import frame_sections, write_csv, write_report


def evaluate_pair(gt_path, tracks_path, config, classes, frame, similarity):
    sequence = load_sequence(gt_path)
    results = evaluate_tracking(
        sequence, load_tracks(tracks_path), config, classes, frame, similarity
    )
    return sequence.sequence_id, results


class Command(PerceptionCommand):
    help = 'Evaluate 3D multi-object tracking: CLEAR MOT, identity metrics and HOTA'
    manifest_options = ('classes',)

    def add_command_arguments(self, parser):
        parser.add_argument('gt', type=Path, help='sequence file or directory of *.seq')
        parser.add_argument('tracks', type=Path, help='track file or directory of *.trk')
        parser.add_argument('--similarity', choices=[s.value for s in Similarity])

    def input_paths(self, options):
        return [options['gt'], options['tracks']]

    def apply_flags(self, options, resolved):
        super().apply_flags(options, resolved)
        if options.get('similarity'):
            resolved['MOT']['similarity'] = options['similarity']

    def run(self, options, resolved):
        mot = resolved['MOT']
        config = resolved['CLASS_CONFIG']
        pairs = pair_inputs(Path(options['gt']), Path(options['tracks']), TRACK_SUFFIX)
        results = run_parallel(
            evaluate_pair,
            [
                (gt, trk, config, options['classes'], mot['frame'], mot['similarity'])
                for _, gt, trk in pairs
            ],
            resolved['JOBS'],
        )
        per_sequence = dict(results)
        df = mot_report(per_sequence)

        totals = merge_counts(per_sequence)
        sections = {}
        totals_df = df[df['sequence_id'] == 'all'].drop(columns='sequence_id')
        sections.update(frame_sections(totals_df, ['class'], 'class'))
        for class_id, counts in totals.items():
            sections[f'hota.{class_id.value}'] = {
                f'HOTA@{format_number(alpha)}': value
                for alpha, value in zip(HOTA_ALPHAS, 100.0 * counts.hota.hota_alpha)
            }
        sections.update(
            frame_sections(
                df[df['sequence_id'] != 'all'], ['sequence_id', 'class'], 'sequence'
            )
        )

        out_dir = options['out']
        written = [
            write_report(out_dir, self.manifest, sections),
            write_csv(df, out_dir / 'report.csv'),
        ]
        for row in totals_df.to_dict('records'):
            self.stdout.write(
                f"{row['class']}: MOTA {row['MOTA']:.2f} HOTA {row['HOTA']:.2f} IDSW {row['IDSW']}"
            )
        return written
