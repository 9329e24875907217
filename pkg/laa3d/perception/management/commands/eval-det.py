from pathlib import Path

from perception.formats import format_number, load_detections, load_sequence
from perception.management.base import (
    DETECTION_SUFFIX,
    PerceptionCommand,
    pair_inputs,
    run_parallel,
)
from perception.metrics.detection import (
    DetectionEvaluation,
    SizeErrorMode,
    merge_tallies,
    summarize_tallies,
    tally_sequence,
)
from perception.reports import pr_curve_filename, write_csv, write_report


def tally_pair(gt_path, det_path, config, size_mode, classes):
    """1 シーケンス分の集計 (ワーカープロセスで実行)"""
    return tally_sequence(
        load_sequence(gt_path), load_detections(det_path), config, size_mode, classes
    )


def report_sections(evaluation: DetectionEvaluation, config, n_sequences: int) -> dict:
    report = evaluation.report
    sections = {
        'summary': {
            'sequences': n_sequences,
            'ADS': report.ads,
            'mAP': report.mAP,
            'mATE': report.mATE,
            'mAOE': report.mAOE,
            'mASE': report.mASE,
            'mDR': report.mDR,
            'nATE': report.n_ate,
            'nAOE': report.n_aoe,
            'nASE': report.n_ase,
            'excluded': [c.value for c in evaluation.excluded],
        }
    }
    for class_id, result in report.per_class.items():
        values = {
            f'AP@{format_number(t)}m': 100.0 * ap
            for t, ap in zip(config[class_id].ap_thresholds, result.ap_per_threshold)
        }
        values.update(
            {
                'AP': result.class_ap,
                'ATE': result.ate,
                'AOE': result.aoe,
                'ASE': result.ase,
                'DR': result.dr,
                'n_tp': result.n_tp,
                'n_gt': result.n_gt,
            }
        )
        sections[f'class.{class_id.value}'] = values
    return sections


class Command(PerceptionCommand):
    help = 'Evaluate 3D detections: per-class AP, TP errors, detection rate and ADS'
    manifest_options = ('classes',)

    def add_command_arguments(self, parser):
        parser.add_argument('gt', type=Path, help='sequence file or directory of *.seq')
        parser.add_argument('det', type=Path, help='detection file or directory of *.det')
        parser.add_argument('--size-error-mode', choices=[m.value for m in SizeErrorMode])
        parser.add_argument('--ap-trim', action='store_true', default=None)

    def input_paths(self, options):
        return [options['gt'], options['det']]

    def apply_flags(self, options, resolved):
        super().apply_flags(options, resolved)
        if options.get('size_error_mode'):
            resolved['DETECTION']['size_error_mode'] = options['size_error_mode']
        if options.get('ap_trim') is not None:
            resolved['DETECTION']['ap_trim'] = options['ap_trim']

    def run(self, options, resolved):
        config = resolved['CLASS_CONFIG']
        size_mode = SizeErrorMode(resolved['DETECTION']['size_error_mode'])
        pairs = pair_inputs(Path(options['gt']), Path(options['det']), DETECTION_SUFFIX)
        tallies = run_parallel(
            tally_pair,
            [(gt, det, config, size_mode, options['classes']) for _, gt, det in pairs],
            resolved['JOBS'],
        )
        evaluation = summarize_tallies(
            merge_tallies(tallies), config, size_mode, resolved['DETECTION']['ap_trim']
        )

        out_dir = options['out']
        written = [
            write_report(out_dir, self.manifest, report_sections(evaluation, config, len(pairs))),
            write_csv(evaluation.report.to_frame(), out_dir / 'report.csv'),
        ]
        for (class_id, threshold), curve in evaluation.curves.items():
            written.append(
                write_csv(curve.to_frame(), out_dir / pr_curve_filename(class_id.value, threshold))
            )
        self.stdout.write(f'ADS {evaluation.report.ads:.2f} over {len(pairs)} sequence(s)')
        return written
