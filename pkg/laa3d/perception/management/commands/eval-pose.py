from pathlib import Path

import pandas as pd

from perception.exceptions import EmptyGroundTruth
from perception.formats import load_detections, load_sequence
from perception.management.base import (
    DETECTION_SUFFIX,
    PerceptionCommand,
    pair_inputs,
    run_parallel,
)
from perception.metrics.pose import pose_instances, summarize_poses
from perception.reports import frame_sections, write_csv, write_report
from perception.schema import ObjectClass


def instances_pair(gt_path, det_path, classes):
    return pose_instances(load_sequence(gt_path), load_detections(det_path), classes)


class Command(PerceptionCommand):
    help = 'Evaluate 6-DoF poses: ADD and ADD-S accuracy at 50% of the model diameter'
    manifest_options = ('classes',)

    def add_command_arguments(self, parser):
        parser.add_argument('gt', type=Path, help='sequence file or directory of *.seq')
        parser.add_argument('det', type=Path, help='detection file or directory of *.det')

    def input_paths(self, options):
        return [options['gt'], options['det']]

    def run(self, options, resolved):
        classes = options['classes'] or list(ObjectClass)
        pairs = pair_inputs(Path(options['gt']), Path(options['det']), DETECTION_SUFFIX)
        instances = run_parallel(
            instances_pair, [(gt, det, classes) for _, gt, det in pairs], resolved['JOBS']
        )
        df = summarize_poses(pd.concat(instances, ignore_index=True))
        if df.empty:
            raise EmptyGroundTruth('No ground truth of the selected classes to evaluate poses')

        out_dir = options['out']
        written = [
            write_report(out_dir, self.manifest, frame_sections(df, ['class'], 'class')),
            write_csv(df, out_dir / 'report.csv'),
        ]
        for row in df.to_dict('records'):
            self.stdout.write(
                f"{row['class']}: ADD {row['add_accuracy']:.2f}% ADD-S {row['adds_accuracy']:.2f}%"
            )
        return written
