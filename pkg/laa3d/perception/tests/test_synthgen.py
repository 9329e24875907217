import copy
import math
import tempfile
from pathlib import Path

import numpy as np
from django.test import SimpleTestCase

from perception.exceptions import DegenerateSpec, InputError, SpecError
from perception.metrics.mot import clear_mot
from perception.schema import ObjectClass, TrackSet
from perception.synthgen.corruption import (
    LEDGER_COLUMNS,
    EventKind,
    corrupt_detections,
)
from perception.synthgen.generator import random_stream, simulate_sequence
from perception.synthgen.scenario import (
    CameraSpec,
    CorruptionModel,
    ScenarioSpec,
    TrajectorySpec,
    load_scenario,
    make_trajectory,
    scenario_from_document,
    velocity_angles,
)
from perception.tests.factories import CAMERA, group_scenario, single_object_scenario

SCENARIO = {
    'scenario': {'sequence_id': 's1', 'seed': 4, 'duration': 5, 'fps': 10},
    'camera': {'fx': 640, 'fy': 640, 'cx': 640, 'cy': 360, 'width': 1280, 'height': 720},
    'objects': [
        {'class': 'MAV', 'size': [1, 1, 0.5], 'start': [0, 0, 20], 'velocity': [1, 0, 0]},
        {
            'class': 'eVTOL',
            'size': [6, 6, 2],
            'trajectory': 'circular',
            'center': [0, 0, 60],
            'radius': 10,
            'angular_rate': 0.5,
        },
    ],
    'groups': [
        {
            'class': 'MAV',
            'count': 3,
            'size': [1, 1, 0.5],
            'region_min': [-10, -5, 30],
            'region_max': [10, 5, 50],
            'min_spacing': 5,
        }
    ],
    'corruption': {'fn_rate': 0.1},
}


class TrajectoryTests(SimpleTestCase):
    def test_linear(self):
        spec = TrajectorySpec(start=(0, 0, 10), velocity=(1, 0, 0))
        positions, angles = make_trajectory(spec, [0, 1, 2])
        np.testing.assert_allclose(positions, [(0, 0, 10), (1, 0, 10), (2, 0, 10)])
        np.testing.assert_allclose(angles, np.zeros((3, 3)))

    def test_velocity_aligned(self):
        self.assertAlmostEqual(velocity_angles((0, 1, 0))[2], math.pi / 2)
        self.assertAlmostEqual(velocity_angles((1, 0, -1))[1], math.pi / 4)
        self.assertEqual(velocity_angles((0, 0, 0), (0.1, 0.2, 0.3)), (0.1, 0.2, 0.3))

    def test_circular_returns_to_start(self):
        spec = TrajectorySpec(
            kind='circular', center=(0, 0, 20), radius=5.0, angular_rate=math.pi / 2
        )
        positions, _ = make_trajectory(spec, [0, 1, 4])
        np.testing.assert_allclose(positions[0], (5, 0, 20))
        np.testing.assert_allclose(positions[1], (0, 0, 25), atol=1e-12)
        np.testing.assert_allclose(positions[2], positions[0], atol=1e-12)

    def test_waypoints(self):
        spec = TrajectorySpec(
            kind='waypoint',
            waypoints=((0.0, (0, 0, 10)), (2.0, (2, 0, 10)), (4.0, (2, 2, 10))),
        )
        positions, angles = make_trajectory(spec, [3.0, 5.0])
        np.testing.assert_allclose(positions, [(2, 1, 10), (2, 2, 10)])
        # 最後の点で止まったあとは直前の向きを保つ
        self.assertAlmostEqual(angles[0, 2], math.pi / 2)
        self.assertAlmostEqual(angles[1, 2], math.pi / 2)

    def test_fixed_orientation(self):
        spec = TrajectorySpec(velocity=(1, 0, 0), orientation='fixed', angles=(0.1, 0.2, 0.3))
        _, angles = make_trajectory(spec, [0, 1])
        np.testing.assert_allclose(angles, [(0.1, 0.2, 0.3)] * 2)

    def test_invalid(self):
        with self.assertRaises(DegenerateSpec):
            TrajectorySpec(kind='waypoint')
        with self.assertRaises(SpecError):
            TrajectorySpec(kind='circular', radius=0.0)
        with self.assertRaises(SpecError):
            TrajectorySpec(kind='waypoint', waypoints=((1.0, (0, 0, 0)), (1.0, (1, 0, 0))))


class GeneratorTests(SimpleTestCase):
    def test_deterministic(self):
        self.assertEqual(
            simulate_sequence(group_scenario(count=8, duration=5)),
            simulate_sequence(group_scenario(count=8, duration=5)),
        )
        self.assertNotEqual(
            simulate_sequence(group_scenario(count=8, duration=5, seed=1)),
            simulate_sequence(group_scenario(count=8, duration=5, seed=2)),
        )

    def test_group_spacing(self):
        sequence = simulate_sequence(group_scenario(count=20, duration=1, min_spacing=10.0))
        positions = np.array([o.pose.position for o in sequence.frames[0].objects])
        self.assertEqual(len(positions), 20)
        distances = np.linalg.norm(positions[:, None] - positions[None], axis=2)
        self.assertGreaterEqual(distances[~np.eye(20, dtype=bool)].min(), 10.0 - 1e-6)

    def test_group_cannot_be_placed(self):
        with self.assertRaises(DegenerateSpec):
            simulate_sequence(group_scenario(count=50, duration=1, min_spacing=100.0))

    def test_object_behind_camera_dropped(self):
        sequence = simulate_sequence(
            single_object_scenario(start=(0, 0, 2), velocity=(0, 0, -1), duration=5)
        )
        self.assertEqual([len(f.objects) for f in sequence.frames], [1, 1, 0, 0, 0])
        self.assertEqual(sequence.frames[1].timestamp, 1.0)

    def test_moving_camera(self):
        spec = ScenarioSpec(
            sequence_id='chase',
            seed=0,
            duration=3,
            fps=1.0,
            camera=CameraSpec(CAMERA, velocity=(0.0, 0.0, 2.0)),
            objects=single_object_scenario().objects,
        )
        sequence = simulate_sequence(spec)
        self.assertEqual([f.objects[0].pose.z for f in sequence.frames], [20.0, 18.0, 16.0])
        world = [
            f.extrinsic.camera_to_world(f.objects[0].pose.position) for f in sequence.frames
        ]
        np.testing.assert_allclose(world, [(0, 0, 20), (1, 0, 20), (2, 0, 20)], atol=1e-9)

    def test_projection_recorded(self):
        sequence = simulate_sequence(single_object_scenario())
        box2d = sequence.frames[0].objects[0].box2d
        self.assertAlmostEqual((box2d.u_min + box2d.u_max) / 2, 640.0, places=6)


class CorruptionTests(SimpleTestCase):
    def setUp(self):
        self.sequence = simulate_sequence(group_scenario(count=10, duration=30))

    def test_identity_model(self):
        result = corrupt_detections(self.sequence, CorruptionModel())
        self.assertEqual(result.ledger.events, ())
        expected = TrackSet.from_sequence(self.sequence)
        for frame_index in expected.frame_indices():
            self.assertEqual(
                [(o.track_id, o.box) for o in result.tracks.get(frame_index)],
                [(o.track_id, o.box) for o in expected.get(frame_index)],
            )
        self.assertEqual(len(result.detections.all()), len(expected.all()))

    def test_false_negatives_follow_draw_order(self):
        model = CorruptionModel(fn_rate=0.3, seed=5)
        result = corrupt_detections(self.sequence, model)

        rng = random_stream(5)
        expected = []
        for frame in self.sequence.frames:
            objects = sorted(frame.objects, key=lambda o: o.track_id)
            for _ in objects:
                rng.random()
            for obj in objects:
                if rng.random() < 0.3:
                    expected.append((frame.frame_index, obj.track_id))
                rng.standard_normal(3)
                rng.random()
            rng.poisson(0.0)
        observed = [
            (e.frame_index, e.track_id)
            for e in result.ledger.events
            if e.kind is EventKind.FALSE_NEGATIVE
        ]
        self.assertEqual(observed, expected)
        self.assertGreater(len(expected), 0)

    def test_ledger_matches_clear(self):
        model = CorruptionModel(fn_rate=0.1, fp_rate=0.5, idswitch_rate=0.05, seed=3)
        result = corrupt_detections(self.sequence, model)
        ledger = result.ledger
        self.assertGreater(ledger.count('fp'), 0)
        self.assertGreater(ledger.count(EventKind.SWITCH), 0)
        gt = TrackSet.from_sequence(self.sequence)
        self.assertEqual(
            clear_mot(gt, result.tracks, ObjectClass.MAV, 4.0),
            ledger.expected_clear(ObjectClass.MAV),
        )

    def test_false_positives_away_from_ground_truth(self):
        result = corrupt_detections(self.sequence, CorruptionModel(fp_rate=1.0, seed=9))
        gt_ids = {o.track_id for o in TrackSet.from_sequence(self.sequence).all()}
        for frame in self.sequence.frames:
            gts = np.array([o.pose.position for o in frame.objects])
            for obj in result.tracks.get(frame.frame_index):
                if obj.track_id in gt_ids:
                    continue
                self.assertGreater(np.linalg.norm(gts - obj.pose.position, axis=1).min(), 4.0)
                self.assertEqual(obj.score, 0.5)

    def test_scores(self):
        model = CorruptionModel(tp_score=0.8, score_jitter=0.1, seed=1)
        scores = [d.score for d in corrupt_detections(self.sequence, model).detections.all()]
        self.assertTrue(all(0.7 - 1e-12 <= s <= 0.9 + 1e-12 for s in scores))
        self.assertGreater(len(set(scores)), 1)

    def test_ledger_frame(self):
        model = CorruptionModel(fn_rate=0.2, seed=2)
        df = corrupt_detections(self.sequence, model).ledger.to_frame()
        self.assertEqual(list(df.columns), LEDGER_COLUMNS)
        self.assertEqual(set(df['event']), {'fn'})


class ScenarioFileTests(SimpleTestCase):
    def setUp(self):
        self._tmp = tempfile.TemporaryDirectory()
        self.tmp = Path(self._tmp.name)

    def tearDown(self):
        self._tmp.cleanup()

    def test_document(self):
        spec = scenario_from_document(copy.deepcopy(SCENARIO))
        self.assertEqual(spec.sequence_id, 's1')
        self.assertEqual(spec.duration, 5)
        self.assertEqual(len(spec.objects), 2)
        self.assertEqual(spec.groups[0].count, 3)
        # [corruption] の seed は [scenario] から引き継ぐ
        self.assertEqual(spec.corruption, CorruptionModel(fn_rate=0.1, seed=4))
        sequence = simulate_sequence(spec)
        self.assertEqual(len(sequence.frames[0].objects), 5)

    def test_unknown_key(self):
        document = copy.deepcopy(SCENARIO)
        document['objects'][0]['colour'] = 'red'
        with self.assertRaisesRegex(SpecError, 'colour'):
            scenario_from_document(document)

    def test_missing_key(self):
        document = copy.deepcopy(SCENARIO)
        del document['scenario']['duration']
        with self.assertRaisesRegex(SpecError, 'duration'):
            scenario_from_document(document)

    def test_invalid_values(self):
        document = copy.deepcopy(SCENARIO)
        document['corruption']['fn_rate'] = 1.5
        with self.assertRaises(SpecError):
            scenario_from_document(document)
        document = copy.deepcopy(SCENARIO)
        document['objects'][0]['size'] = [1, 1]
        with self.assertRaises(SpecError):
            scenario_from_document(document)

    def test_waypoint_without_points(self):
        document = copy.deepcopy(SCENARIO)
        document['objects'][0]['trajectory'] = 'waypoint'
        with self.assertRaises(DegenerateSpec):
            scenario_from_document(document)

    def test_load(self):
        path = self.tmp / 'chase.toml'
        path.write_text(
            '[scenario]\nsequence_id = "chase"\nduration = 3\nfps = 1.0\n\n'
            '[camera]\nfx = 640\nfy = 640\ncx = 640\ncy = 360\nwidth = 1280\nheight = 720\n\n'
            '[[objects]]\nclass = "Helicopter"\nsize = [12, 3, 4]\nstart = [0, 0, 80]\n',
            encoding='utf-8',
        )
        spec = load_scenario(path)
        self.assertEqual(spec.objects[0].class_id, ObjectClass.HELICOPTER)
        self.assertIsNone(spec.corruption)
        self.assertEqual(spec.seed, 0)

    def test_load_errors(self):
        with self.assertRaisesRegex(InputError, 'none.toml'):
            load_scenario(self.tmp / 'none.toml')
        path = self.tmp / 'bad.toml'
        path.write_text('[scenario\n', encoding='utf-8')
        with self.assertRaisesRegex(SpecError, 'bad.toml'):
            load_scenario(path)
