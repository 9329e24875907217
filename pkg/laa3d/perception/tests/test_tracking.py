import numpy as np
from django.test import SimpleTestCase

from perception.config import default_class_config
from perception.exceptions import (
    InputError,
    InsufficientHistory,
    InvariantError,
    LengthMismatch,
    SingularInnovation,
)
from perception.geometry import Extrinsic
from perception.metrics.mot import evaluate_tracking
from perception.schema import Detection, DetectionSet, ObjectClass, TrackSet
from perception.synthgen.generator import simulate_sequence
from perception.tests.factories import (
    group_scenario,
    make_box,
    make_object,
    make_sequence,
    self_detections,
)
from perception.tracking.kalman import KalmanState, kalman_predict, kalman_update
from perception.tracking.tracker import Tracker, TrackerParams, run_tracker, track_sequence
from perception.tracking.trajectory import (
    SUMMARY_COLUMNS,
    ade_fde,
    evaluate_prediction,
    predict_trajectory,
    prediction_windows,
    summarize_prediction,
)


class KalmanTests(SimpleTestCase):
    def test_predict_moves_by_velocity(self):
        state = kalman_predict(KalmanState.initial((0, 0, 0), (1, 2, 3)), 2.0)
        np.testing.assert_allclose(state.position, [2.0, 4.0, 6.0])
        np.testing.assert_allclose(state.velocity, [1.0, 2.0, 3.0])
        self.assertGreater(state.covariance[0, 0], 10.0)

    def test_update_pulls_towards_observation(self):
        state = kalman_update(KalmanState.initial((0, 0, 0)), (1, 1, 1), noise=0.1)
        np.testing.assert_allclose(state.position, [10.0 / 10.1] * 3)
        np.testing.assert_allclose(state.velocity, [0.0, 0.0, 0.0])
        self.assertLess(state.covariance[0, 0], 0.1)

    def test_non_positive_dt(self):
        for dt in (0.0, -0.1):
            with self.assertRaises(InvariantError):
                kalman_predict(KalmanState.initial((0, 0, 0)), dt)

    def test_singular_innovation(self):
        state = KalmanState(np.zeros(6), np.diag([1e15, 1.0, 1.0, 1.0, 1.0, 1.0]))
        with self.assertRaises(SingularInnovation):
            kalman_update(state, (0, 0, 0))

    def test_covariance_stays_symmetric_psd(self):
        rng = np.random.default_rng(3)
        state = KalmanState.initial((0, 0, 0))
        for k in range(100_000):
            state = kalman_predict(state, 0.1)
            state = kalman_update(state, rng.normal(size=3) + 0.1 * k)
        np.testing.assert_array_equal(state.covariance, state.covariance.T)
        self.assertGreaterEqual(np.linalg.eigvalsh(state.covariance).min(), -1e-9)

    def test_rejects_indefinite_covariance(self):
        covariance = np.eye(6)
        covariance[0, 1] = covariance[1, 0] = 2.0
        with self.assertRaisesRegex(InvariantError, 'positive semi-definite'):
            KalmanState(np.zeros(6), covariance)
        with self.assertRaises(InvariantError):
            KalmanState(np.zeros(6), -np.eye(6))


def stationary_detections(frames) -> DetectionSet:
    return DetectionSet.from_detections(
        Detection(k, ObjectClass.MAV, 0.9, make_box(0.0, 0.0, 20.0)) for k in frames
    )


class TrackerTests(SimpleTestCase):
    def setUp(self):
        self.config = default_class_config()

    def test_single_object_single_id(self):
        detections = DetectionSet.from_detections(
            Detection(k, 'MAV', 0.9, make_box(0.5 * k, 0.0, 20.0)) for k in range(20)
        )
        tracks = run_tracker(detections, TrackerParams(), self.config)
        self.assertEqual({o.track_id for o in tracks.all()}, {0})
        # 確定前のフレームもさかのぼって出力される
        self.assertEqual(tracks.frame_indices(), list(range(20)))

    def test_unconfirmed_track_not_output(self):
        tracks = run_tracker(stationary_detections([0, 1]), TrackerParams(), self.config)
        self.assertEqual(len(tracks.all()), 0)

    def test_gap_within_max_age_keeps_id(self):
        frames = [*range(5), *range(7, 12)]
        tracks = run_tracker(stationary_detections(frames), TrackerParams(max_age=2), self.config)
        self.assertEqual({o.track_id for o in tracks.all()}, {0})

    def test_gap_beyond_max_age_starts_new_track(self):
        frames = [*range(5), *range(8, 13)]
        tracks = run_tracker(stationary_detections(frames), TrackerParams(max_age=2), self.config)
        self.assertEqual({o.track_id for o in tracks.get(4)}, {0})
        self.assertEqual({o.track_id for o in tracks.get(12)}, {1})

    def test_dead_tracks_are_dropped(self):
        # 3 フレームごとに位置を大きく変え、毎回新しいトラックを作らせる
        detections = DetectionSet.from_detections(
            Detection(k, 'MAV', 0.9, make_box(50.0 * (k // 3), 0.0, 20.0)) for k in range(300)
        )
        tracker = Tracker(TrackerParams(max_age=2), self.config)
        sizes = []
        for k in range(300):
            tracker.step(k, detections[k], 1.0)
            sizes.append(len(tracker.tracks))
        self.assertLessEqual(max(sizes), 2)
        self.assertTrue(all(track.alive for track in tracker.tracks))
        self.assertEqual(len({o.track_id for o in tracker.result().all()}), 100)

    def test_classes_tracked_separately(self):
        detections = DetectionSet.from_detections(
            [Detection(k, 'MAV', 0.9, make_box(0.0, 0.0, 20.0)) for k in range(3)]
            + [Detection(k, 'eVTOL', 0.9, make_box(0.0, 0.0, 20.0)) for k in range(3)]
        )
        tracks = run_tracker(detections, TrackerParams(), self.config)
        self.assertEqual(len({o.track_id for o in tracks.all()}), 2)

    def test_group_scenario(self):
        sequence = simulate_sequence(group_scenario(count=20, duration=200))
        tracks = track_sequence(
            self_detections(sequence), TrackerParams(), self.config, sequence, world=True
        )
        counts = evaluate_tracking(sequence, tracks, self.config)[ObjectClass.MAV]
        self.assertGreaterEqual(counts.clear.mota, 95.0)
        self.assertEqual(counts.clear.idsw, 0)

    def test_world_frame_output_in_camera_coordinates(self):
        frames = [[make_object('MAV', 0, 0.2 * k, 0, 20)] for k in range(6)]
        moving = make_sequence(frames, extrinsic=Extrinsic(translation=(100.0, 5.0, 0.0)))
        detections = self_detections(moving)
        world = track_sequence(detections, TrackerParams(), self.config, moving, world=True)
        camera = track_sequence(detections, TrackerParams(), self.config, moving)
        for a, b in zip(world.all(), camera.all()):
            np.testing.assert_allclose(a.pose.position, b.pose.position, atol=1e-9)

    def test_empty(self):
        self.assertEqual(
            track_sequence(DetectionSet(), TrackerParams(), self.config), TrackSet()
        )

    def test_world_without_sequence(self):
        with self.assertRaises(InputError):
            track_sequence(stationary_detections([0]), TrackerParams(), self.config, world=True)

    def test_frames_missing_from_sequence(self):
        sequence = make_sequence([[make_object('MAV', 0, 0, 0, 20)]])
        with self.assertRaises(InputError):
            track_sequence(stationary_detections([0, 5]), TrackerParams(), self.config, sequence)

    def test_params(self):
        with self.assertRaises(InvariantError):
            TrackerParams(min_hits=0)
        with self.assertRaises(InputError):
            TrackerParams.from_settings({'max_age': 1, 'lifetime': 3})
        params = TrackerParams(gates={'MAV': 2.0})
        self.assertEqual(params.gate(ObjectClass.MAV, self.config), 2.0)
        self.assertEqual(params.gate(ObjectClass.EVTOL, self.config), 6.0)


class TrajectoryTests(SimpleTestCase):
    def test_linear_motion(self):
        predicted = predict_trajectory([0, 1, 2], [(0, 0, 0), (1, 0, 0), (2, 0, 0)], 10)
        expected = np.array([(x, 0.0, 0.0) for x in range(3, 13)])
        np.testing.assert_allclose(predicted, expected, atol=1e-9)

    def test_stationary(self):
        predicted = predict_trajectory([0, 1, 2, 3], [(5, 1, 30)] * 4, 4)
        np.testing.assert_allclose(predicted, [(5, 1, 30)] * 4, atol=1e-9)

    def test_future_times(self):
        predicted = predict_trajectory([0, 1], [(0, 0, 0), (2, 0, 0)], 2, future_times=[3, 5])
        np.testing.assert_allclose(predicted[:, 0], [6.0, 10.0], atol=1e-9)

    def test_ade_fde(self):
        ade, fde = ade_fde([(0, 0, 0), (0, 0, 0)], [(0.1, 0, 0), (1.0, 0, 0)])
        self.assertAlmostEqual(ade, 0.55)
        self.assertAlmostEqual(fde, 1.0)

    def test_invalid_history(self):
        with self.assertRaises(InsufficientHistory):
            predict_trajectory([0], [(0, 0, 0)], 3)
        with self.assertRaises(LengthMismatch):
            predict_trajectory([0, 1, 2], [(0, 0, 0), (1, 0, 0)], 3)
        with self.assertRaises(InvariantError):
            predict_trajectory([0, 0], [(0, 0, 0), (1, 0, 0)], 3)
        with self.assertRaises(LengthMismatch):
            ade_fde([], [])

    def setUp(self):
        # トラック 0 は 15 フレーム等速、トラック 1 は 5 フレームで消える
        self.frames = [
            [make_object('MAV', 0, 0.5 * k, 0, 20)]
            + ([make_object('MAV', 1, -5, 0, 30)] if k < 5 else [])
            for k in range(15)
        ]

    def test_windows(self):
        windows, tracks = prediction_windows(make_sequence(self.frames), history=3, horizon=10)
        self.assertEqual(list(windows['start_frame']), [0, 1, 2])
        self.assertTrue(np.all(windows['ADE'] < 1e-6))
        self.assertEqual(list(tracks['skipped']), [False, True])

        summary = summarize_prediction(windows, tracks)
        self.assertEqual(list(summary.columns), SUMMARY_COLUMNS)
        self.assertEqual(list(summary['class']), ['MAV', 'all'])
        self.assertEqual(summary.loc[0, 'n_windows'], 3)
        self.assertEqual(summary.loc[0, 'n_skipped'], 1)

    def test_evaluate_several_sequences(self):
        sequences = [make_sequence(self.frames, 'a'), make_sequence(self.frames, 'b')]
        summary = evaluate_prediction(sequences, history=3, horizon=10)
        total = summary[summary['class'] == 'all'].iloc[0]
        self.assertEqual((total['n_tracks'], total['n_windows'], total['n_skipped']), (4, 6, 2))
        self.assertLess(total['FDE'], 1e-6)

    def test_evaluate_nothing(self):
        summary = evaluate_prediction([])
        self.assertEqual(list(summary['class']), ['all'])
        self.assertEqual(summary.loc[0, 'n_windows'], 0)
        self.assertTrue(np.isnan(summary.loc[0, 'ADE']))

    def test_invalid_window(self):
        with self.assertRaises(InvariantError):
            prediction_windows(make_sequence([[]]), history=1)
