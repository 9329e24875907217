import tempfile
from pathlib import Path

from django.test import SimpleTestCase

from perception.exceptions import (
    InputError,
    InvariantError,
    ParseError,
    SchemaError,
    ScoreRangeError,
)
from perception.formats import (
    DETECTION_HEADER,
    SEQUENCE_HEADER,
    TRACK_HEADER,
    format_number,
    load_detections,
    load_sequence,
    load_tracks,
    write_detections,
    write_sequence,
    write_tracks,
)
from perception.schema import Detection, DetectionSet, Frame, ObjectClass, Sequence, TrackedObject
from perception.synthgen.generator import simulate_sequence
from perception.tests.factories import (
    CAMERA,
    group_scenario,
    make_box,
    make_object,
    make_sequence,
    self_detections,
    self_tracks,
)


class FormatTestCase(SimpleTestCase):
    def setUp(self):
        self._tmp = tempfile.TemporaryDirectory()
        self.tmp = Path(self._tmp.name)

    def tearDown(self):
        self._tmp.cleanup()

    def write(self, name: str, text: str) -> Path:
        path = self.tmp / name
        path.write_text(text, encoding='utf-8')
        return path


class SequenceFormatTests(FormatTestCase):
    def test_roundtrip(self):
        sequence = simulate_sequence(group_scenario(count=5, duration=4))
        path = write_sequence(sequence, self.tmp / 'a.seq')
        self.assertEqual(load_sequence(path), sequence)

    def test_deterministic_bytes(self):
        sequence = simulate_sequence(group_scenario(count=5, duration=4))
        write_sequence(sequence, self.tmp / 'a.seq')
        write_sequence(load_sequence(self.tmp / 'a.seq'), self.tmp / 'b.seq')
        self.assertEqual(
            (self.tmp / 'a.seq').read_bytes(), (self.tmp / 'b.seq').read_bytes()
        )

    def test_missing_box2d_is_projected(self):
        sequence = make_sequence([[make_object('MAV', 0, 0, 0, 10)]])
        path = write_sequence(sequence, self.tmp / 'a.seq')
        text = path.read_text().replace(
            '\t'.join(format_number(v) for v in _box2d_values(sequence)), '-\t-\t-\t-'
        )
        path.write_text(text)
        loaded = load_sequence(path).frames[0].objects[0]
        self.assertIsNotNone(loaded.box2d)
        self.assertAlmostEqual(loaded.box2d.u_min, sequence.frames[0].objects[0].box2d.u_min)

    def test_no_frames(self):
        path = self.write('a.seq', f'{SEQUENCE_HEADER}\nSEQ\ts\t10\n')
        with self.assertRaises(InvariantError):
            load_sequence(path)

    def test_duplicate_track_id(self):
        frame = 'FRAME\t0\t0\t640\t640\t640\t360\t1280\t720\t1\t0\t0\t0\t1\t0\t0\t0\t1\t0\t0\t0'
        obj = 'OBJ\tMAV\t\t3\t0\t0\t10\t0\t0\t0\t1\t1\t1\t-\t-\t-\t-'
        path = self.write('a.seq', f'{SEQUENCE_HEADER}\nSEQ\ts\t10\n{frame}\n{obj}\n{obj}\n')
        with self.assertRaisesRegex(InvariantError, 'frame 0'):
            load_sequence(path)

    def test_bad_header(self):
        path = self.write('a.seq', 'LAA3D-SEQ v2\nSEQ\ts\t10\n')
        with self.assertRaises(ParseError) as cm:
            load_sequence(path)
        self.assertEqual(cm.exception.line, 1)

    def test_short_record(self):
        path = self.write('a.seq', f'{SEQUENCE_HEADER}\nSEQ\ts\n')
        with self.assertRaises(SchemaError) as cm:
            load_sequence(path)
        self.assertEqual(cm.exception.line, 2)

    def test_invalid_utf8(self):
        path = self.tmp / 'a.seq'
        path.write_bytes(f'{SEQUENCE_HEADER}\n'.encode() + b'\xff\xfe\n')
        with self.assertRaises(ParseError) as cm:
            load_sequence(path)
        self.assertEqual(cm.exception.line, 2)

    def test_invalid_geometry_reports_line(self):
        frame = 'FRAME\t0\t0\t640\t640\t640\t360\t1280\t720\t2\t0\t0\t0\t1\t0\t0\t0\t1\t0\t0\t0'
        path = self.write('a.seq', f'{SEQUENCE_HEADER}\nSEQ\ts\t10\n{frame}\n')
        with self.assertRaisesRegex(ParseError, 'orthonormal') as cm:
            load_sequence(path)
        self.assertEqual(cm.exception.line, 3)

    def test_rejects_invalid_sequence_before_writing(self):
        frame = Frame(0, 0.0, CAMERA)
        sequence = Sequence('s', 10.0, (frame,))
        object.__setattr__(sequence, 'frames', (frame, frame))
        with self.assertRaises(InvariantError):
            write_sequence(sequence, self.tmp / 'a.seq')
        self.assertFalse((self.tmp / 'a.seq').exists())

    def test_missing_file(self):
        with self.assertRaisesRegex(InputError, 'nothere.seq'):
            load_sequence(self.tmp / 'nothere.seq')


def _box2d_values(sequence):
    b = sequence.frames[0].objects[0].box2d
    return b.u_min, b.v_min, b.u_max, b.v_max


class DetectionFormatTests(FormatTestCase):
    def test_roundtrip_mixed_classes(self):
        sequence = make_sequence(
            [
                [make_object('MAV', 0, 1, 0, 20), make_object('Helicopter', 1, -5, 1, 60)],
                [make_object('eVTOL', 2, 3, 0, 40)],
            ]
        )
        detections = self_detections(sequence, score=0.75)
        loaded = load_detections(write_detections(detections, self.tmp / 'a.det'))
        self.assertEqual(loaded, detections)
        self.assertEqual(
            [d.class_id for d in loaded[0]], [ObjectClass.MAV, ObjectClass.HELICOPTER]
        )

    def test_empty_file(self):
        self.assertEqual(len(load_detections(self.write('a.det', ''))), 0)
        self.assertEqual(len(load_detections(self.write('b.det', f'{DETECTION_HEADER}\n'))), 0)

    def test_score_out_of_range(self):
        path = self.write(
            'a.det', f'{DETECTION_HEADER}\n0\tMAV\t1.2\t0\t0\t10\t0\t0\t0\t1\t1\t1\n'
        )
        with self.assertRaises(ScoreRangeError) as cm:
            load_detections(path)
        self.assertEqual(cm.exception.line, 2)

    def test_unknown_class(self):
        path = self.write(
            'a.det', f'{DETECTION_HEADER}\n0\tBalloon\t0.5\t0\t0\t10\t0\t0\t0\t1\t1\t1\n'
        )
        with self.assertRaisesRegex(ParseError, 'Balloon'):
            load_detections(path)

    def test_wrong_field_count(self):
        path = self.write('a.det', f'{DETECTION_HEADER}\n0\tMAV\t0.5\t0\t0\t10\n')
        with self.assertRaises(SchemaError):
            load_detections(path)

    def test_extra_fields_report_line(self):
        row = '0\tMAV\t0.5\t0\t0\t10\t0\t0\t0\t1\t1\t1'
        path = self.write('a.det', f'{DETECTION_HEADER}\n{row}\n\n{row}\t7\n')
        with self.assertRaises(SchemaError) as cm:
            load_detections(path)
        self.assertEqual(cm.exception.line, 4)

    def test_negative_frame_index(self):
        with self.assertRaisesRegex(InvariantError, 'frame_index'):
            Detection(-1, 'MAV', 0.5, make_box(0, 0, 10))
        with self.assertRaisesRegex(InvariantError, 'frame_index'):
            TrackedObject(-1, 0, 'MAV', make_box(0, 0, 10))
        path = self.write(
            'a.det', f'{DETECTION_HEADER}\n-3\tMAV\t0.5\t0\t0\t10\t0\t0\t0\t1\t1\t1\n'
        )
        with self.assertRaises(ParseError) as cm:
            load_detections(path)
        self.assertEqual(cm.exception.line, 2)

    def test_invalid_utf8(self):
        path = self.tmp / 'a.det'
        path.write_bytes(f'{DETECTION_HEADER}\n0\tMAV\t'.encode() + b'\xe9\n')
        with self.assertRaises(ParseError) as cm:
            load_detections(path)
        self.assertEqual(cm.exception.line, 2)

    def test_deterministic_bytes(self):
        detections = DetectionSet.from_detections(
            [Detection(3, 'MAV', 0.1 + 0.2, make_box(1 / 3, 0, 10))]
        )
        first = write_detections(detections, self.tmp / 'a.det').read_bytes()
        second = write_detections(load_detections(self.tmp / 'a.det'), self.tmp / 'b.det')
        self.assertEqual(first, second.read_bytes())


class TrackFormatTests(FormatTestCase):
    def test_roundtrip(self):
        tracks = self_tracks(simulate_sequence(group_scenario(count=3, duration=3)))
        loaded = load_tracks(write_tracks(tracks, self.tmp / 'a.trk'))
        self.assertEqual(loaded, tracks)

    def test_duplicate_track_in_frame(self):
        row = '0\t4\tMAV\t1\t0\t0\t10\t0\t0\t0\t1\t1\t1'
        path = self.write('a.trk', f'{TRACK_HEADER}\n{row}\n{row}\n')
        with self.assertRaises(InvariantError):
            load_tracks(path)

    def test_fractional_track_id(self):
        path = self.write('a.trk', f'{TRACK_HEADER}\n0\t1.5\tMAV\t1\t0\t0\t10\t0\t0\t0\t1\t1\t1\n')
        with self.assertRaises(ParseError):
            load_tracks(path)
