import tempfile
from pathlib import Path

from django.test import SimpleTestCase, override_settings

from perception.config import (
    default_class_config,
    load_config,
    resolve_class_config,
    resolve_settings,
)
from perception.exceptions import InputError
from perception.schema import ObjectClass


class ClassConfigTests(SimpleTestCase):
    def test_published_constants(self):
        config = default_class_config()
        self.assertEqual(config[ObjectClass.MAV].ap_thresholds, (1.0, 2.0, 4.0, 8.0))
        self.assertEqual(config['eVTOL'].ap_thresholds, (1.5, 3.0, 6.0, 12.0))
        self.assertEqual(config['Helicopter'].mot_threshold, 12.0)
        self.assertEqual(config['eVTOL'].depth_range, 150.0)
        self.assertEqual(
            [config[c].tp_max_translation for c in ObjectClass], [4.0, 6.0, 12.0]
        )

    def test_override(self):
        config = resolve_class_config({'MAV': {'mot_threshold': 2.5}})
        self.assertEqual(config['MAV'].mot_threshold, 2.5)
        self.assertEqual(config['MAV'].ap_thresholds, (1.0, 2.0, 4.0, 8.0))
        self.assertEqual(config['eVTOL'], default_class_config()['eVTOL'])

    def test_invalid_override(self):
        with self.assertRaises(InputError):
            resolve_class_config({'MAV': {'gate': 3.0}})
        with self.assertRaises(InputError):
            resolve_class_config({'Balloon': {'mot_threshold': 3.0}})
        with self.assertRaises(InputError):
            resolve_class_config({'MAV': {'ap_thresholds': [2.0, 1.0]}})


class ConfigFileTests(SimpleTestCase):
    def setUp(self):
        self._tmp = tempfile.TemporaryDirectory()
        self.tmp = Path(self._tmp.name)

    def tearDown(self):
        self._tmp.cleanup()

    def write(self, text: str) -> Path:
        path = self.tmp / 'config.toml'
        path.write_text(text, encoding='utf-8')
        return path

    def test_file_overrides_settings(self):
        document = load_config(
            self.write(
                '[tracker]\nmax_age = 5\n\n[mot]\nframe = "camera"\n\n'
                '[classes.Helicopter]\nmot_threshold = 20.0\n'
            )
        )
        resolved = resolve_settings(document)
        self.assertEqual(resolved['TRACKER']['max_age'], 5)
        self.assertEqual(resolved['TRACKER']['min_hits'], 3)
        self.assertEqual(resolved['MOT']['frame'], 'camera')
        self.assertEqual(resolved['CLASS_CONFIG']['Helicopter'].mot_threshold, 20.0)

    def test_unknown_keys(self):
        with self.assertRaisesRegex(InputError, 'max_agee'):
            load_config(self.write('[tracker]\nmax_agee = 5\n'))
        with self.assertRaisesRegex(InputError, 'trackers'):
            load_config(self.write('[trackers]\nmax_age = 5\n'))

    def test_malformed_toml(self):
        with self.assertRaises(InputError):
            load_config(self.write('[tracker\n'))

    def test_missing_file(self):
        with self.assertRaisesRegex(InputError, 'none.toml'):
            load_config(self.tmp / 'none.toml')

    def test_resolve_does_not_mutate_settings(self):
        resolved = resolve_settings({'tracker': {'max_age': 9}})
        resolved['TRACKER']['min_hits'] = 99
        self.assertEqual(resolve_settings()['TRACKER']['max_age'], 2)
        self.assertEqual(resolve_settings()['TRACKER']['min_hits'], 3)

    @override_settings(
        LAA3D={
            'CLASS_CONFIG': {'MAV': {'mot_threshold': 3.0}},
            'DETECTION': {},
            'MOT': {},
            'TRACKER': {},
            'PREDICTION': {},
            'DEPTH': {},
            'JOBS': 1,
            'SEED': 0,
        }
    )
    def test_settings_class_config(self):
        self.assertEqual(resolve_settings()['CLASS_CONFIG']['MAV'].mot_threshold, 3.0)

        # ファイルで別のフィールドを上書きしても settings の値は残る
        resolved = resolve_settings({'classes': {'MAV': {'ap_thresholds': [0.5, 1.0]}}})
        mav = resolved['CLASS_CONFIG']['MAV']
        self.assertEqual(mav.mot_threshold, 3.0)
        self.assertEqual(mav.ap_thresholds, (0.5, 1.0))
        self.assertEqual(mav.depth_range, 100.0)

    def test_non_utf8_file(self):
        path = self.tmp / 'config.toml'
        path.write_bytes(b'[tracker]\nmax_age = 5 # \xff\n')
        with self.assertRaisesRegex(InputError, 'config.toml'):
            load_config(path)
