"""
Django settings for the laa3d toolkit.

データベースと Web 画面は使わず、management command と設定値の読み込みのためだけに
Django を利用する。評価のデフォルト値は ``LAA3D`` にまとめ、``--config`` で渡された
TOML と、コマンドラインのフラグで上書きされる (フラグ > 設定ファイル > ここ)。
"""

import os

# Build paths inside the project like this: os.path.join(BASE_DIR, ...)
BASE_DIR = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))

# Web 画面がないため未使用
SECRET_KEY = os.getenv('LAA3D_SECRET_KEY', 'laa3d-toolkit-no-web-surface')

DEBUG = False

ALLOWED_HOSTS = []


# Application definition

INSTALLED_APPS = [
    'perception',
]

# DB は使わない (dummy backend)
DATABASES = {}

USE_TZ = True

TIME_ZONE = 'UTC'


# Logging

LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'plain': {
            'format': '%(asctime)s %(levelname)s %(name)s: %(message)s',
        },
    },
    'handlers': {
        'console': {
            'class': 'logging.StreamHandler',
            'formatter': 'plain',
        },
    },
    'loggers': {
        'perception': {
            'handlers': ['console'],
            'level': os.getenv('LAA3D_LOG_LEVEL', 'WARNING'),
            'propagate': False,
        },
    },
}


# Evaluation defaults

LAA3D = {
    # None のときはベンチマーク既定のしきい値 (perception.config.default_class_config) を使う
    'CLASS_CONFIG': None,
    'DETECTION': {
        'size_error_mode': 'relative',
        'ap_trim': False,
    },
    'MOT': {
        'frame': 'world',
        'similarity': 'linear',
    },
    'TRACKER': {
        'max_age': 2,
        'min_hits': 3,
        'process_noise': 1.0,
        'measurement_noise': 0.1,
        'initial_position_variance': 10.0,
        'initial_velocity_variance': 100.0,
    },
    'PREDICTION': {
        'history': 3,
        'horizon': 10,
        'stride': 1,
    },
    'DEPTH': {
        'canonical_focal': 640.0,
        'bin_count': 100,
        'spacing': 'uniform',
    },
    'JOBS': int(os.getenv('LAA3D_JOBS', 1)),
    'SEED': int(os.getenv('LAA3D_SEED', 0)),
}
