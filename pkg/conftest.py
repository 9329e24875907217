"""Configure Django so pytest can collect the perception test suite."""

import os
import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent / 'laa3d'))
os.environ.setdefault('DJANGO_SETTINGS_MODULE', 'laa3d.settings')

import django  # noqa: E402

django.setup()
