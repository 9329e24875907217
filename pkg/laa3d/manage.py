#!/usr/bin/env python
"""LAA3D 評価ツールキットのコマンドラインエントリポイント

例: python manage.py eval-det gt/ det/ --out results/
"""

import os
import sys


def main():
    os.environ.setdefault('DJANGO_SETTINGS_MODULE', 'laa3d.settings')
    try:
        from django.core.management import execute_from_command_line
    except ImportError as exc:
        raise ImportError(
            "Couldn't import Django. Install the packages listed in requirements.txt "
            'and make sure the virtual environment is active.'
        ) from exc
    execute_from_command_line(sys.argv)


if __name__ == '__main__':
    main()
