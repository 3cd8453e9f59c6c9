#!/usr/bin/env python
"""Command-line front door: `python manage.py gen|train|predict|eval|overhead|sumrate ...`."""
import os
import sys


def main(argv=None) -> int:
    """Run a management command; returns the process exit status."""
    os.environ.setdefault('DJANGO_SETTINGS_MODULE', 'app.settings')
    try:
        from django.core.management import execute_from_command_line
    except ImportError as exc:
        raise ImportError(
            "Couldn't import Django. Are you sure it's installed and "
            "available on your PYTHONPATH environment variable? Did you "
            "forget to activate a virtual environment?"
        ) from exc
    argv = list(sys.argv if argv is None else argv)
    if argv and not argv[0].endswith("manage.py"):
        argv = ["manage.py", *argv]
    try:
        execute_from_command_line(argv)
    except SystemExit as exc:
        code = exc.code
        return code if isinstance(code, int) else (0 if code is None else 1)
    return 0


if __name__ == '__main__':
    sys.exit(main())
