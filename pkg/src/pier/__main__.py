"""Module entry point: ``python -m pier``."""

import sys

from .cli import main

sys.exit(main())
