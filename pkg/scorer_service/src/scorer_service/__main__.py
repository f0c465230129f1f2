"""``python -m scorer_service`` entry point."""

import sys

from .cli import main

sys.exit(main())
