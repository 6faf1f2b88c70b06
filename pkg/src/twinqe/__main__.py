"""Run the command-line interface with ``python -m twinqe``."""
import sys

from .cli import main

sys.exit(main())
