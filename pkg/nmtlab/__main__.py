"""Allow ``python -m nmtlab``."""
import sys

from .cli import main

sys.exit(main())
