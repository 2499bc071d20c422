"""Allow ``python -m stquantile``."""

import sys

from .cli import main

sys.exit(main())
