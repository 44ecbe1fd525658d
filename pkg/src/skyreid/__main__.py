"""Allow ``python -m skyreid`` as an alias for the console command."""

import sys

from .cli import main

sys.exit(main())
