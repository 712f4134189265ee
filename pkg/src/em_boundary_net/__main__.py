"""Entry point for `python -m em_boundary_net`."""

import sys

from .cli.main import main

sys.exit(main())
