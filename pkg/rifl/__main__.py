"""`python -m rifl`"""

import sys

from rifl.cli import main

sys.exit(main())
