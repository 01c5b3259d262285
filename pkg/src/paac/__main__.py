import sys

from paac.cli import main

sys.exit(main())
