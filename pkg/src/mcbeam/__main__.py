import sys

from mcbeam.cli import main

sys.exit(main())
