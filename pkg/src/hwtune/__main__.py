import sys

from hwtune.cli import main

sys.exit(main())
