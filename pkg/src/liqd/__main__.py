import sys

from liqd.cli import main

sys.exit(main())
