import sys

from linfvar.cli import main

sys.exit(main())
