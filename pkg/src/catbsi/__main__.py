import sys

from catbsi.cli import main

sys.exit(main())
