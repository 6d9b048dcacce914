import sys

from ridesim.cli import main

sys.exit(main())
