import sys

from cavityqc.cli import main

sys.exit(main())
