import sys

from trendforge.cli import main

sys.exit(main())
