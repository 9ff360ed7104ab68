import sys

from uwqkd.cli import main

sys.exit(main())
