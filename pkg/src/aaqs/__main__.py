import sys

from aaqs.cli import main

sys.exit(main())
