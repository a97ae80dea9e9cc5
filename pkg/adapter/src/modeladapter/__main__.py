import sys

from modeladapter.cli import main

sys.exit(main())
