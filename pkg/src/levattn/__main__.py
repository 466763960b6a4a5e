import sys

from levattn.cli import main

sys.exit(main())
