import sys

from secest.cli import main

sys.exit(main())
