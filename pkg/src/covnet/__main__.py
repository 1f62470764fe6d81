import sys

from covnet.cli import main

sys.exit(main())
