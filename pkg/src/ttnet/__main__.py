import sys

from ttnet.cli import main

sys.exit(main())
