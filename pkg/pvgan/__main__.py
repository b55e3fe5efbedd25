import sys

from pvgan.cli import main

sys.exit(main())
