import sys

from signsynth.cli import main

sys.exit(main())
