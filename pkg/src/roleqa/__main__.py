import sys

from roleqa.cli import main

sys.exit(main())
