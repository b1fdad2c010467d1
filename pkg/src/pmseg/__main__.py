import sys

from .cli_app import main

sys.exit(main())
