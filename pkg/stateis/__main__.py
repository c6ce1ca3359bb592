"""Entry point for running StateIS as a module: python -m stateis"""

import sys

from .cli import main

if __name__ == "__main__":
    sys.exit(main())
