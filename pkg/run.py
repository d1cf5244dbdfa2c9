"""
kergpk - Generalized Kernel Two-Sample Tests
Command line entry point
"""

import sys

from kergpk.cli import main

if __name__ == "__main__":
    sys.exit(main())
