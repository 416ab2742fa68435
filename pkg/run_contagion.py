"""
Main script for bank-asset contagion experiments.
Usage: python run_contagion.py COMMAND [options]   (see --help)
"""

import sys

from contagion.cli import main


if __name__ == "__main__":
    sys.exit(main())
