#!/usr/bin/env python3
"""
Command-line entry point for the GRAD toolkit.
Run `python grad.py --help` for the list of commands.
"""
import sys

from src.cli import main

if __name__ == "__main__":
    sys.exit(main())
