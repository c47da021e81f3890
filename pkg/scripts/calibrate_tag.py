#!/usr/bin/env python3
"""Estimate the random-walk first-meeting time that sets the catch reward."""
import sys

from funcnet.cli import main

if __name__ == "__main__":
    sys.exit(main(["calibrate-tag", *sys.argv[1:]]))
