#!/usr/bin/env python3
"""Full-scale pursuit-game run: 49 networks, 100 generations.

Pass extra CLI flags to override, e.g. --task tag-predator --seed 3.
"""
import sys

from funcnet.cli import main

if __name__ == "__main__":
    sys.exit(main(["run", "--task", "tag", "--n", "49",
                   "--generations", "100", *sys.argv[1:]]))
