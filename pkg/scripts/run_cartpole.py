#!/usr/bin/env python3
"""Full-scale cart-pole run: 49 networks, 100 generations, 25,000 episodes."""
import sys

from funcnet.cli import main

if __name__ == "__main__":
    sys.exit(main(["run", "--task", "cartpole", "--n", "49",
                   "--generations", "100", *sys.argv[1:]]))
