#!/usr/bin/env python3
"""Full-scale digit-classification run: 49 networks, 100 generations,
2400 training batches per member.

Needs the four IDX files; point --mnist-dir or FUNCNET_MNIST_DIR at them.
"""
import sys

from funcnet.cli import main

if __name__ == "__main__":
    sys.exit(main(["run", "--task", "mnist", "--n", "49",
                   "--generations", "100", *sys.argv[1:]]))
