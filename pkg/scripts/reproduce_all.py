#!/usr/bin/env python3
"""Run every CLI experiment with its default configuration into out/.

Usage: python scripts/reproduce_all.py [--out DIR] [--seed N] [--fast]

--fast shrinks sample counts so the whole sweep finishes in well under a
minute; without it expect a few minutes (the transport row dominates).
"""

import argparse
import sys
import time

from siltkit.cli import main as cli_main

FULL = {
    "kernel": [],
    "hermite": [],
    "silt": [],
    "chaos": [],
    "dynkin": [],
    "marginal": [],
    "transport": [],
    "capacity": [],
}

FAST_OVERRIDES = {
    "silt": ["--replicas", "20", "--grid-m", "512", "--quad-order", "64"],
    "chaos": ["--paths", "6", "--grid-m", "512"],
    "dynkin": ["--replicas", "4", "--grid-m", "512", "--quad3-order", "16"],
    "marginal": ["--count", "2000"],
    "transport": ["--count", "800"],
    "capacity": ["--k-max", "32"],
}


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--out", default="out")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--fast", action="store_true")
    args = parser.parse_args()
    for command, extra in FULL.items():
        argv = [command, "--out", args.out, "--seed", str(args.seed)] + extra
        if args.fast:
            argv += FAST_OVERRIDES.get(command, [])
        start = time.time()
        code = cli_main(argv)
        print(f"{command:<10} exit={code} ({time.time() - start:5.1f}s)")
        if code != 0:
            return code
    return 0


if __name__ == "__main__":
    sys.exit(main())
