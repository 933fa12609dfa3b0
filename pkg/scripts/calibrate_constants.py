#!/usr/bin/env python3
"""Print the empirically calibrated envelope constants.

The Hermite envelope bounds carry constants that are only asserted to exist;
this script reports the grid-search values the package uses (before the 1.05
safety margin applied in the chaos-term envelope).
"""

import math

from siltkit.specfun import (
    calibrate_log_branch_constant,
    calibrate_szego_constant,
)


def main():
    for alpha in (0.25, 0.5):
        c = calibrate_szego_constant(alpha, 200)
        power = (8 * alpha - 1) / 12
        print(f"szego-type constant at alpha={alpha}: c = {c:.6f}  "
              f"(|H_n(x)| e^(-{alpha} x^2) <= c sqrt(n!) (n or 1)^-{power:.4f})")
    c0 = calibrate_log_branch_constant()
    print(f"log-branch constant: c0 = {c0:.6f}  "
          f"(planar order-0 term <= c0 log(1/|u|); 1/pi = {1 / math.pi:.6f})")


if __name__ == "__main__":
    main()
