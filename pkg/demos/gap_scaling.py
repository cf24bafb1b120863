"""Inverse spectral gap of the canonical box dynamics against the block size.

Linear rates make the particles independent, so W does not depend on the
particle number.  The log-log slope creeps up towards alpha as the box grows.
"""
from __future__ import annotations

from zrpfluct.experiments import gap_scaling


def main():
    for alpha in (0.75, 1.5):
        for ells in ((1, 2, 3, 4), (4, 6, 8, 10), (10, 20, 40)):
            g = gap_scaling(alpha, ells=ells, totals=(1,))
            print(f"alpha={alpha:4.2f}  ell={ells}  slope {g['slope']:.3f}")


if __name__ == "__main__":
    main()
