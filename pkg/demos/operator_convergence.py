"""How fast the lattice operator L_N approaches its continuum limit.

The odd part of an asymmetric kernel carries a lattice error of order
N^{alpha-1} for alpha < 1, so doubling N shrinks the distance only by
2^{1-alpha}.  For alpha < 1 a symmetric kernel converges much faster.
"""
from __future__ import annotations

from zrpfluct.experiments import operator_convergence


def main():
    for c in ((0.75, 0.25), (0.5, 0.5)):
        for alpha in (0.5, 0.75, 1.25, 1.5):
            r = operator_convergence(alpha, Ns=(128, 256, 512), c=c)
            d = r["distances"]
            print(f"c={c}  alpha={alpha:4.2f}  sup: " + "  ".join(f"N={N}: {d[N][0]:.3e}" for N in d)
                  + f"   ratio 256->512: {d[256][0] / d[512][0]:.3f}")


if __name__ == "__main__":
    main()
