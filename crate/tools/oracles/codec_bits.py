"""Golden bit count for the 16x16 codec fixture.

Rebuilds the generic entropy tables from their closed form, transforms with
scipy's orthonormal DCT-II and sums -log2 p per coefficient.

    python3 tools/oracles/codec_bits.py
"""
import math

import numpy as np
from scipy.fft import dctn

RADIUS = 127
MASS = float(1 << 20)
AC_WEIGHT = [0.6, 0.7, 0.8, 0.85, 0.9, 0.93, 0.96]
AC_SHARP = 0.05
BLOCK = 8
STEP = 4.0


def laplace(rho, s):
    return (1 - rho) / (1 + rho) * rho ** abs(s)


def table(ctx):
    w, sharp, tail = (0.5, 0.6, 0.97) if ctx == 0 else (AC_WEIGHT[ctx - 1], AC_SHARP, 0.85)
    freqs = [1 + round(MASS * (w * laplace(sharp, s) + (1 - w) * laplace(tail, s)))
             for s in range(-RADIUS, RADIUS + 1)]
    beyond = sum(2 * rho ** (RADIUS + 1) / (1 + rho) * k for rho, k in ((sharp, w), (tail, 1 - w)))
    freqs.append(1 + round(MASS * beyond))
    return freqs


def bits(tables, ctx, value):
    t = tables[ctx]
    total = sum(t)
    if abs(value) <= RADIUS:
        return math.log2(total) - math.log2(t[value + RADIUS])
    n = abs(value) - RADIUS - 1
    return math.log2(total) - math.log2(t[-1]) + 2 * int(math.floor(math.log2(n + 1))) + 2


def main():
    y, x = np.mgrid[0:16, 0:16]
    img = ((3 * x * x + 5 * y + x * y + 11) % 241) / 255.0
    tables = [table(c) for c in range(8)]
    total, prev = 0.0, 0
    for by in range(0, 16, BLOCK):
        for bx in range(0, 16, BLOCK):
            c = dctn(img[by:by + BLOCK, bx:bx + BLOCK] * 255.0, norm="ortho") / STEP
            frac = np.abs(c) - np.floor(np.abs(c))
            assert np.all(np.abs(frac - 0.5) > 1e-4), "rounding tie"
            q = (np.sign(c) * np.floor(np.abs(c) + 0.5)).astype(int)
            total += bits(tables, 0, q[0, 0] - prev)
            prev = q[0, 0]
            for v in range(BLOCK):
                for u in range(BLOCK):
                    if u + v:
                        total += bits(tables, min(u + v, 7), q[v, u])
    print(repr(total))


if __name__ == "__main__":
    main()
