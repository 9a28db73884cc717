"""Compiled pair-counting loops.

Each call histograms ``b[j] - a[i]`` over all (i, j) into a flat 3D grid
with odd bin counts centred on zero. ``b`` must be sorted by its z column;
the z window is located by binary search and widened by one bin so that
the exact floor-based bin test decides membership.
"""

import math

import numpy as np
from numba import njit


@njit(nogil=True, cache=True)
def pair_histogram(a, b_sorted, b_orig, exclude_same, half, width, nbins, hist):
    bz = b_sorted[:, 2]
    n0, n1, n2 = nbins[0], nbins[1], nbins[2]
    for i in range(a.shape[0]):
        ax, ay, az = a[i, 0], a[i, 1], a[i, 2]
        lo = np.searchsorted(bz, az - half[2] - width[2])
        hi = np.searchsorted(bz, az + half[2] + width[2], side="right")
        for j in range(lo, hi):
            if exclude_same and b_orig[j] == i:
                continue
            iz = math.floor((b_sorted[j, 2] - az + half[2]) / width[2])
            if iz < 0 or iz >= n2:
                continue
            ix = math.floor((b_sorted[j, 0] - ax + half[0]) / width[0])
            if ix < 0 or ix >= n0:
                continue
            iy = math.floor((b_sorted[j, 1] - ay + half[1]) / width[1])
            if iy < 0 or iy >= n1:
                continue
            hist[(ix * n1 + iy) * n2 + iz] += 1
