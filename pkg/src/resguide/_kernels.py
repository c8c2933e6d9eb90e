"""Compiled loops for 2-D cross-correlation and its adjoints.

Every correlation output is accumulated in a fixed order (input channel,
kernel row, kernel column, then bias), so results are reproducible
bit-for-bit and match a naive scalar loop written in the same order.
"""

import numpy as np
from numba import njit


@njit(cache=True, nogil=True)
def correlate_valid(xp, w, b, out):
    """out[n, co] = sum_{ci, ki, kj} w[co, ci, ki, kj] * xp[n, ci, i+ki, j+kj] + b[co].

    ``xp`` is already padded; ``out`` has shape (n, cout, hp-kh+1, wp-kw+1).
    """
    nb, cin, hp, wp = xp.shape
    cout, _, kh, kw = w.shape
    h = hp - kh + 1
    wd = wp - kw + 1
    for n in range(nb):
        for co in range(cout):
            acc = out[n, co]
            acc[:, :] = 0
            for ci in range(cin):
                if kh == 3 and kw == 3:
                    # all nine taps per pass; same per-element order as the generic loop
                    w00 = w[co, ci, 0, 0]
                    w01 = w[co, ci, 0, 1]
                    w02 = w[co, ci, 0, 2]
                    w10 = w[co, ci, 1, 0]
                    w11 = w[co, ci, 1, 1]
                    w12 = w[co, ci, 1, 2]
                    w20 = w[co, ci, 2, 0]
                    w21 = w[co, ci, 2, 1]
                    w22 = w[co, ci, 2, 2]
                    for i in range(h):
                        r0 = xp[n, ci, i]
                        r1 = xp[n, ci, i + 1]
                        r2 = xp[n, ci, i + 2]
                        ar = acc[i]
                        for j in range(wd):
                            a = ar[j]
                            a += w00 * r0[j]
                            a += w01 * r0[j + 1]
                            a += w02 * r0[j + 2]
                            a += w10 * r1[j]
                            a += w11 * r1[j + 1]
                            a += w12 * r1[j + 2]
                            a += w20 * r2[j]
                            a += w21 * r2[j + 1]
                            a += w22 * r2[j + 2]
                            ar[j] = a
                    continue
                for ki in range(kh):
                    if kw == 1:
                        w0 = w[co, ci, ki, 0]
                        for i in range(h):
                            row = xp[n, ci, i + ki]
                            ar = acc[i]
                            for j in range(wd):
                                ar[j] += w0 * row[j]
                    else:
                        for kj in range(kw):
                            wv = w[co, ci, ki, kj]
                            for i in range(h):
                                row = xp[n, ci, i + ki]
                                ar = acc[i]
                                for j in range(wd):
                                    ar[j] += wv * row[j + kj]
            bv = b[co]
            for i in range(h):
                ar = acc[i]
                for j in range(wd):
                    ar[j] += bv


@njit(cache=True, nogil=True)
def leaky_relu_grad(x, g, slope, out):
    xf = x.reshape(-1)
    gf = g.reshape(-1)
    of = out.reshape(-1)
    for i in range(xf.shape[0]):
        of[i] = gf[i] if xf[i] >= 0 else gf[i] * slope


@njit(cache=True, nogil=True)
def sequential_sum(flat):
    """Left-to-right sum of a 1-D array, accumulated in double precision."""
    s = 0.0
    for k in range(flat.shape[0]):
        s += np.float64(flat[k])
    return s
