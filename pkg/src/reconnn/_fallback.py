"""Pure-numpy versions of the compiled kernels in ``_kernels.pyx``.

Both implementations evaluate the same floating-point expressions in the
same order, so results agree bit for bit.
"""

import numpy as np


def heat_advance(T, nbr, G, b, adiag, coef, n_steps, trace=None):
    cur = T.copy()
    for step in range(n_steps):
        acc = G[0] * (cur[nbr[0]] - cur)
        for k in range(1, 6):
            acc = acc + G[k] * (cur[nbr[k]] - cur)
        acc = acc + (b - adiag * cur)
        cur = cur + coef * acc
        if trace is not None:
            trace[step] = cur.max()
    T[:] = cur


def col2im(cols, hp, wp, stride):
    nb, nc, k, _, ho, wo = cols.shape
    out = np.zeros((nb, nc, hp, wp))
    for ki in range(k):
        for kj in range(k):
            out[:, :, ki:ki + stride * ho:stride, kj:kj + stride * wo:stride] += cols[:, :, ki, kj]
    return out
