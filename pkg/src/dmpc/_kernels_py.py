"""Pure-numpy fallback for the compiled evaluation kernels.

Mirrors the signatures of dmpc._fast; see that module for the block layout.
Batches are chunked to bound the size of the intermediate monomial table.
"""

import numpy as np

_CHUNK = 8192


def eval_point(x, E, C, out):
    # x ** E with integer exponents; numpy handles negative bases correctly.
    z = np.prod(np.asarray(x)[None, :] ** E, axis=1)
    np.dot(C, z, out=out)


def eval_batch(X, E, C, out):
    t = E.shape[0]
    for lo in range(0, X.shape[0], _CHUNK):
        hi = min(lo + _CHUNK, X.shape[0])
        Z = np.ones((hi - lo, t))
        for j in range(E.shape[1]):
            nz = E[:, j] > 0
            if np.any(nz):
                Z[:, nz] *= X[lo:hi, j, None] ** E[nz, j][None, :]
        np.dot(Z, C.T, out=out[lo:hi])
