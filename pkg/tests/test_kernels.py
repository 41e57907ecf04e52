"""Backend dispatch and numerical equivalence of the compiled and numpy
polynomial-evaluation kernels."""

import subprocess
import sys

import numpy as np

from dmpc import _kernels_py, kernels
from dmpc.poly import Polynomial


def rand_block(rng, nterms, nvars, npolys):
    E = rng.integers(0, 4, size=(nterms, nvars)).astype(np.int64)
    C = rng.normal(size=(npolys, nterms))
    return np.ascontiguousarray(E), np.ascontiguousarray(C)


def reference_eval(x, E, C):
    # direct dense oracle: prod over variables of x_i^e_i, then C @ mono
    mono = np.prod(x[None, :] ** E, axis=1)
    return C @ mono


def test_backend_reported():
    assert kernels.BACKEND in ("compiled", "python")


def test_point_kernel_matches_oracle():
    rng = np.random.default_rng(0)
    for _ in range(25):
        E, C = rand_block(rng, int(rng.integers(1, 30)),
                          int(rng.integers(1, 7)), int(rng.integers(1, 5)))
        x = rng.uniform(-2, 2, E.shape[1])
        out = np.empty(C.shape[0])
        kernels.eval_point(np.ascontiguousarray(x), E, C, out)
        np.testing.assert_allclose(out, reference_eval(x, E, C),
                                   rtol=1e-12, atol=1e-12)


def test_batch_kernel_matches_oracle():
    rng = np.random.default_rng(1)
    for _ in range(10):
        E, C = rand_block(rng, int(rng.integers(1, 30)),
                          int(rng.integers(1, 7)), int(rng.integers(1, 5)))
        X = rng.uniform(-2, 2, size=(int(rng.integers(1, 200)), E.shape[1]))
        out = np.empty((X.shape[0], C.shape[0]))
        kernels.eval_batch(np.ascontiguousarray(X), E, C, out)
        want = np.stack([reference_eval(x, E, C) for x in X])
        np.testing.assert_allclose(out, want, rtol=1e-12, atol=1e-12)


def test_backends_agree():
    # whatever backend won the import race must match the pure-numpy one
    rng = np.random.default_rng(2)
    E, C = rand_block(rng, 40, 6, 3)
    X = rng.uniform(-1.5, 1.5, size=(500, 6))
    a = np.empty((X.shape[0], C.shape[0]))
    b = np.empty_like(a)
    kernels.eval_batch(np.ascontiguousarray(X), E, C, a)
    _kernels_py.eval_batch(np.ascontiguousarray(X), E, C, b)
    np.testing.assert_allclose(a, b, rtol=1e-13, atol=1e-13)


def test_pure_python_env_override():
    code = ("import os; os.environ['DMPC_PURE_PYTHON'] = '1'; "
            "from dmpc import kernels; print(kernels.BACKEND)")
    out = subprocess.run([sys.executable, "-c", code],
                         capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"


def test_polynomial_layer_uses_kernels():
    rng = np.random.default_rng(3)
    p = Polynomial(3, {(2, 0, 0): 1.0, (0, 1, 1): -2.0, (0, 0, 0): 0.5})
    X = rng.normal(size=(50, 3))
    want = X[:, 0] ** 2 - 2.0 * X[:, 1] * X[:, 2] + 0.5
    np.testing.assert_allclose(p.evaluate_many(X), want, rtol=1e-13)
