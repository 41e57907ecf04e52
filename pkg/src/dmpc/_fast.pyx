# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled evaluation kernels for blocks of sparse polynomials.

A block is a set of k polynomials over a shared list of t monomials in n
variables: an exponent matrix E (t x n, int64) and a coefficient matrix
C (k x t, float64). Exponents are small non-negative integers, so powers
are computed by repeated multiplication.
"""

import numpy as np

cimport cython
from libc.stdlib cimport free, malloc


cpdef void eval_point(double[::1] x, long long[:, ::1] E, double[:, ::1] C,
                      double[::1] out):
    cdef Py_ssize_t t = E.shape[0]
    cdef Py_ssize_t n = E.shape[1]
    cdef Py_ssize_t k = C.shape[0]
    cdef Py_ssize_t i, j, p
    cdef long long e
    cdef double m, acc
    cdef double* z = <double*> malloc(t * sizeof(double))
    if z == NULL:
        raise MemoryError()
    try:
        with nogil:
            for i in range(t):
                m = 1.0
                for j in range(n):
                    e = E[i, j]
                    while e > 0:
                        m *= x[j]
                        e -= 1
                z[i] = m
            for p in range(k):
                acc = 0.0
                for i in range(t):
                    acc += C[p, i] * z[i]
                out[p] = acc
    finally:
        free(z)


cpdef void eval_batch(double[:, ::1] X, long long[:, ::1] E, double[:, ::1] C,
                      double[:, ::1] out):
    cdef Py_ssize_t N = X.shape[0]
    cdef Py_ssize_t t = E.shape[0]
    cdef Py_ssize_t n = E.shape[1]
    cdef Py_ssize_t k = C.shape[0]
    cdef Py_ssize_t r, i, j, p
    cdef long long e
    cdef double m, acc
    cdef double* z = <double*> malloc(t * sizeof(double))
    if z == NULL:
        raise MemoryError()
    try:
        with nogil:
            for r in range(N):
                for i in range(t):
                    m = 1.0
                    for j in range(n):
                        e = E[i, j]
                        while e > 0:
                            m *= X[r, j]
                            e -= 1
                    z[i] = m
                for p in range(k):
                    acc = 0.0
                    for i in range(t):
                        acc += C[p, i] * z[i]
                    out[r, p] = acc
    finally:
        free(z)
