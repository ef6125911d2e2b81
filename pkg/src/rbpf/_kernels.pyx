# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops. Must stay numerically interchangeable with ``_pykernels``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport log, INFINITY

cnp.import_array()

BACKEND = "cython"


def inverse_cdf_counts(const double[::1] cdf, const double[::1] u):
    """Offspring counts for sorted uniforms ``u`` pushed through ``cdf``.

    Particle ``j`` receives every ``u[k]`` with ``cdf[j-1] <= u[k] < cdf[j]``;
    values at or beyond the last entry go to the last index.
    """
    cdef Py_ssize_t n = cdf.shape[0], m = u.shape[0]
    cdef Py_ssize_t j = 0, k
    counts = np.zeros(n, dtype=np.int64)
    cdef cnp.int64_t[::1] c = counts
    for k in range(m):
        while j < n - 1 and cdf[j] <= u[k]:
            j += 1
        c[j] += 1
    return counts


def map_update(double[:, :, ::1] theta, const cnp.int64_t[:, ::1] cells,
               const cnp.int64_t[::1] observed, double eps, bint commit=True):
    """Noisy-sensor Bayes update of per-cell colour marginals, in place.

    ``theta`` is (particles, cells, colours); ``cells[i, k]`` is the grid cell
    seen through offset ``k`` by particle ``i`` (-1 = not seen). Returns the
    per-particle log predictive of ``observed``.
    """
    cdef Py_ssize_t n = theta.shape[0], n_col = theta.shape[2]
    cdef Py_ssize_t n_off = cells.shape[1]
    cdef Py_ssize_t i, k, c, cell
    cdef double hit = 1.0 - eps
    cdef double miss = eps / (n_col - 1)
    cdef double pred, lik, acc
    cdef cnp.int64_t y
    out = np.zeros(n, dtype=np.float64)
    cdef double[::1] o = out
    for i in range(n):
        acc = 0.0
        for k in range(n_off):
            cell = cells[i, k]
            if cell < 0:
                continue
            y = observed[k]
            pred = 0.0
            for c in range(n_col):
                lik = hit if c == y else miss
                pred += lik * theta[i, cell, c]
            if pred <= 0.0:
                acc = -INFINITY
                continue
            acc += log(pred)
            if commit:
                for c in range(n_col):
                    lik = hit if c == y else miss
                    theta[i, cell, c] = lik * theta[i, cell, c] / pred
        o[i] = acc
    return out
