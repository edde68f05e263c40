# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot loops: message aggregation and Brandes betweenness."""

import numpy as np
cimport numpy as cnp

cnp.import_array()


def aggregate(const Py_ssize_t[::1] gather,
              const Py_ssize_t[::1] scatter,
              const double[::1] coef,
              const double[:, ::1] x,
              Py_ssize_t n_out):
    """out[scatter[m]] += coef[m] * x[gather[m]] for every m."""
    cdef Py_ssize_t m, c, g, s
    cdef Py_ssize_t n_items = gather.shape[0]
    cdef Py_ssize_t width = x.shape[1]
    cdef double w
    out = np.zeros((n_out, width), dtype=np.float64)
    cdef double[:, ::1] o = out
    for m in range(n_items):
        g = gather[m]
        s = scatter[m]
        w = coef[m]
        for c in range(width):
            o[s, c] += w * x[g, c]
    return out


def betweenness(const Py_ssize_t[::1] indptr, const Py_ssize_t[::1] indices):
    """Normalized betweenness of an unweighted undirected graph in CSR form."""
    cdef Py_ssize_t n = indptr.shape[0] - 1
    scores = np.zeros(n, dtype=np.float64)
    if n < 3:
        return scores
    cdef double[::1] cb = scores
    cdef Py_ssize_t[::1] dist = np.empty(n, dtype=np.intp)
    cdef double[::1] sigma = np.empty(n, dtype=np.float64)
    cdef double[::1] delta = np.empty(n, dtype=np.float64)
    cdef Py_ssize_t[::1] order = np.empty(n, dtype=np.intp)
    cdef Py_ssize_t s, v, w, e, head, tail, i
    cdef double norm
    for s in range(n):
        for i in range(n):
            dist[i] = -1
            sigma[i] = 0.0
            delta[i] = 0.0
        dist[s] = 0
        sigma[s] = 1.0
        order[0] = s
        head = 0
        tail = 1
        while head < tail:
            v = order[head]
            head += 1
            for e in range(indptr[v], indptr[v + 1]):
                w = indices[e]
                if dist[w] < 0:
                    dist[w] = dist[v] + 1
                    order[tail] = w
                    tail += 1
                if dist[w] == dist[v] + 1:
                    sigma[w] += sigma[v]
        # predecessors are recovered from dist instead of stored lists
        for i in range(tail - 1, 0, -1):
            w = order[i]
            for e in range(indptr[w], indptr[w + 1]):
                v = indices[e]
                if dist[v] == dist[w] - 1:
                    delta[v] += sigma[v] / sigma[w] * (1.0 + delta[w])
            cb[w] += delta[w]
    norm = <double>((n - 1) * (n - 2))
    for i in range(n):
        cb[i] /= norm
    return scores
