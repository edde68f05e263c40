"""Pure Python / numpy versions of the compiled kernels in ``_kernels.pyx``."""

from collections import deque

import numpy as np


def aggregate(gather, scatter, coef, x, n_out):
    """out[scatter[m]] += coef[m] * x[gather[m]] for every m."""
    out = np.zeros((n_out, x.shape[1]), dtype=np.float64)
    if len(gather):
        np.add.at(out, scatter, coef[:, None] * x[gather])
    return out


def betweenness(indptr, indices):
    """Normalized betweenness of an unweighted undirected graph in CSR form."""
    n = len(indptr) - 1
    cb = [0.0] * n
    if n < 3:
        return np.zeros(n)
    adj = [indices[indptr[v]:indptr[v + 1]].tolist() for v in range(n)]
    for s in range(n):
        dist = [-1] * n
        sigma = [0.0] * n
        preds = [[] for _ in range(n)]
        dist[s] = 0
        sigma[s] = 1.0
        order = []
        queue = deque([s])
        while queue:
            v = queue.popleft()
            order.append(v)
            for w in adj[v]:
                if dist[w] < 0:
                    dist[w] = dist[v] + 1
                    queue.append(w)
                if dist[w] == dist[v] + 1:
                    sigma[w] += sigma[v]
                    preds[w].append(v)
        delta = [0.0] * n
        for w in reversed(order):
            for v in preds[w]:
                delta[v] += sigma[v] / sigma[w] * (1.0 + delta[w])
            if w != s:
                cb[w] += delta[w]
    return np.asarray(cb) / ((n - 1) * (n - 2))
