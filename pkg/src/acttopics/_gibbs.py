"""Hot loop of the collapsed Gibbs sampler, JIT-compiled with numba.

One full sweep resamples every token position in order. ``uniforms`` holds
one pre-drawn variate per position so the caller's RNG remains the single
source of randomness. Operation order inside the loop is fixed; do not
reorder the arithmetic, tests compare it bitwise against a pure-Python
reference.
"""

import numpy as np
from numba import njit


@njit(cache=True, nogil=True)
def sweep(z, pos_doc, pos_word, n_dt, n_tw, n_t, alpha, gamma, gamma_sum, uniforms):
    n_topics = n_t.shape[0]
    weights = np.empty(n_topics, np.float64)
    for i in range(z.shape[0]):
        d = pos_doc[i]
        w = pos_word[i]
        old = z[i]
        n_dt[d, old] -= 1
        n_tw[old, w] -= 1
        n_t[old] -= 1
        total = 0.0
        for t in range(n_topics):
            wt = (n_dt[d, t] + alpha[t]) * (n_tw[t, w] + gamma[w]) / (n_t[t] + gamma_sum)
            weights[t] = wt
            total += wt
        target = uniforms[i] * total
        acc = 0.0
        new = n_topics - 1
        for t in range(n_topics):
            acc += weights[t]
            if target < acc:
                new = t
                break
        z[i] = new
        n_dt[d, new] += 1
        n_tw[new, w] += 1
        n_t[new] += 1
