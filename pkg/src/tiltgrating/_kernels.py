"""Compiled inner loops for the trimer Monte Carlo averages.

Summation runs over configurations in a fixed order, so results are
reproducible bit for bit for a given batch of samples.
"""

import math

import numpy as np
from numba import njit


@njit(cache=True, nogil=True)
def _phase_at(s, eta, w, eta_origin, cproj, half):
    e0 = eta_origin + (half + s) * cproj
    acc = 0.0
    for q in range(eta.shape[0]):
        d = eta[q] - e0
        acc += w[q] / (d * d)
    return acc


@njit(cache=True, nogil=True)
def product_transmission_sum(nodes, offsets, eta, w, eta_origin, cproj, S0, pref):
    """Sum over configurations of prod_i tau(node + offset_i).

    ``offsets`` is (n_configs, n_atoms) in slit-line units. Atoms outside the
    open slit give zero. Returns (re, im) arrays over ``nodes``.
    """
    half = S0 / 2
    M = nodes.shape[0]
    n = offsets.shape[0]
    na = offsets.shape[1]
    re = np.zeros(M)
    im = np.zeros(M)
    for c in range(n):
        for m in range(M):
            tot = 0.0
            inside = True
            for i in range(na):
                s = nodes[m] + offsets[c, i]
                if s >= half or s <= -half:
                    inside = False
                    break
                if pref != 0.0:
                    tot += _phase_at(s, eta, w, eta_origin, cproj, half)
            if inside:
                if pref != 0.0:
                    ph = pref * tot
                    re[m] += math.cos(ph)
                    im[m] += math.sin(ph)
                else:
                    re[m] += 1.0
    return re, im
