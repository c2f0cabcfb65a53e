# cython: language_level=3, boundscheck=False, wraparound=False
"""Compiled hot kernels: BPE pair statistics and GCN aggregation setup.

Must stay semantically identical to psgmt._kernels_py.
"""

from libc.math cimport sqrt

import numpy as np
cimport numpy as cnp

cnp.import_array()


def pair_counts(list words, list freqs):
    cdef dict counts = {}
    cdef Py_ssize_t w, i, n
    cdef long freq
    cdef tuple word, pair
    cdef object prev
    for w in range(len(words)):
        word = <tuple> words[w]
        freq = <long> freqs[w]
        n = len(word)
        for i in range(n - 1):
            pair = (word[i], word[i + 1])
            prev = counts.get(pair)
            if prev is None:
                counts[pair] = freq
            else:
                counts[pair] = <long> prev + freq
    return counts


def apply_merge(list words, str left, str right, str merged):
    cdef list out = []
    cdef list new
    cdef Py_ssize_t w, i, n
    cdef tuple word
    for w in range(len(words)):
        word = <tuple> words[w]
        n = len(word)
        if n < 2:
            out.append(word)
            continue
        new = []
        i = 0
        while i < n:
            if i < n - 1 and word[i] == left and word[i + 1] == right:
                new.append(merged)
                i += 2
            else:
                new.append(word[i])
                i += 1
        out.append(tuple(new))
    return out


def gcn_coefficients(pairs, Py_ssize_t p):
    cdef cnp.ndarray[cnp.intp_t, ndim=2] pr = np.ascontiguousarray(
        np.asarray(pairs, dtype=np.intp).reshape(-1, 2))
    cdef Py_ssize_t q = pr.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] deg = np.ones(p, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] entity_coef = np.zeros((p, p), dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] relation_coef = np.zeros((p, q), dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] term_counts = np.ones(p, dtype=np.float64)
    cdef Py_ssize_t e, j, a, b
    cdef double c
    for e in range(q):
        a = pr[e, 0]
        b = pr[e, 1]
        deg[a] += 1.0
        deg[b] += 1.0
    for j in range(p):
        entity_coef[j, j] = 1.0 / deg[j]
    for e in range(q):
        a = pr[e, 0]
        b = pr[e, 1]
        if a == b:
            c = 1.0 / deg[a]
            entity_coef[a, a] += c
            relation_coef[a, e] += c
            term_counts[a] += 1.0
            continue
        c = 1.0 / sqrt(deg[a] * deg[b])
        entity_coef[a, b] += c
        relation_coef[a, e] += c
        term_counts[a] += 1.0
        entity_coef[b, a] += c
        relation_coef[b, e] += c
        term_counts[b] += 1.0
    return entity_coef, relation_coef, term_counts
