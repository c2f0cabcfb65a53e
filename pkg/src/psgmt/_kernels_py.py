"""Pure-Python fallback for the compiled hot kernels.

Semantics must match ``psgmt._speedups`` exactly; the dispatcher in
``psgmt.kernels`` picks whichever is importable.
"""

from __future__ import annotations

import numpy as np


def pair_counts(words, freqs):
    """Count adjacent symbol pairs over a weighted word list.

    ``words`` is a list of symbol tuples, ``freqs`` the per-word corpus
    frequency.  Returns {(left, right): count}.
    """
    counts: dict[tuple[str, str], int] = {}
    for word, freq in zip(words, freqs):
        for i in range(len(word) - 1):
            pair = (word[i], word[i + 1])
            counts[pair] = counts.get(pair, 0) + freq
    return counts


def apply_merge(words, left, right, merged):
    """Replace every adjacent (left, right) with the merged symbol."""
    out = []
    for word in words:
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


def gcn_coefficients(pairs, p):
    """Aggregation coefficients for one round of message passing.

    ``pairs`` is the (q, 2) relation index matrix.  Node degree is the
    number of incident relation endpoints plus one (the self-loop), so the
    single-node case never divides by zero.  Returns:

    - entity_coef (p, p): entity_coef[j, k] accumulates 1/sqrt(deg k * deg j)
      per relation joining j and k, plus the 1/deg j self term on the
      diagonal;
    - relation_coef (p, q): same normalization, per incident relation from
      each endpoint's perspective;
    - term_counts (p,): number of summands per node (bias is added once per
      summand).
    """
    pairs = np.asarray(pairs, dtype=np.intp).reshape(-1, 2)
    q = pairs.shape[0]
    deg = np.ones(p, dtype=np.float64)
    for a, b in pairs:
        deg[a] += 1.0
        deg[b] += 1.0
    entity_coef = np.zeros((p, p), dtype=np.float64)
    relation_coef = np.zeros((p, q), dtype=np.float64)
    term_counts = np.ones(p, dtype=np.float64)
    for j in range(p):
        entity_coef[j, j] = 1.0 / deg[j]
    for e in range(q):
        a, b = pairs[e]
        if a == b:
            c = 1.0 / deg[a]
            entity_coef[a, a] += c
            relation_coef[a, e] += c
            term_counts[a] += 1.0
            continue
        c = 1.0 / np.sqrt(deg[a] * deg[b])
        entity_coef[a, b] += c
        relation_coef[a, e] += c
        term_counts[a] += 1.0
        entity_coef[b, a] += c
        relation_coef[b, e] += c
        term_counts[b] += 1.0
    return entity_coef, relation_coef, term_counts
