"""Independent brute-force references used by the tests."""

import itertools
import math
from functools import lru_cache

import numpy as np

from hakka_asr import chain
from hakka_asr.lm import lattice as lat


def logsumexp(values):
    values = [v for v in values if v > -math.inf]
    if not values:
        return -math.inf
    m = max(values)
    return m + math.log(sum(math.exp(v - m) for v in values))


def enumerate_paths(graph, T):
    """Every length-T path as (state sequence, arc index sequence)."""
    out_arcs = {}
    for i, s in enumerate(graph.src.tolist()):
        out_arcs.setdefault(s, []).append(i)
    paths = []

    def walk(state, arcs, states):
        if len(arcs) == T:
            if np.isfinite(graph.final[state]):
                paths.append((tuple(states), tuple(arcs)))
            return
        for i in out_arcs.get(state, []):
            walk(int(graph.dst[i]), arcs + [i], states + [int(graph.dst[i])])

    for s in np.flatnonzero(np.isfinite(graph.initial)):
        walk(int(s), [], [int(s)])
    return paths


def brute_force_posteriors(graph, logits):
    """(log_total, gamma) by summing over enumerated paths."""
    T, K = logits.shape
    scored = []
    for states, arcs in enumerate_paths(graph, T):
        s = graph.initial[states[0]] + graph.final[states[-1]]
        s += sum(graph.weight[a] + logits[t, graph.label[a]] for t, a in enumerate(arcs))
        scored.append((float(s), arcs))
    total = logsumexp([s for s, _ in scored])
    gamma = np.zeros((T, K))
    if total == -math.inf:
        return total, gamma
    for s, arcs in scored:
        p = math.exp(s - total)
        for t, a in enumerate(arcs):
            gamma[t, graph.label[a]] += p
    return total, gamma


def random_graph(rng, max_states=6, max_labels=4):
    """Random trimmed graph, or None when nothing survives trimming."""
    n = int(rng.integers(1, max_states + 1))
    k = int(rng.integers(1, max_labels + 1))
    arcs = []
    for s in range(n):
        for d in range(n):
            if rng.random() < 0.45:
                arcs.append((s, d, int(rng.integers(k)), float(rng.normal())))
    initial = {s: float(rng.normal()) for s in range(n) if rng.random() < 0.5} or {0: 0.0}
    final = {s: float(rng.normal()) for s in range(n) if rng.random() < 0.5} or {n - 1: 0.0}
    try:
        return chain.trim(n, arcs, initial, final, k)
    except chain.EmptyCompositionError:
        return None


def edit_distance_recursive(ref, hyp):
    ref, hyp = tuple(ref), tuple(hyp)

    @lru_cache(maxsize=None)
    def d(i, j):
        if i == 0:
            return j
        if j == 0:
            return i
        return min(d(i - 1, j) + 1, d(i, j - 1) + 1, d(i - 1, j - 1) + (ref[i - 1] != hyp[j - 1]))

    return d(len(ref), len(hyp))


def random_lattice(rng, max_nodes=8, vocab=("a", "b", "c", "d")):
    """Random DAG lattice where node 0 is the start; every node has a path from 0."""
    n = int(rng.integers(2, max_nodes + 1))
    arcs = []
    for d in range(1, n):
        s = int(rng.integers(0, d))
        arcs.append((s, d, str(rng.choice(vocab)), float(rng.normal()), float(rng.normal())))
    for s in range(n):
        for d in range(s + 1, n):
            if rng.random() < 0.3:
                word = lat.EPS if rng.random() < 0.1 else str(rng.choice(vocab))
                arcs.append((s, d, word, float(rng.normal()), float(rng.normal())))
    finals = {n - 1: 0.0}
    if n > 2 and rng.random() < 0.5:
        finals[int(rng.integers(1, n - 1))] = float(rng.normal())
    return lat.WordLattice(n, arcs, 0, finals, list(range(n)))


def all_lattice_paths(lattice, acoustic_scale=1.0):
    """Every complete path as (score, words), sorted best first then by words."""
    out_arcs = {}
    for a in lattice.arcs:
        out_arcs.setdefault(a.src, []).append(a)
    found = []

    def walk(node, ac, lm, words):
        if node in lattice.finals:
            found.append((acoustic_scale * ac + lm + lattice.finals[node], tuple(words)))
        for a in out_arcs.get(node, []):
            walk(a.dst, ac + a.acoustic, lm + a.lm, words + ([] if a.word == lat.EPS else [a.word]))

    walk(lattice.start, 0.0, 0.0, [])
    found.sort(key=lambda x: (-x[0], x[1]))
    return found


def all_sequences(vocab, max_len):
    for n in range(max_len + 1):
        yield from itertools.product(vocab, repeat=n)
