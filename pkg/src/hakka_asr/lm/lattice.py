"""Acyclic word lattices, exact n-best extraction and n-gram expansion.

Lattice text format (UTF-8)::

    lattice v1 nodes=<N> start=<S>
    node <id> <frame>               optional, one per node
    arc <src> <dst> <word> <acoustic> <lm>
    final <id> <weight>             weight optional, defaults to 0

Scores are natural-log values; a path scores
``acoustic_scale * sum(acoustic) + sum(lm) + final``.
``<eps>`` arcs contribute scores but no word.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple

from .ngram import BOS, EOS

EPS = "<eps>"


class LatticeError(ValueError):
    pass


class Arc(NamedTuple):
    src: int
    dst: int
    word: str
    acoustic: float
    lm: float


@dataclass
class WordLattice:
    num_nodes: int
    arcs: list
    start: int = 0
    finals: dict = field(default_factory=dict)
    times: list = None

    def __post_init__(self):
        self.arcs = [Arc(*a) for a in self.arcs]
        for a in self.arcs:
            if not (0 <= a.src < self.num_nodes and 0 <= a.dst < self.num_nodes):
                raise LatticeError(f"arc {a} references a missing node")
        if not self.finals:
            raise LatticeError("lattice has no final node")
        self.order = self.topological_order()

    def topological_order(self):
        indeg = [0] * self.num_nodes
        out = [[] for _ in range(self.num_nodes)]
        for i, a in enumerate(self.arcs):
            indeg[a.dst] += 1
            out[a.src].append(i)
        ready = [n for n in range(self.num_nodes) if indeg[n] == 0]
        order = []
        while ready:
            n = ready.pop()
            order.append(n)
            for i in out[n]:
                d = self.arcs[i].dst
                indeg[d] -= 1
                if indeg[d] == 0:
                    ready.append(d)
        if len(order) != self.num_nodes:
            raise LatticeError("lattice contains a cycle")
        return order

    def vocabulary(self):
        return sorted({a.word for a in self.arcs if a.word != EPS})


class Hypothesis(NamedTuple):
    words: tuple
    score: float
    acoustic: float
    lm: float
    arcs: tuple = ()


def path_score(lattice, arc_indices, acoustic_scale=1.0):
    """Re-evaluate one path given as arc indices, in path order."""
    ac = lm = 0.0
    for i in arc_indices:
        a = lattice.arcs[i]
        ac = ac + a.acoustic
        lm = lm + a.lm
    lm = lm + lattice.finals[lattice.arcs[arc_indices[-1]].dst if arc_indices else lattice.start]
    return acoustic_scale * ac + lm, ac, lm


def _key(h):
    return (-h.score, h.words)


def nbest(lattice, k, acoustic_scale=1.0):
    """Exact k best paths, best first; ties broken by the word sequence.

    Each node keeps its k best partial paths plus any tied with the k-th,
    which is enough to recover the exact global top k.
    """
    if k <= 0:
        raise ValueError("k must be positive")
    incoming = [[] for _ in range(lattice.num_nodes)]
    for i, a in enumerate(lattice.arcs):
        incoming[a.dst].append(i)
    partial = [[] for _ in range(lattice.num_nodes)]
    partial[lattice.start] = [(0.0, 0.0, (), ())]
    for node in lattice.order:
        if node != lattice.start or incoming[node]:
            cands = [] if node != lattice.start else list(partial[node])
            for i in incoming[node]:
                a = lattice.arcs[i]
                for ac, lm, words, arcs in partial[a.src]:
                    cands.append((ac + a.acoustic, lm + a.lm,
                                  words if a.word == EPS else words + (a.word,), arcs + (i,)))
            partial[node] = _prune(cands, k, acoustic_scale)
    done = []
    for node, fw in lattice.finals.items():
        for ac, lm, words, arcs in partial[node]:
            lm_total = lm + fw
            done.append(Hypothesis(words, acoustic_scale * ac + lm_total, ac, lm_total, arcs))
    done = [h for h in done if h.score > -math.inf]
    done.sort(key=_key)
    return done[:k]


def _prune(cands, k, scale):
    if len(cands) <= k:
        return cands
    scored = sorted(cands, key=lambda c: -(scale * c[0] + c[1]))
    cutoff = scale * scored[k - 1][0] + scored[k - 1][1]
    return [c for c in scored if scale * c[0] + c[1] >= cutoff]


def expand_with_ngram(lattice, ngram):
    """Split nodes by n-gram history and set every arc's LM score to the exact
    n-gram conditional; final weights become log p(</s> | history)."""
    ctx_len = ngram.order - 1
    index = {}
    arcs = []
    out = [[] for _ in range(lattice.num_nodes)]
    for a in lattice.arcs:
        out[a.src].append(a)

    def hist_key(h):
        return h[max(0, len(h) - ctx_len):] if ctx_len > 0 else ()

    start = (lattice.start, hist_key((BOS,)))
    index[start] = 0
    queue = [start]
    times = []
    while queue:
        node, hist = queue.pop(0)
        times.append(lattice.times[node] if lattice.times else None)
        for a in out[node]:
            if a.word == EPS:
                new_hist, lm = hist, 0.0
            else:
                lm = ngram.logprob(a.word, hist)
                new_hist = hist_key(hist + (a.word,))
            key = (a.dst, new_hist)
            if key not in index:
                index[key] = len(index)
                queue.append(key)
            arcs.append((index[(node, hist)], index[key], a.word, a.acoustic, lm))
    finals = {i: ngram.logprob(EOS, hist) for (node, hist), i in index.items() if node in lattice.finals}
    return WordLattice(len(index), arcs, 0, finals, times if lattice.times else None)


def sausage_lattice(columns):
    """Linear confusion network: ``columns[i]`` lists (word, acoustic) alternatives for slot i."""
    arcs = [(i, i + 1, w, ac, 0.0) for i, col in enumerate(columns) for w, ac in col]
    return WordLattice(len(columns) + 1, arcs, 0, {len(columns): 0.0}, list(range(len(columns) + 1)))


def write_lattice(lattice, path):
    with open(path, "w", encoding="utf-8") as f:
        f.write(format_lattice(lattice))


def format_lattice(lattice):
    lines = [f"lattice v1 nodes={lattice.num_nodes} start={lattice.start}"]
    if lattice.times:
        lines += [f"node {i} {t}" for i, t in enumerate(lattice.times)]
    lines += [f"arc {a.src} {a.dst} {a.word} {float(a.acoustic)!r} {float(a.lm)!r}" for a in lattice.arcs]
    lines += [f"final {n} {float(w)!r}" for n, w in sorted(lattice.finals.items())]
    return "\n".join(lines) + "\n"


def parse_lattice(text):
    lines = [ln.split() for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
    if not lines or lines[0][:2] != ["lattice", "v1"]:
        raise LatticeError("missing 'lattice v1' header")
    header = dict(f.split("=", 1) for f in lines[0][2:])
    n = int(header["nodes"])
    times = [None] * n
    arcs, finals = [], {}
    for lineno, parts in enumerate(lines[1:], start=2):
        try:
            if parts[0] == "node":
                times[int(parts[1])] = int(parts[2])
            elif parts[0] == "arc":
                arcs.append((int(parts[1]), int(parts[2]), parts[3], float(parts[4]), float(parts[5])))
            elif parts[0] == "final":
                finals[int(parts[1])] = float(parts[2]) if len(parts) > 2 else 0.0
            else:
                raise LatticeError(f"line {lineno}: unknown record {parts[0]!r}")
        except (IndexError, ValueError) as exc:
            raise LatticeError(f"line {lineno}: malformed record") from exc
    return WordLattice(n, arcs, int(header.get("start", 0)), finals,
                       times if all(t is not None for t in times) else None)


def read_lattice(path):
    with open(path, encoding="utf-8") as f:
        return parse_lattice(f.read())
