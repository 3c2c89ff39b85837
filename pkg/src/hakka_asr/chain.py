"""Weighted label graphs, log-domain forward-backward and the LF-MMI objective.

A graph consumes exactly one arc per frame.  Arc weights, initial weights and
final weights are natural-log values; ``-inf`` means "absent".
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

log = logging.getLogger(__name__)

NEG_INF = -np.inf


class GraphError(ValueError):
    pass


class InfeasibleAlignmentError(GraphError):
    pass


class EmptyCompositionError(GraphError):
    """No path of the requested length exists through the graph."""


@dataclass(frozen=True)
class ChainGraph:
    num_states: int
    src: np.ndarray
    dst: np.ndarray
    label: np.ndarray
    weight: np.ndarray
    initial: np.ndarray
    final: np.ndarray
    num_labels: int

    @classmethod
    def from_arcs(cls, num_states, arcs, initial, final, num_labels=None):
        arcs = list(arcs)
        src = np.array([a[0] for a in arcs], dtype=np.int64)
        dst = np.array([a[1] for a in arcs], dtype=np.int64)
        label = np.array([a[2] for a in arcs], dtype=np.int64)
        weight = np.array([a[3] for a in arcs], dtype=np.float64)
        init = np.full(num_states, NEG_INF)
        fin = np.full(num_states, NEG_INF)
        for s, w in (initial.items() if isinstance(initial, dict) else {initial: 0.0}.items()):
            init[s] = w
        for s, w in (final.items() if isinstance(final, dict) else {s: 0.0 for s in final}.items()):
            fin[s] = w
        if num_labels is None:
            num_labels = int(label.max()) + 1 if label.size else 0
        graph = cls(num_states, src, dst, label, weight, init, fin, num_labels)
        graph.validate()
        return graph

    @property
    def num_arcs(self):
        return int(self.src.size)

    @property
    def start(self):
        starts = np.flatnonzero(np.isfinite(self.initial))
        return int(starts[0]) if starts.size == 1 else None

    def arcs(self):
        return list(zip(self.src.tolist(), self.dst.tolist(), self.label.tolist(), self.weight.tolist()))

    def validate(self):
        n = self.num_states
        if self.src.size and (self.src.min() < 0 or self.src.max() >= n
                              or self.dst.min() < 0 or self.dst.max() >= n):
            raise GraphError("arc endpoint outside state range")
        if self.label.size and (self.label.min() < 0 or self.label.max() >= self.num_labels):
            raise GraphError("arc label outside pdf range")
        if np.any(np.isnan(self.weight)) or np.any(self.weight == np.inf):
            raise GraphError("arc weights must be finite or -inf")
        if not np.any(np.isfinite(self.initial)):
            raise GraphError("graph has no initial state")
        if not np.any(np.isfinite(self.final)):
            raise GraphError("graph has no final state")
        acc = _reachable(n, self.src, self.dst, np.isfinite(self.initial))
        coacc = _reachable(n, self.dst, self.src, np.isfinite(self.final))
        if not np.all(acc) or not np.all(coacc):
            raise GraphError("graph has states that are not accessible and co-accessible; trim it first")


def _reachable(n, src, dst, seeds):
    seen = seeds.copy()
    frontier = list(np.flatnonzero(seen))
    out = [[] for _ in range(n)]
    for s, d in zip(src.tolist(), dst.tolist()):
        out[s].append(d)
    while frontier:
        s = frontier.pop()
        for d in out[s]:
            if not seen[d]:
                seen[d] = True
                frontier.append(d)
    return seen


def trim(num_states, arcs, initial, final, num_labels):
    """Drop states that are not both accessible and co-accessible, renumbering the rest."""
    arcs = list(arcs)
    src = np.array([a[0] for a in arcs], dtype=np.int64)
    dst = np.array([a[1] for a in arcs], dtype=np.int64)
    init_mask = np.zeros(num_states, bool)
    init_mask[list(initial)] = True
    fin_mask = np.zeros(num_states, bool)
    fin_mask[list(final)] = True
    keep = _reachable(num_states, src, dst, init_mask) & _reachable(num_states, dst, src, fin_mask)
    if not keep.any():
        raise EmptyCompositionError("no successful path survives trimming")
    new_id = -np.ones(num_states, dtype=np.int64)
    new_id[keep] = np.arange(int(keep.sum()))
    arcs = [(int(new_id[s]), int(new_id[d]), l, w) for s, d, l, w in arcs if keep[s] and keep[d]]
    initial = {int(new_id[s]): w for s, w in initial.items() if keep[s]}
    final = {int(new_id[s]): w for s, w in final.items() if keep[s]}
    return ChainGraph.from_arcs(int(keep.sum()), arcs, initial, final, num_labels)


def build_numerator(pdf_sequence, frames, num_labels=None):
    """Left-to-right graph admitting every monotone alignment of ``pdf_sequence`` to ``frames``.

    State i means "the first i labels have been entered"; arcs enter label
    i+1 or repeat label i via a self-loop.  Self-loops are omitted when
    ``frames`` equals the sequence length, since no alignment could use them.
    """
    seq = [int(p) for p in pdf_sequence]
    if not seq:
        raise GraphError("empty pdf sequence")
    if frames < len(seq):
        raise InfeasibleAlignmentError(
            f"cannot align {len(seq)} labels to {frames} frames")
    arcs = []
    loops = frames > len(seq)
    for i, lab in enumerate(seq):
        arcs.append((i, i + 1, lab, 0.0))
        if loops:
            arcs.append((i + 1, i + 1, lab, 0.0))
    if num_labels is None:
        num_labels = max(seq) + 1
    return ChainGraph.from_arcs(len(seq) + 1, arcs, 0, [len(seq)], num_labels)


@dataclass(frozen=True)
class PhoneBigram:
    """Label bigram: ``trans[j, k] = p(k | j)``, ``initial[k] = p(k | start)``.

    ``final[j]`` is the end-of-sequence probability after ``j``; when absent
    every state is final with probability one and the rows of ``trans`` sum
    to one on their own.
    """

    trans: np.ndarray
    initial: np.ndarray
    final: np.ndarray | None = None


def estimate_bigram(sequences, num_labels, with_final=True, add_k=0.0):
    """Label bigram from label sequences; maximum likelihood unless ``add_k`` > 0."""
    trans = np.full((num_labels, num_labels), float(add_k))
    init = np.full(num_labels, float(add_k))
    fin = np.full(num_labels, float(add_k))
    for seq in sequences:
        seq = list(seq)
        if not seq:
            continue
        init[seq[0]] += 1
        for a, b in zip(seq[:-1], seq[1:]):
            trans[a, b] += 1
        fin[seq[-1]] += 1
    if not with_final:
        rows = trans.sum(axis=1, keepdims=True)
        return PhoneBigram(np.divide(trans, rows, out=np.zeros_like(trans), where=rows > 0), init / init.sum())
    rows = trans.sum(axis=1) + fin
    safe = np.where(rows > 0, rows, 1.0)
    return PhoneBigram(trans / safe[:, None], init / init.sum(), fin / safe)


def build_denominator(bigram, tol=1e-6):
    """One state per label context; arc j -> k carries label k and log p(k | j)."""
    trans = np.asarray(bigram.trans, dtype=np.float64)
    init = np.asarray(bigram.initial, dtype=np.float64)
    k = trans.shape[0]
    if trans.shape != (k, k) or init.shape != (k,):
        raise GraphError(f"bigram shapes {trans.shape} / {init.shape} are inconsistent")
    fin = None if bigram.final is None else np.asarray(bigram.final, dtype=np.float64)
    mass = trans.sum(axis=1) + (0.0 if fin is None else fin)
    bad = np.flatnonzero(np.abs(mass - 1.0) > tol)
    if bad.size:
        raise GraphError(f"bigram rows {bad.tolist()} are not normalized (sums {mass[bad].tolist()})")
    if abs(init.sum() - 1.0) > tol:
        raise GraphError(f"initial distribution sums to {init.sum()}, expected 1")
    if np.any(trans < 0) or np.any(init < 0):
        raise GraphError("negative probability in bigram")
    with np.errstate(divide="ignore"):
        arcs = [(j, q, q, float(np.log(trans[j, q]))) for j in range(k) for q in range(k) if trans[j, q] > 0]
        initial = {q: float(np.log(init[q])) for q in range(k) if init[q] > 0}
        if fin is None:
            final = {q: 0.0 for q in range(k)}
        else:
            final = {q: float(np.log(fin[q])) for q in range(k) if fin[q] > 0}
    return trim(k, arcs, initial, final, k)


def intersect(a, b):
    """Label-synchronous intersection; weights add.  Used to weight a numerator by the denominator LM."""
    if a.num_labels > b.num_labels:
        raise GraphError("left graph uses labels unknown to the right graph")
    b_out = {}
    for i, (s, d, l, w) in enumerate(b.arcs()):
        b_out.setdefault((s, l), []).append((d, w))
    index = {}
    arcs = []
    queue = []

    def state(p):
        if p not in index:
            index[p] = len(index)
            queue.append(p)
        return index[p]

    initial = {}
    for sa in np.flatnonzero(np.isfinite(a.initial)):
        for sb in np.flatnonzero(np.isfinite(b.initial)):
            initial[state((int(sa), int(sb)))] = float(a.initial[sa] + b.initial[sb])
    a_out = {}
    for s, d, l, w in a.arcs():
        a_out.setdefault(s, []).append((d, l, w))
    while queue:
        sa, sb = queue.pop(0)
        src = index[(sa, sb)]
        for da, l, wa in a_out.get(sa, []):
            for db, wb in b_out.get((sb, l), []):
                arcs.append((src, state((da, db)), l, wa + wb))
    final = {}
    for (sa, sb), i in index.items():
        w = a.final[sa] + b.final[sb]
        if np.isfinite(w):
            final[i] = float(w)
    if not final:
        raise EmptyCompositionError("intersection has no final state")
    return trim(len(index), arcs, initial, final, b.num_labels)


@dataclass(frozen=True)
class Posteriors:
    """Per-frame label occupancies plus the forward/backward tables behind them."""

    gamma: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray


def _segment_logsumexp(values, segments, n):
    out = np.full(n, NEG_INF)
    np.maximum.at(out, segments, values)
    shift = np.where(np.isfinite(out), out, 0.0)
    acc = np.zeros(n)
    np.add.at(acc, segments, np.exp(values - shift[segments]))
    with np.errstate(divide="ignore"):
        return np.where(acc > 0, np.log(acc) + shift, NEG_INF)


def forward_backward(graph, logits):
    """Log-sum over all length-T paths of (graph weight + sum of per-frame logits).

    Returns ``(log_total, Posteriors)``.  ``gamma[t, k]`` is the posterior
    probability that the arc taken at frame t carries label k.
    """
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 2 or logits.shape[1] < graph.num_labels:
        raise GraphError(f"logits shape {logits.shape} does not cover {graph.num_labels} labels")
    if not np.all(np.isfinite(logits)):
        raise GraphError("logits contain non-finite values")
    T = logits.shape[0]
    n = graph.num_states
    alpha = np.full((T + 1, n), NEG_INF)
    alpha[0] = graph.initial
    for t in range(T):
        scores = alpha[t, graph.src] + graph.weight + logits[t, graph.label]
        alpha[t + 1] = _segment_logsumexp(scores, graph.dst, n)
    end = alpha[T] + graph.final
    m = end.max()
    if not np.isfinite(m):
        raise EmptyCompositionError(f"no complete path of length {T} through the graph")
    log_total = float(m + np.log(np.exp(end - m).sum()))
    beta = np.full((T + 1, n), NEG_INF)
    beta[T] = graph.final
    gamma = np.zeros((T, logits.shape[1]))
    for t in range(T - 1, -1, -1):
        arc_scores = graph.weight + logits[t, graph.label] + beta[t + 1, graph.dst]
        beta[t] = _segment_logsumexp(arc_scores, graph.src, n)
        with np.errstate(invalid="ignore"):
            post = np.exp(alpha[t, graph.src] + arc_scores - log_total)
        post = np.nan_to_num(post, nan=0.0)
        np.add.at(gamma[t], graph.label, post)
    return log_total, Posteriors(gamma, alpha, beta)


def lfmmi_loss_grad(num, den, logits):
    """Loss ``-(log num - log den)`` and its gradient ``gamma_den - gamma_num``."""
    num_total, num_post = forward_backward(num, logits)
    den_total, den_post = forward_backward(den, logits)
    return -(num_total - den_total), den_post.gamma - num_post.gamma


def dump_graph(graph):
    """Text form: header, then one ``arc``/``initial``/``final`` record per line."""
    lines = [f"chaingraph v1 states={graph.num_states} labels={graph.num_labels}"]
    for s in np.flatnonzero(np.isfinite(graph.initial)):
        lines.append(f"initial {s} {float(graph.initial[s])!r}")
    for s, d, l, w in graph.arcs():
        lines.append(f"arc {s} {d} {l} {w!r}")
    for s in np.flatnonzero(np.isfinite(graph.final)):
        lines.append(f"final {s} {float(graph.final[s])!r}")
    return "\n".join(lines) + "\n"


def load_graph(text):
    lines = [ln.split() for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
    if not lines or lines[0][:2] != ["chaingraph", "v1"]:
        raise GraphError("missing 'chaingraph v1' header")
    header = dict(field.split("=") for field in lines[0][2:])
    arcs, initial, final = [], {}, {}
    for lineno, parts in enumerate(lines[1:], start=2):
        kind = parts[0]
        try:
            if kind == "arc":
                arcs.append((int(parts[1]), int(parts[2]), int(parts[3]), float(parts[4])))
            elif kind == "initial":
                initial[int(parts[1])] = float(parts[2])
            elif kind == "final":
                final[int(parts[1])] = float(parts[2])
            else:
                raise GraphError(f"line {lineno}: unknown record {kind!r}")
        except (IndexError, ValueError) as exc:
            raise GraphError(f"line {lineno}: malformed {kind} record") from exc
    return ChainGraph.from_arcs(int(header["states"]), arcs, initial, final, int(header["labels"]))


def numerator_for_labels(frame_labels, den, frames):
    """Numerator for a frame-level label string: collapse repeats, align, weight by ``den``."""
    seq = [int(l) for i, l in enumerate(frame_labels) if i == 0 or l != frame_labels[i - 1]]
    align = build_numerator(seq, frames, num_labels=den.num_labels)
    return intersect(align, den)
