"""Backoff n-gram language model with absolute discounting and ARPA I/O."""

from __future__ import annotations

import math
from collections import Counter, defaultdict

BOS, EOS, UNK = "<s>", "</s>", "<unk>"
ARPA_NEG_INF = -99.0
LN10 = math.log(10.0)


class NGramModel:
    """Probabilities and backoff weights stored as natural logs keyed by word tuples.

    Lookup follows the usual backoff rule: use the listed n-gram if present,
    otherwise add the context's backoff weight and shorten the context.
    """

    def __init__(self, order, vocab, logprobs, backoffs):
        self.order = order
        self.vocab = list(vocab)
        self.logprobs = logprobs
        self.backoffs = backoffs
        self._known = set(self.vocab) | {BOS}

    @classmethod
    def uniform(cls, words):
        words = list(words)
        lp = -math.log(len(words))
        return cls(1, words, {(w,): lp for w in words}, {})

    def map_word(self, w):
        if w in self._known:
            return w
        if UNK not in self._known:
            raise KeyError(f"word {w!r} not in vocabulary and model has no {UNK}")
        return UNK

    def predictable(self):
        return [w for w in self.vocab if w != BOS]

    def logprob(self, word, history=()):
        word = self.map_word(word)
        h = tuple(self.map_word(w) for w in history)
        h = h[max(0, len(h) - (self.order - 1)):] if self.order > 1 else ()
        acc = 0.0
        while True:
            lp = self.logprobs.get(h + (word,))
            if lp is not None:
                return acc + lp
            if not h:
                return -math.inf
            acc += self.backoffs.get(h, 0.0)
            h = h[1:]

    def prob(self, word, history=()):
        return math.exp(self.logprob(word, history))

    def sentence_logprob(self, words):
        """Natural-log probability of ``<s> words </s>``, summed left to right."""
        hist = [BOS]
        total = 0.0
        for w in list(words) + [EOS]:
            total = total + self.logprob(w, hist)
            hist.append(w)
        return total


def _pad(sentence):
    return [BOS] + list(sentence) + [EOS]


def train_ngram(corpus, order=4, discount=0.75):
    """Katz-style backoff with absolute discounting ``discount`` at every order.

    The unigram level spreads the discounted mass uniformly over the
    vocabulary (training words, ``</s>`` and ``<unk>``), so unseen words get
    nonzero probability whenever ``discount`` > 0.
    """
    corpus = [list(s) for s in corpus]
    if not corpus or not any(corpus):
        raise ValueError("empty corpus")
    if order < 1:
        raise ValueError("order must be >= 1")
    if not 0 <= discount < 1:
        raise ValueError("discount must be in [0, 1)")
    counts = [Counter() for _ in range(order + 1)]
    for sent in corpus:
        toks = _pad(sent)
        for i in range(1, len(toks)):
            for k in range(1, order + 1):
                if i - k + 1 < 0:
                    break
                counts[k][tuple(toks[i - k + 1:i + 1])] += 1
    words = sorted({w for (w,) in counts[1]} - {EOS, UNK})
    vocab = [BOS, EOS, UNK] + words
    predictable = vocab[1:]
    model = NGramModel(order, vocab, {}, {})

    uni = counts[1]
    n = sum(uni.values())
    leftover = discount * len(uni) / n
    for w in predictable:
        p = max(uni.get((w,), 0) - discount, 0.0) / n + leftover / len(predictable)
        model.logprobs[(w,)] = math.log(p) if p > 0 else -math.inf

    for k in range(2, order + 1):
        by_ctx = defaultdict(dict)
        for gram, c in counts[k].items():
            by_ctx[gram[:-1]][gram[-1]] = c
        for ctx in sorted(by_ctx):
            follow = by_ctx[ctx]
            total = sum(follow.values())
            lower = 0.0
            for w, c in follow.items():
                model.logprobs[ctx + (w,)] = math.log((c - discount) / total) if c > discount else -math.inf
                lower += model.prob(w, ctx[1:])
            mass = discount * len(follow) / total
            if mass <= 0:
                model.backoffs[ctx] = -math.inf
            else:
                model.backoffs[ctx] = math.log(mass) - math.log1p(-min(lower, 1.0 - 1e-15))
    return model


def perplexity(model, corpus):
    """exp of the mean negative log-likelihood per token, end markers included."""
    corpus = [list(s) for s in corpus]
    if not corpus:
        raise ValueError("empty corpus")
    nll = 0.0
    tokens = 0
    for sent in corpus:
        nll -= model.sentence_logprob(sent)
        tokens += len(sent) + 1
    return math.exp(nll / tokens)


def _log10(x):
    return ARPA_NEG_INF if x == -math.inf else x / LN10


def write_arpa(model, path):
    by_order = defaultdict(list)
    for gram, lp in model.logprobs.items():
        by_order[len(gram)].append((gram, lp))
    if (BOS,) not in model.logprobs:
        by_order[1].append(((BOS,), -math.inf))
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n\\data\\\n")
        for k in range(1, model.order + 1):
            f.write(f"ngram {k}={len(by_order[k])}\n")
        for k in range(1, model.order + 1):
            f.write(f"\n\\{k}-grams:\n")
            for gram, lp in sorted(by_order[k]):
                line = f"{_log10(lp):.10f}\t{' '.join(gram)}"
                if gram in model.backoffs:
                    line += f"\t{_log10(model.backoffs[gram]):.10f}"
                f.write(line + "\n")
        f.write("\n\\end\\\n")


def read_arpa(path):
    logprobs, backoffs = {}, {}
    counts = {}
    section = None
    with open(path, encoding="utf-8") as f:
        for lineno, raw in enumerate(f, start=1):
            line = raw.strip()
            if not line:
                continue
            if line == "\\data\\":
                section = "data"
                continue
            if line == "\\end\\":
                break
            if line.startswith("\\") and line.endswith("-grams:"):
                section = int(line[1:line.index("-")])
                continue
            if section == "data":
                key, _, val = line.partition("=")
                counts[int(key.split()[1])] = int(val)
                continue
            if not isinstance(section, int):
                raise ValueError(f"{path}:{lineno}: content outside any section")
            parts = line.split()
            try:
                lp = float(parts[0])
                gram = tuple(parts[1:1 + section])
                bow = float(parts[1 + section]) if len(parts) > 1 + section else None
            except (ValueError, IndexError):
                raise ValueError(f"{path}:{lineno}: malformed {section}-gram line") from None
            if len(gram) != section:
                raise ValueError(f"{path}:{lineno}: expected {section} words")
            logprobs[gram] = -math.inf if lp <= ARPA_NEG_INF else lp * LN10
            if bow is not None:
                backoffs[gram] = -math.inf if bow <= ARPA_NEG_INF else bow * LN10
    if not counts:
        raise ValueError(f"{path}: missing \\data\\ header")
    order = max(counts)
    for k, n in counts.items():
        found = sum(1 for g in logprobs if len(g) == k)
        if found != n:
            raise ValueError(f"{path}: header declares {n} {k}-grams, file lists {found}")
    vocab = [g[0] for g in logprobs if len(g) == 1]
    if BOS in vocab:
        logprobs.pop((BOS,))
        vocab.remove(BOS)
    return NGramModel(order, [BOS] + sorted(vocab), logprobs, backoffs)
