"""Single-layer tanh recurrent language model trained with the autodiff tape."""

from __future__ import annotations

import math

import numpy as np

from .. import autodiff as ad
from .. import network as nw
from .ngram import BOS, EOS, UNK


class RnnLm:
    def __init__(self, vocab, params):
        self.vocab = list(vocab)
        self.index = {w: i for i, w in enumerate(self.vocab)}
        self.params = params

    @property
    def hidden_dim(self):
        return self.params["Wh"].shape[0]

    def ids(self, words):
        unk = self.index.get(UNK)
        out = []
        for w in words:
            i = self.index.get(w, unk)
            if i is None:
                raise KeyError(f"word {w!r} not in vocabulary and model has no {UNK}")
            out.append(i)
        return out

    def initial_state(self):
        return np.zeros(self.hidden_dim)

    def step(self, state, word):
        """Consume ``word``; return the new state and the next-word distribution."""
        p = self.params
        x = p["E"][self.ids([word])[0]]
        h = np.tanh(x @ p["Wx"] + state @ p["Wh"] + p["bh"])
        logits = h @ p["Wo"] + p["bo"]
        z = logits - logits.max()
        probs = np.exp(z)
        return h, probs / probs.sum()

    def sentence_logprob(self, words):
        ids = self.ids(list(words) + [EOS])
        state = self.initial_state()
        total = 0.0
        prev = BOS
        for target, w in zip(ids, list(words) + [EOS]):
            state, probs = self.step(state, prev)
            total = total + math.log(probs[target])
            prev = w
        return total

    def config(self):
        return {"type": "rnnlm", "vocab": self.vocab, "embed_dim": int(self.params["E"].shape[1]),
                "hidden_dim": int(self.hidden_dim)}

    def save(self, path):
        nw.save_checkpoint(path, self.params, self.config())

    @classmethod
    def load(cls, path):
        params, header = nw.load_checkpoint(path)
        return cls(header["spec"]["vocab"], params)


def init_rnnlm(vocab, embed_dim=16, hidden_dim=32, seed=0):
    vocab = list(vocab)
    V = len(vocab)
    r = lambda name: nw.param_rng(seed, "rnnlm." + name)  # noqa: E731
    params = {
        "E": r("E").standard_normal((V, embed_dim)) * 0.1,
        "Wx": r("Wx").standard_normal((embed_dim, hidden_dim)) / math.sqrt(embed_dim),
        "Wh": r("Wh").standard_normal((hidden_dim, hidden_dim)) * (0.5 / math.sqrt(hidden_dim)),
        "bh": np.zeros(hidden_dim),
        "Wo": r("Wo").standard_normal((hidden_dim, V)) / math.sqrt(hidden_dim),
        "bo": np.zeros(V),
    }
    return RnnLm(vocab, params)


def sentence_loss(model, words, tensors):
    """Mean cross-entropy of predicting ``words + </s>`` from ``<s> + words``."""
    inputs = model.ids([BOS] + list(words))
    targets = np.array(model.ids(list(words) + [EOS]))
    emb = ad.slice_rows(tensors["E"], np.array(inputs))
    pre_x = ad.add(ad.matmul(emb, tensors["Wx"]), tensors["bh"])
    h = ad.Tensor(np.zeros((1, model.hidden_dim)))
    states = []
    for t in range(len(inputs)):
        h = ad.tanh(ad.add(ad.slice_rows(pre_x, slice(t, t + 1)), ad.matmul(h, tensors["Wh"])))
        states.append(h)
    hs = ad.concat(states, axis=0)
    logits = ad.add(ad.matmul(hs, tensors["Wo"]), tensors["bo"])
    return ad.softmax_cross_entropy(logits, targets)


def train_rnnlm(corpus, vocab=None, embed_dim=16, hidden_dim=32, epochs=5, learning_rate=0.1,
                clip_norm=5.0, seed=0):
    """Plain SGD over sentences in a seeded shuffled order."""
    corpus = [list(s) for s in corpus if s]
    if not corpus:
        raise ValueError("empty corpus")
    if vocab is None:
        vocab = [BOS, EOS, UNK] + sorted({w for s in corpus for w in s} - {BOS, EOS, UNK})
    model = init_rnnlm(vocab, embed_dim, hidden_dim, seed)
    rng = np.random.Generator(np.random.PCG64(seed))
    losses = []
    for epoch in range(epochs):
        total = 0.0
        for i in rng.permutation(len(corpus)):
            tensors = {k: ad.Tensor(v, requires_grad=True) for k, v in model.params.items()}
            loss = sentence_loss(model, corpus[i], tensors)
            loss.backward()
            grads = {k: t.grad for k, t in tensors.items()}
            norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
            scale = learning_rate * (1.0 if norm <= clip_norm else clip_norm / norm)
            for k in sorted(model.params):
                model.params[k] = model.params[k] - scale * grads[k]
            total += float(loss.data)
        losses.append(total / len(corpus))
    return model, losses
