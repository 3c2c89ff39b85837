"""Small problem instances shared by several test modules."""

import numpy as np

from hakka_asr import autodiff as ad
from hakka_asr import chain, dcae
from hakka_asr import network as nw

TINY_SPEC = dict(input_dim=4, num_pdf_targets=3, stream_dilations=(3, 3), num_layers=1,
                 embed_dim=4, bottleneck_dim=2, final_projection_dim=4)


def tiny_problem(variant, seed, frames=12):
    """A ``frames``-frame utterance (frames / 3 network output frames) with every
    loss target present, and the model's parameters as a grad_check point."""
    spec = nw.NetworkSpec(**TINY_SPEC)
    model = dcae.build_dcae(variant, spec, seed, decoder_hidden=3)
    r = np.random.Generator(np.random.PCG64(1000 + seed))
    feats = r.standard_normal((frames, spec.input_dim))
    clean = feats + 0.1 * r.standard_normal(feats.shape)
    labels = r.integers(0, spec.num_pdf_targets, nw.output_frames(spec, frames))
    den = chain.build_denominator(chain.estimate_bigram([labels, r.integers(0, 3, 8)], 3,
                                                       with_final=False, add_k=0.5))
    num = chain.numerator_for_labels(list(labels), den, len(labels))
    targets = dcae.Targets(feats=feats, num=num, den=den, labels=labels,
                           clean=None if model.variant is dcae.Variant.C else clean)
    weights = dcae.LossWeights()

    def loss(tensors):
        out = dcae.dcae_forward(model.variant, model, feats, targets.clean, weights, tensors)
        return dcae.dcae_objective(model.variant, weights, out, targets)[0]

    # zero-initialised biases can leave a dead code layer feeding exact zeros
    # into the next ReLU, i.e. a kink; random biases keep the point generic
    point = {k: (0.1 * r.standard_normal(v.shape) if k.endswith((".b", ".b1", ".b2")) else v.copy())
             for k, v in model.params.items()}
    model.params.update({k: v.copy() for k, v in point.items()})
    return model, loss, point


def dcae_grad_error(variant, seed):
    _, loss, point = tiny_problem(variant, seed)
    return ad.grad_check(loss, point)


def rng(seed=0):
    return np.random.Generator(np.random.PCG64(seed))


def weighted_sum(t, seed=99):
    """Scalar probe: sum of t * fixed random weights."""
    w = rng(seed).standard_normal(t.shape)
    return ad.total(ad.mul(t, w))


PRIMITIVES = {
    "add": (lambda p: weighted_sum(ad.add(p["a"], p["b"])), {"a": (3, 4), "b": (4,)}),
    "sub": (lambda p: weighted_sum(ad.sub(p["a"], p["b"])), {"a": (3, 4), "b": (3, 1)}),
    "mul": (lambda p: weighted_sum(ad.mul(p["a"], p["b"])), {"a": (3, 4), "b": (3, 4)}),
    "matmul": (lambda p: weighted_sum(ad.matmul(p["a"], p["b"])), {"a": (3, 4), "b": (4, 2)}),
    "relu": (lambda p: weighted_sum(ad.relu(p["a"])), {"a": (4, 5)}),
    "sigmoid": (lambda p: weighted_sum(ad.sigmoid(p["a"])), {"a": (4, 5)}),
    "tanh": (lambda p: weighted_sum(ad.tanh(p["a"])), {"a": (4, 5)}),
    "total": (lambda p: ad.total(ad.mul(p["a"], p["a"])), {"a": (3, 3)}),
    "mean": (lambda p: ad.mean(ad.mul(p["a"], p["a"])), {"a": (3, 3)}),
    "softmax_cross_entropy": (lambda p: ad.softmax_cross_entropy(p["a"], np.array([0, 2, 1, 2])), {"a": (4, 3)}),
    "mse": (lambda p: ad.mse(p["a"], p["b"]), {"a": (4, 3), "b": (4, 3)}),
    "dilated_conv1d": (lambda p: weighted_sum(ad.dilated_conv1d(p["x"], p["k"], dilation=2, bias=p["c"])),
                       {"x": (9, 2), "k": (6, 3), "c": (3,)}),
    "concat": (lambda p: weighted_sum(ad.concat([p["a"], p["b"]], axis=1)), {"a": (3, 2), "b": (3, 4)}),
    "slice_rows": (lambda p: weighted_sum(ad.slice_rows(p["a"], np.array([0, 2, 2, 4]))), {"a": (5, 3)}),
    "reshape": (lambda p: weighted_sum(ad.reshape(p["a"], (2, 6))), {"a": (4, 3)}),
    "batchnorm": (lambda p: weighted_sum(ad.batchnorm(p["a"])), {"a": (6, 3)}),
}


def random_point(shapes, seed):
    r = rng(seed)
    # keep relu inputs away from the kink so central differences stay valid
    out = {}
    for name, shape in shapes.items():
        v = r.standard_normal(shape)
        out[name] = np.where(np.abs(v) < 0.05, 0.1 * np.sign(v) + v, v)
    return out


def impulse_support(net, stream, T, centre):
    """Input frames whose gradient reaches output frame ``centre`` of one stream.

    Weights and inputs are made positive so every ReLU is active and no path
    is masked.
    """
    params = {k: np.abs(v) + 0.01 for k, v in net.params.items()}
    tensors = {k: ad.Tensor(v) for k, v in params.items()}
    x = ad.Tensor(np.random.default_rng(0).uniform(0.5, 1.5, (T, net.spec.input_dim)), requires_grad=True)
    out = nw.run_stream(nw.Network(net.spec, params), stream, x, tensors)
    ad.total(ad.slice_rows(out, slice(centre, centre + 1))).backward()
    rows = np.flatnonzero(np.abs(x.grad).sum(axis=1) > 0)
    return rows
