"""Chain-based discriminative autoencoders (c-, hc- and pc-DcAE).

The encoder is the multistream network.  Decoders read its code layer
(T' frames) and emit T input-rate frames: one hidden tanh layer followed by
a projection to ``subsample_rate`` frames per code frame.

* ``c_dcae``: encoder -> logits; code -> reconstruction of the input.
* ``hc_dcae``: encoder 1 -> enhancement decoder -> enhanced features, which
  feed encoder 2 -> logits; encoder 2's code -> reconstruction of the input.
* ``pc_dcae``: one encoder; two decoder branches off the shared code layer,
  one reconstructing the input, one estimating the clean reference.
"""

from __future__ import annotations

import enum
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import NamedTuple, Optional

import numpy as np

from . import autodiff as ad
from . import chain
from . import network as nw

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    pass


class DivergenceError(RuntimeError):
    def __init__(self, message, checkpoint=None):
        super().__init__(message)
        self.checkpoint = checkpoint


class Variant(str, enum.Enum):
    C = "c_dcae"
    HC = "hc_dcae"
    PC = "pc_dcae"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        aliases = {"c": cls.C, "hc": cls.HC, "pc": cls.PC}
        if value in aliases:
            return aliases[value]
        return cls(value)


@dataclass(frozen=True)
class LossWeights:
    mmi: float = 1.0
    ce: float = 0.2
    recon: float = 0.2
    enh: float = 0.2

    def __post_init__(self):
        values = (self.mmi, self.ce, self.recon, self.enh)
        if any(not math.isfinite(w) or w < 0 for w in values):
            raise ConfigError(f"loss weights must be finite and nonnegative, got {values}")
        if not any(w > 0 for w in values):
            raise ConfigError("at least one loss weight must be positive")


@dataclass
class LossBreakdown:
    total: float
    mmi: Optional[float] = None
    ce: Optional[float] = None
    recon_input: Optional[float] = None
    recon_clean: Optional[float] = None

    def as_dict(self):
        return asdict(self)


class DcaeOutput(NamedTuple):
    pdf_logits: ad.Tensor
    recon_input_hat: ad.Tensor
    recon_clean_hat: Optional[ad.Tensor]


@dataclass
class Targets:
    feats: np.ndarray
    num: Optional[chain.ChainGraph] = None
    den: Optional[chain.ChainGraph] = None
    labels: Optional[np.ndarray] = None
    clean: Optional[np.ndarray] = None


class DcaeModel:
    def __init__(self, variant, spec, params, decoder_hidden):
        self.variant = Variant.parse(variant)
        self.spec = spec
        self.params = params
        self.decoder_hidden = decoder_hidden
        self.encoder = nw.Network(spec, params, "enc.")
        self.encoder2 = nw.Network(spec, params, "enc2.") if self.variant is Variant.HC else None

    @property
    def networks(self):
        return [n for n in (self.encoder, self.encoder2) if n is not None]

    def config(self):
        return {"variant": self.variant.value, "network": self.spec.to_dict(),
                "decoder_hidden": self.decoder_hidden}

    def tensors(self, requires_grad=False):
        return {k: ad.Tensor(v, requires_grad=requires_grad) for k, v in self.params.items()}


def _decoder_params(params, name, spec, hidden, seed):
    width = spec.subsample_rate * spec.input_dim
    params[name + ".W1"] = nw.param_rng(seed, name + ".W1").standard_normal(
        (spec.final_projection_dim, hidden)) / math.sqrt(spec.final_projection_dim)
    params[name + ".b1"] = np.zeros(hidden)
    # small output layer so the initial reconstruction sits near the feature mean
    params[name + ".W2"] = nw.param_rng(seed, name + ".W2").standard_normal(
        (hidden, width)) * (0.1 / math.sqrt(hidden))
    params[name + ".b2"] = np.zeros(width)


def build_dcae(variant, spec, seed, decoder_hidden=32):
    variant = Variant.parse(variant)
    params = dict(nw.build_network(spec, seed, prefix="enc.").params)
    if variant is Variant.HC:
        params.update(nw.build_network(spec, seed, prefix="enc2.").params)
    _decoder_params(params, "dec.recon", spec, decoder_hidden, seed)
    if variant is not Variant.C:
        _decoder_params(params, "dec.enh", spec, decoder_hidden, seed)
    return DcaeModel(variant, spec, params, decoder_hidden)


def decode(code, p, name, spec, frames):
    """Code layer (T' x P) -> reconstructed frames (frames x input_dim)."""
    h = ad.tanh(ad.add(ad.matmul(code, p[name + ".W1"]), p[name + ".b1"]))
    y = ad.add(ad.matmul(h, p[name + ".W2"]), p[name + ".b2"])
    y = ad.reshape(y, (code.shape[0] * spec.subsample_rate, spec.input_dim))
    return ad.slice_rows(y, slice(0, frames))


def dcae_forward(variant, model, feats, clean_feats=None, weights=None, tensors=None):
    variant = Variant.parse(variant)
    if variant is not model.variant:
        raise ConfigError(f"model was built as {model.variant.value}, asked to run {variant.value}")
    if (weights is not None and variant is not Variant.C and weights.enh > 0 and clean_feats is None):
        raise ConfigError(f"{variant.value} with an enhancement weight needs clean reference features")
    p = tensors if tensors is not None else model.tensors()
    spec = model.spec
    x = ad.as_tensor(feats)
    T = x.shape[0]
    if variant is Variant.HC:
        first = nw.forward(model.encoder, x, p)
        enhanced = decode(first.code, p, "dec.enh", spec, T)
        out = nw.forward(model.encoder2, enhanced, p)
        recon = decode(out.code, p, "dec.recon", spec, T)
        return DcaeOutput(out.logits, recon, enhanced)
    out = nw.forward(model.encoder, x, p)
    recon = decode(out.code, p, "dec.recon", spec, T)
    clean_hat = decode(out.code, p, "dec.enh", spec, T) if variant is Variant.PC else None
    return DcaeOutput(out.logits, recon, clean_hat)


def mmi_term(logits, num, den):
    """LF-MMI loss node: value from forward-backward, gradient gamma_den - gamma_num."""
    loss, grad = chain.lfmmi_loss_grad(num, den, logits.data)
    return ad.custom(loss, logits, grad)


def dcae_objective(variant, weights, outputs, targets):
    """Total loss Tensor plus the per-component breakdown."""
    variant = Variant.parse(variant)
    logits = outputs.pdf_logits
    terms = {}
    if targets.num is not None and targets.den is not None:
        terms["mmi"] = mmi_term(logits, targets.num, targets.den)
    elif weights.mmi > 0:
        raise ConfigError("mmi weight is positive but numerator/denominator graphs are missing")
    if targets.labels is not None:
        labels = np.asarray(targets.labels)
        if labels.shape != (logits.shape[0],):
            raise ad.ShapeError("ce labels", labels.shape, logits.shape)
        terms["ce"] = ad.softmax_cross_entropy(logits, labels)
    elif weights.ce > 0:
        raise ConfigError("ce weight is positive but frame labels are missing")
    terms["recon_input"] = ad.mse(outputs.recon_input_hat, ad.as_tensor(targets.feats))
    if variant is not Variant.C:
        if targets.clean is not None:
            terms["recon_clean"] = ad.mse(outputs.recon_clean_hat, ad.as_tensor(targets.clean))
        elif weights.enh > 0:
            raise ConfigError(f"{variant.value} enhancement weight is positive but clean features are missing")
    scale = {"mmi": weights.mmi, "ce": weights.ce, "recon_input": weights.recon, "recon_clean": weights.enh}
    total = None
    for name, term in terms.items():
        if scale[name] > 0:
            piece = ad.mul(term, scale[name])
            total = piece if total is None else ad.add(total, piece)
    breakdown = LossBreakdown(float(total.data), **{k: float(v.data) for k, v in terms.items()})
    return total, breakdown


def dcae_loss(variant, weights, outputs, targets):
    return dcae_objective(variant, weights, outputs, targets)[1]


def subsample_labels(frame_labels, rate):
    """Label of the centre frame of each ``rate``-frame group."""
    labels = np.asarray(frame_labels)
    T = labels.shape[0]
    idx = np.minimum(np.arange(-(-T // rate)) * rate + rate // 2, T - 1)
    return labels[idx]


@dataclass
class Example:
    utt_id: str
    feats: np.ndarray
    frame_labels: np.ndarray
    clean: Optional[np.ndarray] = None
    labels: Optional[np.ndarray] = field(default=None, repr=False)
    num: Optional[chain.ChainGraph] = field(default=None, repr=False)


def denominator_from_examples(examples, num_labels, rate, add_k=0.01):
    seqs = [subsample_labels(ex.frame_labels, rate) for ex in examples]
    return chain.build_denominator(chain.estimate_bigram(seqs, num_labels, with_final=False, add_k=add_k))


def prepare_examples(examples, den, rate):
    """Attach CE targets and numerator graphs; infeasible utterances are skipped with a warning."""
    ready = []
    for ex in examples:
        labels = subsample_labels(ex.frame_labels, rate)
        try:
            num = chain.numerator_for_labels(list(ex.frame_labels), den, len(labels))
        except chain.GraphError as exc:
            log.warning("skipping %s: %s", ex.utt_id, exc)
            continue
        ready.append(Example(ex.utt_id, ex.feats, ex.frame_labels, ex.clean, labels, num))
    return ready


def add_noise(feats, snr_db, rng):
    """Additive Gaussian corruption at the given feature-domain SNR."""
    power = float(np.mean(np.asarray(feats) ** 2))
    noise_power = power / (10.0 ** (snr_db / 10.0))
    return feats + rng.standard_normal(feats.shape) * math.sqrt(noise_power)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 10
    learning_rate: float = 0.002
    momentum: float = 0.9
    lr_decay: float = 0.9
    seed: int = 0
    orthogonal_every: int = 4
    clip_norm: float = 10.0
    shuffle: bool = True


class TrainResult(NamedTuple):
    history: list
    best_epoch: int
    best_params: dict


def _targets(ex, den):
    return Targets(feats=ex.feats, num=ex.num, den=den, labels=ex.labels, clean=ex.clean)


def evaluate(model, examples, weights, den):
    sums = {}
    for ex in examples:
        out = dcae_forward(model.variant, model, ex.feats, ex.clean, weights)
        b = dcae_loss(model.variant, weights, out, _targets(ex, den))
        for k, v in b.as_dict().items():
            if v is not None:
                sums[k] = sums.get(k, 0.0) + v
    return LossBreakdown(**{k: v / len(examples) for k, v in sums.items()})


def train(model, examples, weights, config, den, heldout=None, checkpoint_path=None, log_path=None):
    """Per-utterance SGD with momentum and exponential learning-rate decay.

    ``examples`` must already carry numerator graphs (see ``prepare_examples``).
    The best parameters by held-out total loss (training loss when no
    held-out set is given) are kept and optionally saved.
    """
    if not examples:
        raise ConfigError("training set is empty")
    rng = np.random.Generator(np.random.PCG64(config.seed))
    velocity = {k: np.zeros_like(v) for k, v in model.params.items()}
    history = []
    best = (math.inf, 0, {k: v.copy() for k, v in model.params.items()})
    lr = config.learning_rate
    step = 0
    log_file = open(log_path, "w", encoding="utf-8") if log_path else None
    try:
        for epoch in range(1, config.epochs + 1):
            order = rng.permutation(len(examples)) if config.shuffle else np.arange(len(examples))
            sums = {}
            for i in order:
                ex = examples[i]
                tensors = model.tensors(requires_grad=True)
                try:
                    out = dcae_forward(model.variant, model, ex.feats, ex.clean, weights, tensors)
                    total, b = dcae_objective(model.variant, weights, out, _targets(ex, den))
                except ad.NonFiniteError as exc:
                    _abort(model, best, checkpoint_path, f"epoch {epoch}, {ex.utt_id}: {exc}")
                total.backward()
                grads = {k: (t.grad if t.grad is not None else np.zeros_like(t.data)) for k, t in tensors.items()}
                norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
                if not math.isfinite(norm):
                    _abort(model, best, checkpoint_path, f"epoch {epoch}, {ex.utt_id}: non-finite gradient")
                clip = 1.0 if config.clip_norm is None or norm <= config.clip_norm else config.clip_norm / norm
                for k in sorted(model.params):
                    velocity[k] = config.momentum * velocity[k] - lr * clip * grads[k]
                    model.params[k] = model.params[k] + velocity[k]
                step += 1
                if lr > 0 and config.orthogonal_every and step % config.orthogonal_every == 0:
                    for net in model.networks:
                        nw.constrain(net)
                for k, v in b.as_dict().items():
                    if v is not None:
                        sums[k] = sums.get(k, 0.0) + v
            train_loss = LossBreakdown(**{k: v / len(examples) for k, v in sums.items()})
            held = evaluate(model, heldout, weights, den) if heldout else None
            score = (held or train_loss).total
            record = {"epoch": epoch, "lr": lr, "train": train_loss.as_dict(),
                      "heldout": held.as_dict() if held else None}
            history.append(record)
            if log_file:
                log_file.write(json.dumps(record, sort_keys=True) + "\n")
            if not math.isfinite(score):
                _abort(model, best, checkpoint_path, f"epoch {epoch}: non-finite loss")
            if score < best[0]:
                best = (score, epoch, {k: v.copy() for k, v in model.params.items()})
            lr *= config.lr_decay
    finally:
        if log_file:
            log_file.close()
    if checkpoint_path:
        nw.save_checkpoint(checkpoint_path, best[2], model.config(), {"best_epoch": best[1]})
    return TrainResult(history, best[1], best[2])


def _abort(model, best, checkpoint_path, reason):
    model.params.clear()
    model.params.update(best[2])
    if checkpoint_path:
        nw.save_checkpoint(checkpoint_path, best[2], model.config(), {"best_epoch": best[1], "diverged": reason})
    raise DivergenceError(f"training diverged ({reason})", checkpoint_path)


def load_model(path):
    params, header = nw.load_checkpoint(path)
    cfg = header["spec"]
    spec = nw.NetworkSpec.from_dict(cfg["network"])
    model = DcaeModel(cfg["variant"], spec, params, cfg["decoder_hidden"])
    nw.load_checkpoint(path, model.config())
    return model, header
