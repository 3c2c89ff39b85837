"""Multistream TDNN-F acoustic network.

Each stream is a stack of factored TDNN layers sharing one dilation rate.
The first layer of every stream runs at the input frame rate and is then
sub-sampled by ``subsample_rate``; later layers run at the reduced rate with
dilation ``stream.dilation // subsample_rate`` so that every stream spans
``1 + 2 * dilation * num_layers`` input frames.  Stream outputs are
concatenated per frame and projected to the code layer and the pdf logits.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import struct
import zlib
from dataclasses import asdict, dataclass, field
from typing import NamedTuple

import numpy as np

from . import autodiff as ad

log = logging.getLogger(__name__)


class SpecError(ValueError):
    pass


class InputTooShortError(ValueError):
    pass


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class TdnnfLayerSpec:
    """One factored layer.  ``dilation`` is counted in frames at the rate the layer runs."""

    input_dim: int
    bottleneck_dim: int
    output_dim: int
    dilation: int
    kernel_width: int = 3
    has_residual: bool = False
    subsample: int = 1

    def __post_init__(self):
        if self.bottleneck_dim >= min(self.input_dim, self.output_dim):
            raise SpecError(
                f"bottleneck_dim {self.bottleneck_dim} must be below min(input_dim, output_dim)"
                f" = {min(self.input_dim, self.output_dim)}")
        if self.dilation < 1:
            raise SpecError("dilation must be >= 1")
        if self.kernel_width < 1 or self.kernel_width % 2 == 0:
            raise SpecError("kernel_width must be a positive odd number")
        if self.has_residual and self.input_dim != self.output_dim:
            raise SpecError("residual connections need input_dim == output_dim")


@dataclass(frozen=True)
class StreamSpec:
    dilation: int
    layers: tuple

    @property
    def receptive_field(self):
        """Input frames seen by one output frame of this stream."""
        rf = 1
        scale = 1
        for layer in self.layers:
            rf += (layer.kernel_width - 1) * layer.dilation * scale
            scale *= layer.subsample
        return rf


@dataclass(frozen=True)
class NetworkSpec:
    input_dim: int = 1064
    num_pdf_targets: int = 120
    subsample_rate: int = 3
    stream_dilations: tuple = (3, 6, 9)
    num_layers: int = 5
    embed_dim: int = 64
    bottleneck_dim: int = 16
    final_projection_dim: int = 128
    kernel_width: int = 3
    streams: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "stream_dilations", tuple(int(d) for d in self.stream_dilations))
        if self.subsample_rate < 1:
            raise SpecError("subsample_rate must be >= 1")
        if len(self.stream_dilations) < 2:
            raise SpecError("a multistream network needs at least 2 streams")
        if self.num_layers < 1:
            raise SpecError("each stream needs at least one layer")
        for d in self.stream_dilations:
            if d <= 0 or d % self.subsample_rate:
                raise SpecError(
                    f"stream dilation {d} rejected: dilation rates must be positive multiples"
                    f" of the sub-sampling rate ({self.subsample_rate} frames)")
        streams = []
        for d in self.stream_dilations:
            layers = [TdnnfLayerSpec(self.input_dim, self.bottleneck_dim, self.embed_dim, d,
                                     self.kernel_width, False, self.subsample_rate)]
            for _ in range(self.num_layers - 1):
                layers.append(TdnnfLayerSpec(self.embed_dim, self.bottleneck_dim, self.embed_dim,
                                             d // self.subsample_rate, self.kernel_width, True))
            streams.append(StreamSpec(d, tuple(layers)))
        object.__setattr__(self, "streams", tuple(streams))

    @property
    def min_frames(self):
        return max(s.receptive_field for s in self.streams)

    def to_dict(self):
        d = asdict(self)
        d.pop("streams")
        d["stream_dilations"] = list(self.stream_dilations)
        return d

    @classmethod
    def from_dict(cls, d):
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__ and k != "streams"}
        unknown = set(d) - set(known)
        if unknown:
            raise SpecError(f"unknown network spec fields: {sorted(unknown)}")
        if "stream_dilations" in known:
            known["stream_dilations"] = tuple(known["stream_dilations"])
        return cls(**known)

    def spec_hash(self):
        return spec_hash(self.to_dict())


def spec_hash(obj):
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def load_network_spec(path):
    with open(path, encoding="utf-8") as f:
        return NetworkSpec.from_dict(json.load(f))


def param_rng(seed, name):
    """Per-parameter generator: PCG64 seeded from (seed, crc32(name))."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), zlib.crc32(name.encode())])))


class Network:
    """Parameter store plus the spec it was built from."""

    def __init__(self, spec, params, prefix=""):
        self.spec = spec
        self.params = params
        self.prefix = prefix

    def layer_names(self):
        for i, stream in enumerate(self.spec.streams):
            for j, _ in enumerate(stream.layers):
                yield f"{self.prefix}s{i}.l{j}"

    def bottleneck_names(self):
        return [f"{name}.B" for name in self.layer_names()]

    @property
    def num_params(self):
        return int(sum(v.size for k, v in self.params.items() if k.startswith(self.prefix)))


def build_network(spec, seed, prefix="", warmup_steps=10):
    """Initialize parameters deterministically from ``seed``.

    Bottleneck factors get ``warmup_steps`` semi-orthogonal updates so they
    start close to the constraint surface.
    """
    params = {}
    for i, stream in enumerate(spec.streams):
        for j, layer in enumerate(stream.layers):
            name = f"{prefix}s{i}.l{j}"
            fan_in = layer.kernel_width * layer.input_dim
            B = param_rng(seed, name + ".B").standard_normal((fan_in, layer.bottleneck_dim)) / math.sqrt(fan_in)
            for _ in range(warmup_steps):
                B = semi_orthogonal_step(B.T).T
            params[name + ".B"] = B
            params[name + ".A"] = (param_rng(seed, name + ".A").standard_normal(
                (layer.bottleneck_dim, layer.output_dim)) * math.sqrt(2.0 / layer.bottleneck_dim))
            params[name + ".b"] = np.zeros(layer.output_dim)
            if layer.has_residual:
                params[name + ".scale"] = np.ones(1)
    cat_dim = spec.embed_dim * len(spec.streams)
    params[prefix + "proj.W"] = param_rng(seed, prefix + "proj.W").standard_normal(
        (cat_dim, spec.final_projection_dim)) * math.sqrt(2.0 / cat_dim)
    params[prefix + "proj.b"] = np.zeros(spec.final_projection_dim)
    params[prefix + "out.W"] = param_rng(seed, prefix + "out.W").standard_normal(
        (spec.final_projection_dim, spec.num_pdf_targets)) / math.sqrt(spec.final_projection_dim)
    params[prefix + "out.b"] = np.zeros(spec.num_pdf_targets)
    return Network(spec, params, prefix)


class NetOutput(NamedTuple):
    logits: ad.Tensor
    stream_embeddings: list
    code: ad.Tensor


def _tensors(params, tensors):
    if tensors is not None:
        return tensors
    return {k: ad.Tensor(v) for k, v in params.items()}


def run_stream(net, index, feats, tensors=None):
    """Forward one stream; returns its T' x embed_dim output."""
    p = _tensors(net.params, tensors)
    stream = net.spec.streams[index]
    x = ad.as_tensor(feats)
    for j, layer in enumerate(stream.layers):
        name = f"{net.prefix}s{index}.l{j}"
        h = ad.dilated_conv1d(x, p[name + ".B"], layer.dilation)
        if layer.subsample > 1:
            h = ad.slice_rows(h, slice(None, None, layer.subsample))
        y = ad.relu(ad.add(ad.matmul(h, p[name + ".A"]), p[name + ".b"]))
        if layer.has_residual:
            y = ad.add(y, ad.mul(x, p[name + ".scale"]))
        x = y
    return x


def forward(net, feats, tensors=None, stream_order=None):
    """Run all streams, concatenate per frame, project to code layer and logits.

    ``tensors`` maps parameter names to Tensors when gradients are wanted.
    ``stream_order`` permutes the concatenation order (testing aid).
    """
    spec = net.spec
    x = ad.as_tensor(feats)
    if x.data.ndim != 2 or x.shape[1] != spec.input_dim:
        raise ad.ShapeError("network input", x.shape, ("T", spec.input_dim))
    T = x.shape[0]
    if T < spec.min_frames:
        raise InputTooShortError(f"input has {T} frames; the network needs at least {spec.min_frames}")
    p = _tensors(net.params, tensors)
    order = range(len(spec.streams)) if stream_order is None else stream_order
    embeddings = [run_stream(net, i, x, p) for i in order]
    cat = ad.concat(embeddings, axis=1)
    code = ad.relu(ad.add(ad.matmul(cat, p[net.prefix + "proj.W"]), p[net.prefix + "proj.b"]))
    logits = ad.add(ad.matmul(code, p[net.prefix + "out.W"]), p[net.prefix + "out.b"])
    return NetOutput(logits, embeddings, code)


def output_frames(spec, T):
    return -(-T // spec.subsample_rate)


def orthonormality_deviation(B):
    """``||B B^T - beta I||_F`` with the scale-adaptive beta used by the update."""
    P = B @ B.T
    tr = np.trace(P)
    if tr == 0:
        return 0.0
    beta = np.trace(P @ P.T) / tr
    return float(np.linalg.norm(P - beta * np.eye(P.shape[0])))


def semi_orthogonal_step(B, alpha=0.25):
    """One step of ``B <- B - (alpha / beta) (B B^T - beta I) B``.

    ``beta = tr(P P^T) / tr(P)`` with ``P = B B^T`` lets B keep its overall
    scale; dividing the step by beta makes the contraction rate independent
    of that scale.  Rows of B must not outnumber its columns.
    """
    B = np.asarray(B, dtype=np.float64)
    if not np.all(np.isfinite(B)):
        raise FloatingPointError("semi_orthogonal_step: non-finite factor")
    if B.shape[0] > B.shape[1]:
        raise ValueError(f"factor must have rows <= cols, got {B.shape}")
    P = B @ B.T
    tr = np.trace(P)
    if tr == 0:
        log.warning("semi_orthogonal_step: zero factor is a degenerate fixed point")
        return B.copy()
    beta = np.trace(P @ P.T) / tr
    return B - (alpha / beta) * (P - beta * np.eye(P.shape[0])) @ B


def constrain(net):
    """Apply one semi-orthogonal step to every bottleneck factor in place."""
    for name in net.bottleneck_names():
        net.params[name] = semi_orthogonal_step(net.params[name].T).T


MAGIC = b"HKCKPT\x00"
CHECKPOINT_VERSION = 1


def save_checkpoint(path, params, spec_dict, meta=None):
    """Write named float64 tensors plus a header carrying the spec hash.

    Layout: MAGIC, uint32 version, uint32 header length, UTF-8 JSON header,
    then each tensor's little-endian float64 data in header order.
    """
    names = sorted(params)
    entries = []
    offset = 0
    for name in names:
        arr = np.ascontiguousarray(params[name], dtype="<f8")
        entries.append({"name": name, "shape": list(arr.shape), "offset": offset})
        offset += arr.nbytes
    header = {"spec": spec_dict, "spec_hash": spec_hash(spec_dict), "tensors": entries, "meta": meta or {}}
    blob = json.dumps(header, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<II", CHECKPOINT_VERSION, len(blob)))
        f.write(blob)
        for name in names:
            f.write(np.ascontiguousarray(params[name], dtype="<f8").tobytes())


def load_checkpoint(path, expected_spec=None):
    """Read a checkpoint; refuses when ``expected_spec`` hashes differently."""
    with open(path, "rb") as f:
        data = f.read()
    if not data.startswith(MAGIC):
        raise CheckpointError(f"{path}: not a checkpoint file")
    pos = len(MAGIC)
    version, hlen = struct.unpack_from("<II", data, pos)
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    pos += 8
    header = json.loads(data[pos:pos + hlen].decode())
    pos += hlen
    if expected_spec is not None and spec_hash(expected_spec) != header["spec_hash"]:
        raise CheckpointError(
            f"{path}: spec hash {header['spec_hash']} does not match expected {spec_hash(expected_spec)}")
    params = {}
    for entry in header["tensors"]:
        n = int(np.prod(entry["shape"], dtype=np.int64))
        start = pos + entry["offset"]
        params[entry["name"]] = np.frombuffer(data, dtype="<f8", count=n, offset=start).reshape(entry["shape"]).copy()
    return params, header
