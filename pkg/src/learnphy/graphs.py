"""Encoder, decoder and critic networks plus their checkpoint format.

Complex samples are carried as interleaved reals ``(re0, im0, re1, im1, ...)``
everywhere a network touches them.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import AdamState, InputError, ParamSet, Tensor

CHECKPOINT_VERSION = 1


# --------------------------------------------------------------------------
# messages and waveforms
# --------------------------------------------------------------------------


def bits_per_class(num_classes: int) -> int:
    return max(1, math.ceil(math.log2(num_classes)))


def map_bits_to_class(bits: Sequence[int] | str, num_classes: int = 256) -> int:
    """Big-endian bit string to class id."""
    if isinstance(bits, str):
        bits = [int(b) for b in bits]
    nbits = bits_per_class(num_classes)
    if len(bits) != nbits:
        raise InputError(f"expected {nbits} bits for {num_classes} classes, got {len(bits)}")
    value = 0
    for b in bits:
        if b not in (0, 1):
            raise InputError("bits must be 0 or 1")
        value = (value << 1) | b
    if value >= num_classes:
        raise InputError(f"bit pattern maps to {value}, outside [0, {num_classes})")
    return value


def map_class_to_bits(class_id: int, num_classes: int = 256) -> list[int]:
    if not 0 <= class_id < num_classes:
        raise InputError(f"class id {class_id} outside [0, {num_classes})")
    nbits = bits_per_class(num_classes)
    return [(class_id >> (nbits - 1 - i)) & 1 for i in range(nbits)]


def interleave(samples: np.ndarray) -> np.ndarray:
    """Complex ``(..., S)`` to real ``(..., 2S)`` as re, im, re, im, ..."""
    samples = np.asarray(samples)
    out = np.empty(samples.shape[:-1] + (2 * samples.shape[-1],), dtype=np.float64)
    out[..., 0::2] = samples.real
    out[..., 1::2] = samples.imag
    return out


def deinterleave(features: np.ndarray) -> np.ndarray:
    """Real ``(..., 2S)`` back to complex ``(..., S)``."""
    features = np.asarray(features, dtype=np.float64)
    return features[..., 0::2] + 1j * features[..., 1::2]


# --------------------------------------------------------------------------
# networks
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class NetSizes:
    """Layer widths. Defaults are the smallest stacks that train reliably at N=256."""

    num_classes: int = 256
    samples: int = 8
    embed: int = 32
    enc_hidden: int = 64
    dec_hidden1: int = 64
    dec_hidden2: int = 32
    conv_filters: int = 8
    conv_kernel: int = 3
    pool: int = 2
    critic_hidden1: int = 64
    critic_hidden2: int = 32
    critic_sees_label: bool = False

    @property
    def pooled_length(self) -> int:
        return (self.dec_hidden2 - self.conv_kernel + 1) // self.pool


class Net:
    """Common plumbing: a named ParamSet and its optimizer state."""

    kind = "net"

    def __init__(self, sizes: NetSizes, params: ParamSet, learning_rate: float = 1e-3):
        self.sizes = sizes
        self.params = params
        self.opt = AdamState(learning_rate=learning_rate)

    def step(self) -> None:
        ad.adam_step(self.params, self.opt)

    def zero_grad(self) -> None:
        self.params.zero_grad()

    def copy(self):
        other = type(self)(self.sizes, self.params.copy(), self.opt.learning_rate)
        other.opt = AdamState(
            learning_rate=self.opt.learning_rate,
            beta1=self.opt.beta1,
            beta2=self.opt.beta2,
            epsilon=self.opt.epsilon,
            step_count=self.opt.step_count,
            m={k: v.copy() for k, v in self.opt.m.items()},
            v={k: v.copy() for k, v in self.opt.v.items()},
        )
        return other


class EncoderNet(Net):
    """Class id -> embedding -> tanh dense -> tanh dense (2S reals)."""

    kind = "encoder"

    @classmethod
    def init(cls, sizes: NetSizes, rng: np.random.Generator, learning_rate: float = 1e-3) -> "EncoderNet":
        n, e, h, o = sizes.num_classes, sizes.embed, sizes.enc_hidden, 2 * sizes.samples
        p = ParamSet()
        # a one-hot row selects one input per output, so the fan-in is 1
        p["embed.table"] = ad.init_uniform(rng, (n, e), 1)
        p["fc1.weight"] = ad.init_uniform(rng, (e, h), e)
        p["fc1.bias"] = ad.init_uniform(rng, (h,), e)
        p["fc2.weight"] = ad.init_uniform(rng, (h, o), h)
        p["fc2.bias"] = ad.init_uniform(rng, (o,), h)
        return cls(sizes, p, learning_rate)

    def forward(self, classes: Sequence[int] | np.ndarray) -> Tensor:
        p = self.params
        x = ad.embedding(p["embed.table"], classes)
        x = ad.tanh(ad.dense(x, p["fc1.weight"], p["fc1.bias"]))
        return ad.tanh(ad.dense(x, p["fc2.weight"], p["fc2.bias"]))

    def encode(self, classes: Sequence[int] | np.ndarray | int) -> np.ndarray:
        """Complex waveforms, one row of S samples per class."""
        scalar = np.ndim(classes) == 0
        out = deinterleave(self.forward(np.atleast_1d(classes)).data)
        return out[0] if scalar else out


class DecoderNet(Net):
    """2S reals -> two tanh dense layers -> conv1d -> maxpool -> dense logits."""

    kind = "decoder"

    @classmethod
    def init(cls, sizes: NetSizes, rng: np.random.Generator, learning_rate: float = 1e-3) -> "DecoderNet":
        i, d1, d2 = 2 * sizes.samples, sizes.dec_hidden1, sizes.dec_hidden2
        f, k = sizes.conv_filters, sizes.conv_kernel
        flat = f * sizes.pooled_length
        p = ParamSet()
        p["fc1.weight"] = ad.init_uniform(rng, (i, d1), i)
        p["fc1.bias"] = ad.init_uniform(rng, (d1,), i)
        p["fc2.weight"] = ad.init_uniform(rng, (d1, d2), d1)
        p["fc2.bias"] = ad.init_uniform(rng, (d2,), d1)
        p["conv.kernel"] = ad.init_uniform(rng, (f, 1, k), k)
        p["conv.bias"] = ad.init_uniform(rng, (f,), k)
        p["out.weight"] = ad.init_uniform(rng, (flat, sizes.num_classes), flat)
        p["out.bias"] = ad.init_uniform(rng, (sizes.num_classes,), flat)
        return cls(sizes, p, learning_rate)

    def forward(self, features: np.ndarray) -> Tensor:
        p, s = self.params, self.sizes
        x = ad.constant(features)
        x = ad.tanh(ad.dense(x, p["fc1.weight"], p["fc1.bias"]))
        x = ad.tanh(ad.dense(x, p["fc2.weight"], p["fc2.bias"]))
        B = x.shape[0]
        x = ad.reshape(x, (B, 1, s.dec_hidden2))
        x = ad.conv1d(x, p["conv.kernel"], p["conv.bias"])
        x = ad.maxpool1d(x, s.pool)
        x = ad.reshape(x, (B, -1))
        return ad.dense(x, p["out.weight"], p["out.bias"])

    def logits(self, received: np.ndarray) -> Tensor:
        received = np.atleast_2d(received)
        if received.shape[-1] != self.sizes.samples:
            raise InputError(f"decoder expects {self.sizes.samples} samples, got {received.shape[-1]}")
        return self.forward(interleave(received))

    def decode(self, received: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Return ``(probabilities, logits)`` for a batch of received waveforms."""
        z = self.logits(received).data
        return ad.softmax(z), z

    def decide(self, received: np.ndarray) -> np.ndarray:
        return self.logits(received).data.argmax(axis=1)


class CriticNet(Net):
    """2S reals -> tanh dense -> tanh dense -> one logit; score is its sigmoid."""

    kind = "critic"

    @classmethod
    def init(cls, sizes: NetSizes, rng: np.random.Generator, learning_rate: float = 1e-3) -> "CriticNet":
        i, h1, h2 = 2 * sizes.samples, sizes.critic_hidden1, sizes.critic_hidden2
        p = ParamSet()
        p["fc1.weight"] = ad.init_uniform(rng, (i, h1), i)
        p["fc1.bias"] = ad.init_uniform(rng, (h1,), i)
        if sizes.critic_sees_label:
            # one-hot label columns of fc1, stored as a lookup table
            p["fc1.label"] = ad.init_uniform(rng, (sizes.num_classes, h1), i + 1)
        p["fc2.weight"] = ad.init_uniform(rng, (h1, h2), h1)
        p["fc2.bias"] = ad.init_uniform(rng, (h2,), h1)
        p["out.weight"] = ad.init_uniform(rng, (h2, 1), h2)
        p["out.bias"] = ad.init_uniform(rng, (1,), h2)
        return cls(sizes, p, learning_rate)

    def forward(self, features: Tensor, classes: np.ndarray | None = None) -> Tensor:
        """Logit column for interleaved waveform features (a graph input).

        ``classes`` is required only when the critic is built to see labels.
        """
        p = self.params
        x = ad.dense(features, p["fc1.weight"], p["fc1.bias"])
        if self.sizes.critic_sees_label:
            if classes is None:
                raise InputError("this critic needs the class labels of its inputs")
            x = ad.add(x, ad.embedding(p["fc1.label"], classes))
        x = ad.tanh(x)
        x = ad.tanh(ad.dense(x, p["fc2.weight"], p["fc2.bias"]))
        return ad.dense(x, p["out.weight"], p["out.bias"])

    def criticize(self, transmitted: np.ndarray, classes: np.ndarray | None = None) -> np.ndarray:
        """Scores in (0, 1) for a batch of pre-channel waveforms."""
        z = self.forward(ad.constant(interleave(np.atleast_2d(transmitted))), classes).data[:, 0]
        return ad.sigmoid(z)


NET_TYPES = {cls.kind: cls for cls in (EncoderNet, DecoderNet, CriticNet)}


# --------------------------------------------------------------------------
# checkpoints
# --------------------------------------------------------------------------


class CheckpointError(ValueError):
    """A checkpoint file is unreadable, incomplete or from an unknown version."""


def net_to_dict(net: Net) -> dict:
    opt = net.opt
    return {
        "kind": net.kind,
        "learning_rate": opt.learning_rate,
        "layers": [
            {"name": k, "shape": list(t.shape), "values": t.data.reshape(-1).tolist()}
            for k, t in net.params.items()
        ],
        "optimizer": {
            "step_count": opt.step_count,
            "beta1": opt.beta1,
            "beta2": opt.beta2,
            "epsilon": opt.epsilon,
            "m": {k: v.reshape(-1).tolist() for k, v in opt.m.items()},
            "v": {k: v.reshape(-1).tolist() for k, v in opt.v.items()},
        },
    }


def net_from_dict(d: dict, sizes: NetSizes, label: str = "") -> Net:
    try:
        cls = NET_TYPES[d["kind"]]
    except KeyError as exc:
        raise CheckpointError(f"{label}: unknown or missing net kind") from exc
    rng = np.random.default_rng(0)
    template = cls.init(sizes, rng, d.get("learning_rate", 1e-3))
    layers = {layer.get("name"): layer for layer in d.get("layers", [])}
    params = ParamSet()
    for name, t in template.params.items():
        if name not in layers:
            raise CheckpointError(f"{label}: missing layer {name!r}")
        layer = layers[name]
        shape = tuple(layer.get("shape", ()))
        values = layer.get("values", [])
        if shape != t.shape:
            raise CheckpointError(f"{label}: layer {name!r} has shape {shape}, expected {t.shape}")
        if len(values) != t.data.size:
            raise CheckpointError(
                f"{label}: layer {name!r} has {len(values)} values, expected {t.data.size}"
            )
        params[name] = ad.parameter(np.asarray(values, dtype=np.float64).reshape(shape))
    net = cls(sizes, params, d.get("learning_rate", 1e-3))
    o = d.get("optimizer")
    if o:
        net.opt = AdamState(
            learning_rate=net.opt.learning_rate,
            beta1=o["beta1"],
            beta2=o["beta2"],
            epsilon=o["epsilon"],
            step_count=o["step_count"],
            m={k: np.asarray(v, dtype=np.float64).reshape(params[k].shape) for k, v in o["m"].items()},
            v={k: np.asarray(v, dtype=np.float64).reshape(params[k].shape) for k, v in o["v"].items()},
        )
    return net


def save_checkpoint(path: str | Path, nets: dict[str, Net], sizes: NetSizes, meta: dict | None = None) -> None:
    """Write a versioned JSON manifest; floats use shortest round-trip repr."""
    doc = {
        "version": CHECKPOINT_VERSION,
        "sizes": sizes.__dict__,
        "meta": meta or {},
        "nets": {name: net_to_dict(net) for name, net in nets.items()},
    }
    Path(path).write_text(json.dumps(doc, indent=1))


def load_checkpoint(path: str | Path) -> tuple[dict[str, Net], NetSizes, dict]:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path}: not valid JSON ({exc.msg} at line {exc.lineno})") from exc
    if not isinstance(doc, dict) or "version" not in doc:
        raise CheckpointError(f"{path}: missing version field")
    if doc["version"] != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {doc['version']!r}")
    try:
        sizes = NetSizes(**doc["sizes"])
    except (KeyError, TypeError) as exc:
        raise CheckpointError(f"{path}: bad or missing sizes block") from exc
    nets = {name: net_from_dict(d, sizes, f"{path}:{name}") for name, d in doc.get("nets", {}).items()}
    return nets, sizes, doc.get("meta", {})
