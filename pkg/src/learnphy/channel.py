"""Complex-baseband channel models: ideal, flat AWGN, FIR-selective, jammed.

A channel call receives one contiguous block of samples. The linear
transform runs first, then the optional tone jammer, then AWGN scaled to the
configured SNR against the mean power of the transformed block. Jammer power
in a config is a ratio to that same block power.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .autodiff import InputError

KINDS = ("ideal", "awgn_flat", "fir_selective", "narrowband", "jammed")

PLC_TAPS = (0.8, 0.0, 0.4 + 0.2j, 0.0, -0.2)

# reported when a block has no error at all
SNR_SATURATED_DB = float("inf")


@dataclass
class ChannelConfig:
    kind: str = "awgn_flat"
    # None defers to the experiment: train SNR while training, test grid when evaluating
    snr_db: float | None = None
    fir_taps: tuple[complex, ...] = ()
    jammer_freq: float = 0.0
    jammer_power: float = 0.0
    phase_rotation: float = 0.0
    sample_rate: float = 1e6
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InputError(f"unknown channel kind {self.kind!r}; expected one of {KINDS}")
        if self.snr_db is not None and np.isnan(self.snr_db):
            raise InputError("snr_db must be a number")
        self.fir_taps = tuple(complex(t) for t in self.fir_taps)
        if self.kind == "fir_selective":
            if len(self.fir_taps) < 2 or not any(t != 0 for t in self.fir_taps):
                raise InputError("fir_selective needs at least two taps, one of them nonzero")
        if not -0.5 <= self.jammer_freq < 0.5:
            raise InputError("jammer frequency must lie in [-0.5, 0.5) cycles/sample")
        if self.jammer_power < 0:
            raise InputError("jammer power must be >= 0")

    def with_snr(self, snr_db: float) -> "ChannelConfig":
        return replace(self, snr_db=snr_db)

    def resolved(self, default_snr_db: float) -> "ChannelConfig":
        return self if self.snr_db is not None else self.with_snr(default_snr_db)


@dataclass
class ChannelState:
    """Generator plus the memory that must persist between blocks."""

    rng: np.random.Generator
    delay_line: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=complex))
    jammer_phase: int = 0
    last_signal: np.ndarray | None = None

    @classmethod
    def from_config(cls, cfg: ChannelConfig, stream: int = 0) -> "ChannelState":
        return cls(rng=np.random.default_rng([cfg.seed, stream]))

    def to_dict(self) -> dict:
        return {
            "rng": self.rng.bit_generator.state,
            "delay_line": [[z.real, z.imag] for z in self.delay_line],
            "jammer_phase": self.jammer_phase,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ChannelState":
        rng = np.random.default_rng()
        rng.bit_generator.state = d["rng"]
        line = np.array([complex(re, im) for re, im in d["delay_line"]], dtype=complex)
        return cls(rng=rng, delay_line=line, jammer_phase=int(d["jammer_phase"]))


def _as_block(block) -> np.ndarray:
    b = np.asarray(block, dtype=complex).reshape(-1)
    if b.size == 0:
        raise InputError("channel block must be nonempty")
    return b


def awgn(block, snr_db: float, signal_power: float, rng: np.random.Generator) -> np.ndarray:
    """Add circular complex Gaussian noise of power ``signal_power / 10^(snr/10)``."""
    block = _as_block(block)
    if not signal_power > 0:
        raise InputError("signal power must be positive")
    if snr_db == float("inf"):
        return block.copy()
    n2 = signal_power / 10.0 ** (snr_db / 10.0)
    noise = rng.standard_normal((block.size, 2)) @ np.array([1.0, 1j])
    return block + np.sqrt(n2 / 2.0) * noise


def fir_filter(block, taps: Sequence[complex], state: ChannelState) -> np.ndarray:
    """Streaming linear convolution; the last ``len(taps)-1`` inputs carry over."""
    block = _as_block(block)
    taps = np.asarray(taps, dtype=complex)
    mem = len(taps) - 1
    if state.delay_line.size != mem:
        state.delay_line = np.zeros(mem, dtype=complex)
    ext = np.concatenate([state.delay_line, block])
    n = block.size
    # fixed tap-by-tap summation order keeps split and unsplit streams bit-identical
    out = np.zeros(n, dtype=complex)
    for k, t in enumerate(taps):
        out += t * ext[mem - k : mem - k + n]
    if mem:
        state.delay_line = ext[-mem:].copy()
    return out


def tone_jammer(block, freq: float, power: float, state: ChannelState) -> np.ndarray:
    """Add ``sqrt(power) * exp(j 2 pi freq n)``; ``n`` keeps counting across blocks."""
    block = _as_block(block)
    if power < 0:
        raise InputError("jammer power must be >= 0")
    n = state.jammer_phase + np.arange(block.size)
    state.jammer_phase += block.size
    if power == 0:
        return block.copy()
    return block + np.sqrt(power) * np.exp(2j * np.pi * freq * n)


def measure_snr(clean, noisy) -> float:
    """``10 log10(sum |clean|^2 / sum |noisy - clean|^2)``; +inf when identical."""
    clean = np.asarray(clean, dtype=complex).reshape(-1)
    noisy = np.asarray(noisy, dtype=complex).reshape(-1)
    if clean.size != noisy.size:
        raise InputError("measure_snr needs equal-length blocks")
    ps = float(np.sum(np.abs(clean) ** 2))
    if ps == 0:
        raise InputError("clean block has zero power")
    pe = float(np.sum(np.abs(noisy - clean) ** 2))
    if pe == 0:
        return SNR_SATURATED_DB
    return 10.0 * np.log10(ps / pe)


def apply_channel(cfg: ChannelConfig, state: ChannelState, block) -> np.ndarray:
    """Pass one block through the configured channel.

    ``state.last_signal`` keeps the post-transform, pre-noise block so the
    caller can measure receive SNR.
    """
    x = _as_block(block)
    if cfg.snr_db is None:
        raise InputError("channel has no SNR; resolve it against the experiment first")
    if cfg.kind == "fir_selective":
        x = fir_filter(x, cfg.fir_taps, state)
    else:
        x = x.copy()
    if cfg.phase_rotation:
        x = x * np.exp(1j * cfg.phase_rotation)
    state.last_signal = x
    if cfg.kind == "ideal":
        return x.copy()
    y = x
    power = float(np.mean(np.abs(x) ** 2))
    if cfg.kind == "jammed" or cfg.jammer_power > 0:
        # jammer_power is a jammer-to-signal ratio against this block
        y = tone_jammer(y, cfg.jammer_freq, cfg.jammer_power * power, state)
    if power > 0:
        y = awgn(y, cfg.snr_db, power, state.rng)
    return y
