"""Experiment configuration: a sectioned TOML document, validated up front.

Unknown sections and keys are rejected with the line they appear on, so a
typo can never silently fall back to a default.
"""

from __future__ import annotations

import copy
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any

import tomlkit
from tomlkit.exceptions import ParseError

from .autodiff import ConfigurationError, InputError
from .channel import ChannelConfig
from .graphs import NetSizes
from .protocol import TrainingConfig

EXPERIMENT_KINDS = ("convergence", "cer_sweep", "train_snr_convergence", "train_snr_sweep", "jammer_retrain")

CHANNEL_DEFAULTS: dict[str, Any] = {
    "kind": "awgn_flat",
    "snr_db": None,
    "fir_taps": [],
    "jammer_freq": 0.0,
    "jammer_power": 0.0,
    "phase_rotation": 0.0,
    "sample_rate": 1e6,
    "seed": 0,
}

DEFAULTS: dict[str, dict[str, Any]] = {
    "link": {
        "num_classes": 256,
        "samples_per_class": 8,
        "seeds": [0],
    },
    "training": {
        "train_snr_db": 10.0,
        "max_epochs": 200,
        "lr_encoder": 1e-4,
        "lr_decoder": 3e-3,
        "lr_critic": 1e-2,
        "early_stop": False,
        "early_stop_threshold": 0.99,
        "early_stop_patience": 10,
        "critic_sees_label": False,
    },
    "channel_fwd": dict(CHANNEL_DEFAULTS),
    "channel_rev": dict(CHANNEL_DEFAULTS),
    "experiment": {
        "kind": "convergence",
        "convergence_threshold": 0.9,
        "test_snr_db": [-5.0, 0.0, 5.0, 10.0, 15.0, 20.0],
        "trials": 10_000,
        "train_snr_grid": [0.0, 5.0, 10.0, 15.0, 20.0, 30.0],
        "study_test_snr_db": [10.0],
        "checkpoint": "",
        "train_inline": True,
        "jammer_freq": 0.1,
        "jammer_power": 2.0,
        "retrain_epochs": 200,
        "recovery_threshold": 0.9,
    },
    "output": {
        "directory": "runs/default",
        "plots": True,
        "transcript": False,
    },
}

# keys whose TOML value may legitimately be absent (None)
NULLABLE = {("channel_fwd", "snr_db"), ("channel_rev", "snr_db")}


def _locate(text: str, section: str, key: str | None = None) -> int | None:
    """1-based line of ``[section]`` or of ``key`` inside it, if present."""
    current = None
    for n, line in enumerate(text.splitlines(), 1):
        stripped = line.split("#", 1)[0].strip()
        m = re.fullmatch(r"\[\s*([A-Za-z0-9_.-]+)\s*\]", stripped)
        if m:
            current = m.group(1)
            if key is None and current == section:
                return n
            continue
        if key is not None and current == section and re.match(rf"{re.escape(key)}\s*=", stripped):
            return n
    return None


def _where(path: str, text: str, section: str, key: str | None = None) -> str:
    line = _locate(text, section, key)
    return f"{path}:{line}" if line else path


@dataclass
class ExperimentConfig:
    """Fully resolved settings; ``raw`` mirrors the TOML document."""

    raw: dict[str, dict[str, Any]]
    source: str = "<defaults>"
    overrides: list[str] = field(default_factory=list)

    # -- construction ------------------------------------------------------

    @classmethod
    def defaults(cls) -> "ExperimentConfig":
        return cls(copy.deepcopy(DEFAULTS))

    @classmethod
    def from_text(cls, text: str, source: str = "<string>") -> "ExperimentConfig":
        try:
            doc = tomlkit.parse(text).unwrap()
        except ParseError as exc:
            raise ConfigurationError(f"{source}:{exc.line}: {exc}") from exc
        raw = copy.deepcopy(DEFAULTS)
        for section, body in doc.items():
            if section not in DEFAULTS:
                raise ConfigurationError(f"{_where(source, text, section)}: unknown section [{section}]")
            if not isinstance(body, dict):
                raise ConfigurationError(f"{_where(source, text, section)}: [{section}] must be a table")
            for key, value in body.items():
                if key not in DEFAULTS[section]:
                    raise ConfigurationError(
                        f"{_where(source, text, section, key)}: unknown key {key!r} in [{section}]"
                    )
                raw[section][key] = value
        cfg = cls(raw, source)
        try:
            cfg.validate()
        except ConfigurationError as exc:
            # point at the offending line when the message names section.key
            m = re.match(r"(\w+)\.(\w+):", str(exc))
            if m:
                raise ConfigurationError(f"{_where(source, text, m.group(1), m.group(2))}: {exc}") from None
            raise
        return cfg

    @classmethod
    def load(cls, path: str | Path) -> "ExperimentConfig":
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigurationError(f"cannot read config {path}: {exc.strerror}") from exc
        return cls.from_text(text, str(path))

    @classmethod
    def preset(cls, name: str) -> "ExperimentConfig":
        ref = resources.files("learnphy.presets") / f"{name}.toml"
        if not ref.is_file():
            raise ConfigurationError(f"no preset named {name!r}; choose from {', '.join(preset_names())}")
        return cls.from_text(ref.read_text(), f"preset:{name}")

    # -- overrides ---------------------------------------------------------

    def with_overrides(self, items: list[str]) -> "ExperimentConfig":
        """Apply ``section.key=value`` strings; values are parsed as TOML."""
        raw = copy.deepcopy(self.raw)
        for item in items:
            if "=" not in item:
                raise ConfigurationError(f"override {item!r} is not of the form section.key=value")
            lhs, rhs = item.split("=", 1)
            parts = lhs.strip().split(".")
            if len(parts) != 2:
                raise ConfigurationError(f"override {item!r}: key must be section.key")
            section, key = parts
            if section not in DEFAULTS or key not in DEFAULTS[section]:
                raise ConfigurationError(f"override {item!r}: unknown key {lhs.strip()!r}")
            try:
                value = tomlkit.parse(f"v = {rhs.strip()}").unwrap()["v"]
            except ParseError:
                value = rhs.strip()  # bare words read as strings
            raw[section][key] = value
        cfg = ExperimentConfig(raw, self.source, self.overrides + list(items))
        cfg.validate()
        return cfg

    # -- validation --------------------------------------------------------

    def validate(self) -> None:
        """Check every field; raise ConfigurationError naming ``section.key``."""
        for section, keys in DEFAULTS.items():
            for key, default in keys.items():
                value = self.raw[section][key]
                if value is None and (section, key) in NULLABLE:
                    continue
                _check_type(section, key, value, default)
        link, exp = self.raw["link"], self.raw["experiment"]
        if not link["seeds"]:
            raise ConfigurationError("link.seeds: need at least one seed")
        if exp["kind"] not in EXPERIMENT_KINDS:
            raise ConfigurationError(f"experiment.kind: {exp['kind']!r} is not one of {', '.join(EXPERIMENT_KINDS)}")
        if exp["trials"] <= 0:
            raise ConfigurationError("experiment.trials: must be positive")
        if not 0 < exp["convergence_threshold"] <= 1:
            raise ConfigurationError("experiment.convergence_threshold: must lie in (0, 1]")
        if exp["kind"] in ("train_snr_convergence", "train_snr_sweep") and len(exp["train_snr_grid"]) < 3:
            raise ConfigurationError("experiment.train_snr_grid: the study needs at least 3 train SNRs")
        if not exp["test_snr_db"]:
            raise ConfigurationError("experiment.test_snr_db: need at least one test SNR")
        if exp["retrain_epochs"] < 0:
            raise ConfigurationError("experiment.retrain_epochs: must be >= 0")
        try:
            self.training(0)
            self.channel("channel_fwd")
            self.channel("channel_rev")
        except InputError as exc:
            raise ConfigurationError(str(exc)) from exc

    # -- typed views -------------------------------------------------------

    @property
    def seeds(self) -> list[int]:
        return list(self.raw["link"]["seeds"])

    @property
    def experiment(self) -> dict[str, Any]:
        return self.raw["experiment"]

    @property
    def output(self) -> dict[str, Any]:
        return self.raw["output"]

    def channel(self, section: str, seed_offset: int = 0) -> ChannelConfig:
        c = self.raw[section]
        try:
            taps = tuple(complex(re_, im) for re_, im in c["fir_taps"])
        except (TypeError, ValueError) as exc:
            raise ConfigurationError(f"{section}.fir_taps: each tap must be a [re, im] pair") from exc
        try:
            return ChannelConfig(
                kind=c["kind"],
                snr_db=None if c["snr_db"] is None else float(c["snr_db"]),
                fir_taps=taps,
                jammer_freq=float(c["jammer_freq"]),
                jammer_power=float(c["jammer_power"]),
                phase_rotation=float(c["phase_rotation"]),
                sample_rate=float(c["sample_rate"]),
                seed=int(c["seed"]) + seed_offset,
            )
        except InputError as exc:
            raise ConfigurationError(f"{section}.{_field_hint(str(exc))}: {exc}") from exc

    def training(self, seed: int, train_snr_db: float | None = None) -> TrainingConfig:
        """Protocol settings for one run; the run seed also offsets channel seeds."""
        link, t = self.raw["link"], self.raw["training"]
        sizes = NetSizes(
            num_classes=link["num_classes"],
            samples=link["samples_per_class"],
            critic_sees_label=t["critic_sees_label"],
        )
        try:
            return TrainingConfig(
                num_classes=link["num_classes"],
                samples_per_class=link["samples_per_class"],
                train_snr_db=float(t["train_snr_db"] if train_snr_db is None else train_snr_db),
                max_epochs=t["max_epochs"],
                shared_seed=seed,
                lr_encoder=float(t["lr_encoder"]),
                lr_decoder=float(t["lr_decoder"]),
                lr_critic=float(t["lr_critic"]),
                early_stop=t["early_stop"],
                early_stop_threshold=float(t["early_stop_threshold"]),
                early_stop_patience=t["early_stop_patience"],
                channel_fwd=self.channel("channel_fwd", seed),
                channel_rev=self.channel("channel_rev", seed),
                sizes=sizes,
            )
        except InputError as exc:
            raise ConfigurationError(f"training: {exc}") from exc

    # -- persistence -------------------------------------------------------

    def to_toml(self) -> str:
        doc = tomlkit.document()
        doc.add(tomlkit.comment(f"resolved from {self.source}"))
        for o in self.overrides:
            doc.add(tomlkit.comment(f"override {o}"))
        for section in DEFAULTS:
            table = tomlkit.table()
            for key, value in self.raw[section].items():
                if value is None:
                    table.add(tomlkit.comment(f"{key} unset: inherits training.train_snr_db"))
                else:
                    table.add(key, value)
            doc.add(section, table)
        return tomlkit.dumps(doc)

    def replace(self, section: str, **values) -> "ExperimentConfig":
        raw = copy.deepcopy(self.raw)
        raw[section].update(values)
        cfg = ExperimentConfig(raw, self.source, self.overrides)
        cfg.validate()
        return cfg


def _field_hint(message: str) -> str:
    """Which channel field a ChannelConfig validation message is about."""
    for needle, name in (("kind", "kind"), ("taps", "fir_taps"), ("frequency", "jammer_freq"), ("power", "jammer_power")):
        if needle in message:
            return name
    return "snr_db"


def _check_type(section: str, key: str, value: Any, default: Any) -> None:
    where = f"{section}.{key}"
    if isinstance(default, bool):
        ok = isinstance(value, bool)
        want = "true or false"
    elif isinstance(default, int):
        ok = isinstance(value, int) and not isinstance(value, bool)
        want = "an integer"
    elif isinstance(default, float) or default is None:
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
        want = "a number"
    elif isinstance(default, str):
        ok = isinstance(value, str)
        want = "a string"
    elif isinstance(default, list):
        ok = isinstance(value, list)
        want = "a list"
    else:  # pragma: no cover
        ok, want = True, ""
    if not ok:
        raise ConfigurationError(f"{where}: expected {want}, got {value!r}")
    if key == "seeds" and not all(isinstance(s, int) and not isinstance(s, bool) for s in value):
        raise ConfigurationError(f"{where}: seeds must be integers")
    if key in ("test_snr_db", "train_snr_grid", "study_test_snr_db") and not all(
        isinstance(v, (int, float)) and not isinstance(v, bool) for v in value
    ):
        raise ConfigurationError(f"{where}: grid entries must be numbers")


def preset_names() -> list[str]:
    return sorted(p.name[:-5] for p in resources.files("learnphy.presets").iterdir() if p.name.endswith(".toml"))
