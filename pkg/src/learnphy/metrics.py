"""Per-epoch logs, CER curves and the summaries computed from them."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .autodiff import InputError

LOG_FIELDS = (
    "epoch",
    "direction",
    "class_success",
    "loss_rx",
    "loss_tx",
    "loss_crit",
    "critic_accuracy",
    "measured_snr_db",
)
CER_FIELDS = ("test_snr_db", "cer", "trials", "stderr")

SUSTAIN_EPOCHS = 5


@dataclass
class MetricsLog:
    rows: list[dict] = field(default_factory=list)

    def __post_init__(self):
        last: dict[str, int] = {}
        for r in self.rows:
            for k in ("class_success", "critic_accuracy"):
                if not 0.0 <= r[k] <= 1.0:
                    raise InputError(f"{k}={r[k]} outside [0, 1]")
            d = r["direction"]
            if d in last and r["epoch"] <= last[d]:
                raise InputError(f"epochs not strictly increasing for direction {d}")
            last[d] = r["epoch"]

    def __len__(self) -> int:
        return len(self.rows)

    def directions(self) -> list[str]:
        return sorted({r["direction"] for r in self.rows})

    def epochs(self) -> list[int]:
        return sorted({r["epoch"] for r in self.rows})

    def success_trace(self, direction: str | None = None) -> tuple[np.ndarray, np.ndarray]:
        """``(epochs, success)``; without a direction, the mean over directions."""
        rows = self.rows if direction is None else [r for r in self.rows if r["direction"] == direction]
        by_epoch: dict[int, list[float]] = {}
        for r in rows:
            by_epoch.setdefault(r["epoch"], []).append(r["class_success"])
        ep = np.array(sorted(by_epoch), dtype=int)
        return ep, np.array([np.mean(by_epoch[e]) for e in ep])

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=LOG_FIELDS)
            w.writeheader()
            for r in self.rows:
                w.writerow({k: r[k] for k in LOG_FIELDS})

    @classmethod
    def read_csv(cls, path: str | Path) -> "MetricsLog":
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if tuple(reader.fieldnames or ()) != LOG_FIELDS:
                raise InputError(f"{path}: unexpected header {reader.fieldnames}")
            rows = []
            for r in reader:
                row = {k: float(v) for k, v in r.items() if k != "direction"}
                row["epoch"] = int(row["epoch"])
                row["direction"] = r["direction"]
                rows.append(row)
        return cls(rows)


@dataclass(frozen=True)
class CerPoint:
    test_snr_db: float
    cer: float
    trials: int

    @property
    def stderr(self) -> float:
        return cer_stderr(self.cer, self.trials)


@dataclass
class CerCurve:
    points: list[CerPoint] = field(default_factory=list)

    def __post_init__(self):
        self.points.sort(key=lambda p: p.test_snr_db)
        for p in self.points:
            if not 0.0 <= p.cer <= 1.0:
                raise InputError(f"cer {p.cer} outside [0, 1]")

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(CER_FIELDS)
            for p in self.points:
                w.writerow([p.test_snr_db, p.cer, p.trials, p.stderr])

    @classmethod
    def read_csv(cls, path: str | Path) -> "CerCurve":
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if tuple(reader.fieldnames or ()) != CER_FIELDS:
                raise InputError(f"{path}: unexpected header {reader.fieldnames}")
            return cls([CerPoint(float(r["test_snr_db"]), float(r["cer"]), int(r["trials"])) for r in reader])


def cer_stderr(cer: float, trials: int) -> float:
    if trials <= 0:
        raise InputError("trials must be positive")
    return math.sqrt(cer * (1.0 - cer) / trials)


def convergence_epoch(
    log: MetricsLog | Sequence[float],
    threshold: float,
    sustain: int = SUSTAIN_EPOCHS,
    direction: str | None = None,
) -> int | None:
    """First epoch at which success reaches ``threshold`` and holds for ``sustain`` epochs.

    Accepts a MetricsLog (success averaged over directions unless one is
    named) or a bare per-epoch success sequence indexed from 0.
    """
    if not 0.0 < threshold <= 1.0:
        raise InputError("threshold must lie in (0, 1]")
    if isinstance(log, MetricsLog):
        if not len(log):
            raise InputError("empty metrics log")
        epochs, succ = log.success_trace(direction)
    else:
        succ = np.asarray(log, dtype=float)
        if succ.size == 0:
            raise InputError("empty success trace")
        epochs = np.arange(succ.size)
    ok = succ >= threshold
    n = ok.size
    run = 0
    # scan backwards so run[i] is the length of the all-ok streak starting at i
    streak = np.zeros(n, dtype=int)
    for i in range(n - 1, -1, -1):
        run = run + 1 if ok[i] else 0
        streak[i] = run
    for i in range(n):
        if streak[i] >= sustain:
            return int(epochs[i])
    return None


@dataclass(frozen=True)
class ConvexityReport:
    interior_minimum: bool
    argmin: float
    min_cer: float


def convexity_score(points: Iterable[tuple[float, float]]) -> ConvexityReport:
    """Does CER versus train SNR bottom out strictly inside the grid?

    Ties for the minimum resolve to the lowest train SNR.
    """
    pts = sorted((float(s), float(c)) for s, c in points)
    if len(pts) < 3:
        raise InputError("need at least 3 points")
    cers = np.array([c for _, c in pts])
    i = int(np.argmin(cers))
    return ConvexityReport(0 < i < len(pts) - 1, pts[i][0], float(cers[i]))


@dataclass
class SeedAggregate:
    epochs: np.ndarray
    median: np.ndarray
    q25: np.ndarray
    q75: np.ndarray

    @property
    def iqr(self) -> np.ndarray:
        return self.q75 - self.q25


def aggregate_seeds(runs: Sequence[MetricsLog], direction: str | None = None) -> SeedAggregate:
    """Per-epoch median and interquartile range of class success across runs."""
    if not runs:
        raise InputError("need at least one run")
    traces = [r.success_trace(direction) for r in runs]
    ep0 = traces[0][0]
    for ep, _ in traces[1:]:
        if not np.array_equal(ep, ep0):
            raise InputError("runs have misaligned epochs")
    stack = np.vstack([s for _, s in traces])
    q25, med, q75 = np.percentile(stack, [25, 50, 75], axis=0)
    return SeedAggregate(ep0, med, q25, q75)


def epoch_variance(log: MetricsLog | Sequence[float], direction: str | None = None) -> float:
    """Variance of epoch-to-epoch changes in success; a jaggedness measure."""
    succ = log.success_trace(direction)[1] if isinstance(log, MetricsLog) else np.asarray(log, dtype=float)
    if succ.size < 2:
        return 0.0
    return float(np.var(np.diff(succ)))
