"""Static SVG figures for a run directory.

Output is byte-stable: fixed hash salt, text kept as text, no timestamp.
"""

from __future__ import annotations

import csv
from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .metrics import CerCurve, MetricsLog, aggregate_seeds  # noqa: E402

RC = {
    "svg.hashsalt": "learnphy",
    "svg.fonttype": "none",
    "figure.figsize": (6.0, 4.0),
    "axes.grid": True,
    "grid.alpha": 0.3,
}


def _save(fig, path: Path) -> None:
    fig.savefig(path, format="svg", metadata={"Date": None, "Creator": None})
    plt.close(fig)


def _read_rows(path: Path) -> list[dict[str, str]]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def plot_convergence(logs: dict[str, MetricsLog], path: Path, title: str = "Class success per epoch") -> None:
    with plt.rc_context(RC):
        fig, ax = plt.subplots()
        for name, mlog in logs.items():
            ep, s = mlog.success_trace()
            ax.plot(ep, 100 * s, lw=0.8, alpha=0.5, label=name)
        nonempty = [m for m in logs.values() if len(m)]
        if len(nonempty) > 1:
            try:
                agg = aggregate_seeds(nonempty)
                ax.plot(agg.epochs, 100 * agg.median, color="k", lw=2, label="median")
                ax.fill_between(agg.epochs, 100 * agg.q25, 100 * agg.q75, color="k", alpha=0.1)
            except ValueError:
                pass  # runs stopped at different epochs; show them individually
        ax.set_xlabel("epoch")
        ax.set_ylabel("class success (%)")
        ax.set_ylim(0, 100)
        ax.set_title(title)
        ax.legend(fontsize=7, loc="lower right")
        _save(fig, path)


def plot_cer(curves: dict[str, CerCurve], path: Path, title: str = "Class-error rate versus test SNR") -> None:
    with plt.rc_context(RC):
        fig, ax = plt.subplots()
        for name, curve in curves.items():
            snr = np.array([p.test_snr_db for p in curve.points])
            floor = np.array([0.5 / p.trials for p in curve.points])
            cer = np.maximum([p.cer for p in curve.points], floor)
            err = np.array([p.stderr for p in curve.points])
            ax.errorbar(snr, cer, yerr=err, marker="o", ms=4, capsize=2, label=name)
        ax.set_yscale("log")
        ax.set_xlabel("test SNR (dB)")
        ax.set_ylabel("CER")
        ax.set_title(title)
        ax.legend(fontsize=7)
        _save(fig, path)


def plot_study_traces(path_csv: Path, path: Path) -> None:
    by: dict[float, dict[int, list[tuple[int, float]]]] = defaultdict(lambda: defaultdict(list))
    for r in _read_rows(path_csv):
        by[float(r["train_snr_db"])][int(r["seed"])].append((int(r["epoch"]), float(r["class_success"])))
    with plt.rc_context(RC):
        fig, ax = plt.subplots()
        for snr in sorted(by):
            runs = list(by[snr].values())
            n = min(len(r) for r in runs)
            stack = np.array([[v for _, v in sorted(r)[:n]] for r in runs])
            ax.plot(np.arange(n), 100 * np.median(stack, axis=0), label=f"train {snr:g} dB")
        ax.set_xlabel("epoch")
        ax.set_ylabel("median class success (%)")
        ax.set_ylim(0, 100)
        ax.set_title("Convergence by train SNR")
        ax.legend(fontsize=7, loc="lower right")
        _save(fig, path)


def plot_study_cer(path_csv: Path, path: Path) -> None:
    by: dict[float, dict[float, list[float]]] = defaultdict(lambda: defaultdict(list))
    floor = 1.0
    for r in _read_rows(path_csv):
        by[float(r["test_snr_db"])][float(r["train_snr_db"])].append(float(r["cer"]))
        floor = min(floor, 0.5 / int(r["trials"]))
    with plt.rc_context(RC):
        fig, ax = plt.subplots()
        for test in sorted(by):
            train = sorted(by[test])
            med = [max(float(np.median(by[test][t])), floor) for t in train]
            ax.plot(train, med, marker="o", label=f"test {test:g} dB")
        ax.set_yscale("log")
        ax.set_xlabel("train SNR (dB)")
        ax.set_ylabel("median CER")
        ax.set_title("CER versus train SNR")
        ax.legend(fontsize=7)
        _save(fig, path)


def render_run(directory: str | Path) -> list[str]:
    """Render every figure whose inputs exist in ``directory``; return file names."""
    d = Path(directory)
    if not d.is_dir():
        raise FileNotFoundError(f"run directory {d} does not exist")
    written = []

    conv = sorted(d.glob("convergence_seed*.csv"))
    if conv:
        plot_convergence({p.stem.split("_", 1)[1]: MetricsLog.read_csv(p) for p in conv}, d / "convergence.svg")
        written.append("convergence.svg")

    cer_files = sorted(d.glob("cer_seed*.csv"))
    if cer_files:
        plot_cer({p.stem.split("_", 1)[1]: CerCurve.read_csv(p) for p in cer_files}, d / "cer.svg")
        written.append("cer.svg")
    elif (d / "cer.csv").exists():
        plot_cer({"pooled": CerCurve.read_csv(d / "cer.csv")}, d / "cer.svg")
        written.append("cer.svg")

    if (d / "study_traces.csv").exists():
        plot_study_traces(d / "study_traces.csv", d / "train_snr_convergence.svg")
        written.append("train_snr_convergence.svg")
    if (d / "study_cer.csv").exists():
        plot_study_cer(d / "study_cer.csv", d / "train_snr_cer.svg")
        written.append("train_snr_cer.svg")

    jam = sorted(d.glob("jammed_seed*.csv"))
    if jam:
        plot_convergence(
            {p.stem.split("_", 1)[1]: MetricsLog.read_csv(p) for p in jam},
            d / "jammer_recovery.svg",
            "Class success after jammer onset",
        )
        written.append("jammer_recovery.svg")

    if not written:
        raise FileNotFoundError(f"no metrics CSVs found in {d}")
    return written
