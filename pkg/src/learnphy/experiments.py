"""Experiment runners behind the command line.

Every runner writes into one run directory:

    config.toml            resolved configuration (re-runnable as is)
    manifest.json          package version, seeds, files and headline results
    convergence_seed<S>.csv, checkpoint_seed<S>.json, ...

Seeds and sweep points are independent jobs. With ``workers > 1`` they run
in separate processes; results do not depend on the worker count.
"""

from __future__ import annotations

import json
import logging
import platform
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Iterable

import numpy as np

from . import __version__
from . import autodiff as ad
from .autodiff import ConfigurationError
from .config import ExperimentConfig
from .graphs import CheckpointError, interleave, load_checkpoint, save_checkpoint
from .metrics import CerCurve, CerPoint, MetricsLog, convergence_epoch, convexity_score
from .protocol import (
    DivergenceError,
    LinkSession,
    TrainingConfig,
    evaluate_cer,
    pass_row,
    train_link,
)

log = logging.getLogger(__name__)

CHECKPOINT_EVERY = 25


@dataclass
class RunArtifact:
    directory: Path
    manifest: dict[str, Any] = field(default_factory=dict)

    def path(self, name: str) -> Path:
        return self.directory / name

    @property
    def results(self) -> dict[str, Any]:
        return self.manifest.setdefault("results", {})

    def add_file(self, name: str) -> None:
        files = self.manifest.setdefault("files", [])
        if name not in files:
            files.append(name)
            files.sort()

    def write_manifest(self) -> None:
        self.path("manifest.json").write_text(json.dumps(self.manifest, indent=2, sort_keys=True) + "\n")


def _open_run(cfg: ExperimentConfig, command: str, out: str | Path | None, workers: int) -> RunArtifact:
    directory = Path(out if out is not None else cfg.output["directory"])
    try:
        directory.mkdir(parents=True, exist_ok=True)
        (directory / "config.toml").write_text(cfg.to_toml())
    except OSError as exc:
        raise OSError(f"cannot prepare run directory {directory}: {exc.strerror}") from exc
    art = RunArtifact(directory)
    art.manifest.update(
        {
            "command": command,
            "experiment_kind": cfg.experiment["kind"],
            "package_version": __version__,
            "numpy_version": np.__version__,
            "python_version": platform.python_version(),
            "seeds": cfg.seeds,
            "lock_step": workers <= 1,
            "status": "running",
        }
    )
    art.add_file("config.toml")
    art.write_manifest()
    return art


def _map(fn: Callable, jobs: list, workers: int) -> list:
    if workers <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
        return list(pool.map(fn, jobs))


def _mean_success(rows: list[dict]) -> float:
    return float(np.mean([r["class_success"] for r in rows])) if rows else float("nan")


def _air_time(tcfg: TrainingConfig, epochs: int | None, sample_rate: float) -> float | None:
    """Seconds of channel time for ``epochs`` epochs in one direction."""
    return None if epochs is None else (epochs + 1) * tcfg.samples_per_epoch / sample_rate


# --------------------------------------------------------------------------
# one training job
# --------------------------------------------------------------------------


@dataclass
class TrainJob:
    cfg: ExperimentConfig
    seed: int
    directory: Path
    tag: str  # file suffix, e.g. "seed3" or "train10db_seed3"
    train_snr_db: float | None = None
    transcript: bool = False
    resume: bool = False


@dataclass
class TrainOutcome:
    tag: str
    seed: int
    train_snr_db: float
    rows: list[dict]
    checkpoint: str
    diverged: str | None = None


def _run_train_job(job: TrainJob) -> TrainOutcome:
    tcfg = job.cfg.training(job.seed, job.train_snr_db)
    csv_name, ck_name = f"convergence_{job.tag}.csv", f"checkpoint_{job.tag}.json"
    csv_path, ck_path = job.directory / csv_name, job.directory / ck_name
    rows: list[dict] = []
    session = None
    if job.resume and ck_path.exists():
        session = LinkSession.resume(ck_path, tcfg, tap=job.transcript)
        if csv_path.exists():
            rows = [r for r in MetricsLog.read_csv(csv_path).rows if r["epoch"] < session.epoch]
        log.info("%s: resuming at epoch %d", job.tag, session.epoch)
    session = session or LinkSession.create(tcfg, job.seed, tap=job.transcript)
    remaining = max(0, tcfg.max_epochs - session.epoch)

    def on_epoch(ep, passes):
        rows.extend(pass_row(ep, p) for p in passes)
        if (ep + 1) % CHECKPOINT_EVERY == 0:
            session.save(ck_path, {"seed": job.seed, "tag": job.tag})
            MetricsLog(rows).write_csv(csv_path)

    diverged = None
    try:
        train_link(replace(tcfg, max_epochs=remaining), session=session, on_epoch=on_epoch)
        session.save(ck_path, {"seed": job.seed, "tag": job.tag})
    except DivergenceError as exc:
        diverged = str(exc)
    MetricsLog(rows).write_csv(csv_path)
    if job.transcript and session.tap is not None:
        session.tap.write_jsonl(job.directory / f"transcript_{job.tag}.jsonl")
    return TrainOutcome(job.tag, job.seed, tcfg.train_snr_db, rows, ck_name, diverged)


def _record_outcomes(art: RunArtifact, outcomes: Iterable[TrainOutcome], transcript: bool) -> None:
    for o in outcomes:
        art.add_file(f"convergence_{o.tag}.csv")
        if o.diverged is None:
            art.add_file(o.checkpoint)
        if transcript:
            art.add_file(f"transcript_{o.tag}.jsonl")


def _raise_divergence(art: RunArtifact, outcomes: list[TrainOutcome]) -> None:
    bad = [o for o in outcomes if o.diverged]
    if bad:
        art.manifest["status"] = "diverged"
        art.results["divergence"] = {o.tag: o.diverged for o in bad}
        art.write_manifest()
        raise DivergenceError("; ".join(f"{o.tag}: {o.diverged}" for o in bad))


def _session_for(cfg: ExperimentConfig, seed: int, ck: Path, snr: float | None = None) -> LinkSession:
    return LinkSession.resume(ck, cfg.training(seed, snr))


# --------------------------------------------------------------------------
# commands
# --------------------------------------------------------------------------


def cmd_train(cfg: ExperimentConfig, out=None, workers: int = 1, resume: bool = False) -> RunArtifact:
    """Train one link per seed; write convergence CSVs and checkpoints."""
    art = _open_run(cfg, "train", out, workers)
    transcript = bool(cfg.output["transcript"])
    jobs = [TrainJob(cfg, s, art.directory, f"seed{s}", transcript=transcript, resume=resume) for s in cfg.seeds]
    outcomes = _map(_run_train_job, jobs, workers)
    _record_outcomes(art, outcomes, transcript)
    _raise_divergence(art, outcomes)

    thr = cfg.experiment["convergence_threshold"]
    tcfg = cfg.training(cfg.seeds[0])
    rate = tcfg.channel_fwd.sample_rate
    per_seed = {}
    for o in outcomes:
        conv = convergence_epoch(MetricsLog(o.rows), thr) if o.rows else None
        last = [r for r in o.rows if r["epoch"] == o.rows[-1]["epoch"]] if o.rows else []
        per_seed[str(o.seed)] = {
            "convergence_epoch": conv,
            "final_success": _mean_success(last) if last else None,
            "epochs_run": len({r["epoch"] for r in o.rows}),
            "air_time_to_convergence_s": _air_time(tcfg, conv, rate),
        }
    convs = [v["convergence_epoch"] for v in per_seed.values()]
    art.results.update(
        {
            "threshold": thr,
            "per_seed": per_seed,
            "median_convergence_epoch": _median_or_none(convs),
            "samples_per_epoch": tcfg.samples_per_epoch,
            "bits_per_sample": tcfg.bits_per_sample,
        }
    )
    _finish(art, cfg)
    return art


def _median_or_none(values: list[int | None]) -> float | None:
    """Median that treats ``None`` (never converged) as larger than any epoch."""
    if not values:
        return None
    ranked = sorted(values, key=lambda v: (v is None, v if v is not None else 0))
    n = len(ranked)
    lo, hi = ranked[(n - 1) // 2], ranked[n // 2]
    if lo is None or hi is None:
        return None
    return (lo + hi) / 2


def _cer_points(session_a, session_b, cfg: ExperimentConfig, seed: int, grid: Iterable[float], trials: int) -> list[CerPoint]:
    """CER per test SNR, pooling both link directions."""
    points = []
    fwd, rev = cfg.channel("channel_fwd", seed), cfg.channel("channel_rev", seed)
    for snr in grid:
        res = evaluate_cer(session_a, session_b, fwd.with_snr(float(snr)), rev.with_snr(float(snr)), trials, seed=seed)
        errors = sum(r.errors for r in res.values())
        total = sum(r.trials for r in res.values())
        points.append(CerPoint(float(snr), errors / total, total))
    return points


@dataclass
class CerJob:
    cfg: ExperimentConfig
    seed: int
    checkpoint: Path
    grid: list[float]
    trials: int
    train_snr_db: float | None = None


def _run_cer_job(job: CerJob) -> list[CerPoint]:
    session = _session_for(job.cfg, job.seed, job.checkpoint, job.train_snr_db)
    return _cer_points(session.node_a, session.node_b, job.cfg, job.seed, job.grid, job.trials)


def cmd_cer_sweep(cfg: ExperimentConfig, out=None, workers: int = 1) -> RunArtifact:
    """Train (or load), freeze, and evaluate CER over the test-SNR grid."""
    exp = cfg.experiment
    art = _open_run(cfg, "cer-sweep", out, workers)
    grid, trials = [float(v) for v in exp["test_snr_db"]], int(exp["trials"])
    final: dict[int, float] = {}
    if exp["train_inline"]:
        jobs = [TrainJob(cfg, s, art.directory, f"seed{s}") for s in cfg.seeds]
        outcomes = _map(_run_train_job, jobs, workers)
        _record_outcomes(art, outcomes, False)
        _raise_divergence(art, outcomes)
        checkpoints = {o.seed: art.path(o.checkpoint) for o in outcomes}
        for o in outcomes:
            if o.rows:
                last = o.rows[-1]["epoch"]
                final[o.seed] = _mean_success([r for r in o.rows if r["epoch"] == last])
    else:
        ck = Path(exp["checkpoint"])
        if not exp["checkpoint"] or not ck.is_file():
            raise FileNotFoundError(f"experiment.checkpoint {exp['checkpoint']!r} not found and train_inline is false")
        checkpoints = {s: ck for s in cfg.seeds}

    curves = _map(_run_cer_job, [CerJob(cfg, s, checkpoints[s], grid, trials) for s in cfg.seeds], workers)
    per_seed = {}
    pooled_err = np.zeros(len(grid))
    pooled_n = np.zeros(len(grid), dtype=int)
    for s, pts in zip(cfg.seeds, curves):
        curve = CerCurve(list(pts))
        curve.write_csv(art.path(f"cer_seed{s}.csv"))
        art.add_file(f"cer_seed{s}.csv")
        per_seed[str(s)] = cer_checks(curve, cfg.training(s).train_snr_db, final.get(s))
        for i, p in enumerate(curve.points):
            pooled_err[i] += round(p.cer * p.trials)
            pooled_n[i] += p.trials
    pooled = CerCurve([CerPoint(g, float(e / n), int(n)) for g, e, n in zip(sorted(grid), pooled_err, pooled_n)])
    pooled.write_csv(art.path("cer.csv"))
    art.add_file("cer.csv")
    art.results.update({"trials_per_direction": trials, "per_seed": per_seed, "pooled": cer_checks(pooled, cfg.training(cfg.seeds[0]).train_snr_db, None)})
    _finish(art, cfg)
    return art


def cer_checks(curve: CerCurve, train_snr_db: float, final_success: float | None) -> dict[str, Any]:
    """Shape checks on a CER curve: monotone within 2 stderr, and consistency at the train SNR."""
    pts = curve.points
    violations = [
        (a.test_snr_db, b.test_snr_db)
        for a, b in zip(pts, pts[1:])
        if b.cer > a.cer + 2 * np.hypot(a.stderr, b.stderr)
    ]
    out: dict[str, Any] = {
        "cer": {f"{p.test_snr_db:g}": p.cer for p in pts},
        "monotone_within_2se": not violations,
        "violations": violations,
    }
    at_train = [p for p in pts if p.test_snr_db == train_snr_db]
    if at_train and final_success is not None:
        out["train_point_gap"] = abs(at_train[0].cer - (1.0 - final_success))
    return out


@dataclass
class StudyJob:
    cfg: ExperimentConfig
    seed: int
    train_snr_db: float
    directory: Path
    test_grid: list[float]
    trials: int


def _run_study_job(job: StudyJob) -> tuple[TrainOutcome, list[CerPoint]]:
    tag = f"train{job.train_snr_db:g}db_seed{job.seed}"
    outcome = _run_train_job(TrainJob(job.cfg, job.seed, job.directory, tag, train_snr_db=job.train_snr_db))
    if outcome.diverged or not job.test_grid:
        return outcome, []
    session = _session_for(job.cfg, job.seed, job.directory / outcome.checkpoint, job.train_snr_db)
    return outcome, _cer_points(session.node_a, session.node_b, job.cfg, job.seed, job.test_grid, job.trials)


def cmd_train_snr_study(cfg: ExperimentConfig, out=None, workers: int = 1) -> RunArtifact:
    """Train at every grid SNR for every seed; report convergence and CER cross-sections."""
    exp = cfg.experiment
    grid = [float(v) for v in exp["train_snr_grid"]]
    if len(grid) < 3:
        raise ConfigurationError("experiment.train_snr_grid: the study needs at least 3 train SNRs")
    art = _open_run(cfg, "train-snr-study", out, workers)
    study_dir = art.path("study")
    study_dir.mkdir(exist_ok=True)
    test_grid = [float(v) for v in exp["study_test_snr_db"]] if exp["kind"] != "train_snr_convergence" else []
    jobs = [StudyJob(cfg, s, snr, study_dir, test_grid, int(exp["trials"])) for snr in grid for s in cfg.seeds]
    results = _map(_run_study_job, jobs, workers)
    outcomes = [o for o, _ in results]
    for o in outcomes:
        art.add_file(f"study/convergence_{o.tag}.csv")
        if o.diverged is None:
            art.add_file(f"study/{o.checkpoint}")
    _raise_divergence(art, outcomes)

    thr = exp["convergence_threshold"]
    trace_lines = ["train_snr_db,seed,epoch,class_success"]
    conv_lines = ["train_snr_db,seed,convergence_epoch,final_success"]
    cer_lines = ["train_snr_db,test_snr_db,seed,cer,trials,stderr"]
    conv_by_snr: dict[float, list] = {g: [] for g in grid}
    cer_by: dict[tuple[float, float], list[float]] = {}
    for (o, pts), job in zip(results, jobs):
        mlog = MetricsLog(o.rows)
        epochs, succ = mlog.success_trace() if o.rows else (np.array([], int), np.array([]))
        trace_lines += [f"{job.train_snr_db:g},{o.seed},{e},{float(v)!r}" for e, v in zip(epochs, succ)]
        conv = convergence_epoch(mlog, thr) if o.rows else None
        conv_by_snr[job.train_snr_db].append(conv)
        final = float(succ[-1]) if len(succ) else float("nan")
        conv_lines.append(f"{job.train_snr_db:g},{o.seed},{'' if conv is None else conv},{final!r}")
        for p in pts:
            cer_lines.append(f"{job.train_snr_db:g},{p.test_snr_db:g},{o.seed},{float(p.cer)!r},{p.trials},{float(p.stderr)!r}")
            cer_by.setdefault((p.test_snr_db, job.train_snr_db), []).append(p.cer)
    for name, lines in (("study_traces.csv", trace_lines), ("study_convergence.csv", conv_lines)):
        art.path(name).write_text("\n".join(lines) + "\n")
        art.add_file(name)
    if test_grid:
        art.path("study_cer.csv").write_text("\n".join(cer_lines) + "\n")
        art.add_file("study_cer.csv")

    convexity = {}
    for t in test_grid:
        pts = [(g, float(np.median(cer_by[(t, g)]))) for g in grid]
        rep = convexity_score(pts)
        convexity[f"{t:g}"] = {
            "median_cer_by_train_snr": {f"{g:g}": c for g, c in pts},
            "interior_minimum": rep.interior_minimum,
            "argmin_train_snr_db": rep.argmin,
        }
    art.results.update(
        {
            "threshold": thr,
            "median_convergence_epoch": {f"{g:g}": _median_or_none(v) for g, v in conv_by_snr.items()},
            "convexity": convexity,
        }
    )
    _finish(art, cfg)
    return art


@dataclass
class JamJob:
    cfg: ExperimentConfig
    seed: int
    directory: Path
    checkpoint: Path | None


def _run_jam_job(job: JamJob) -> dict[str, Any]:
    cfg, exp, seed = job.cfg, job.cfg.experiment, job.seed
    tag = f"seed{seed}"
    if job.checkpoint is None:
        o = _run_train_job(TrainJob(cfg, seed, job.directory, tag))
        if o.diverged:
            raise DivergenceError(o.diverged)
        ck = job.directory / o.checkpoint
    else:
        ck = job.checkpoint
    tcfg = cfg.training(seed)
    session = LinkSession.resume(ck, tcfg)
    trials, snr = int(exp["trials"]), tcfg.train_snr_db
    # the tone rides on top of the existing medium, so FIR media keep their taps
    jam = dict(jammer_freq=float(exp["jammer_freq"]), jammer_power=float(exp["jammer_power"]))

    def cer(a, b, jammed: bool) -> float:
        fwd, rev = (session.links[k].cfg for k in ("A->B", "B->A"))
        if jammed:
            fwd, rev = replace(fwd, **jam), replace(rev, **jam)
        else:
            fwd, rev = cfg.channel("channel_fwd", seed).resolved(snr), cfg.channel("channel_rev", seed).resolved(snr)
        res = evaluate_cer(a, b, fwd, rev, trials, seed=seed)
        return sum(r.errors for r in res.values()) / sum(r.trials for r in res.values())

    clean = cer(session.node_a, session.node_b, False)
    jammed = cer(session.node_a, session.node_b, True)
    for link in session.links.values():
        link.cfg = replace(link.cfg, **jam)
    start = session.epoch
    retrain = replace(tcfg, max_epochs=int(exp["retrain_epochs"]))
    rows: list[dict] = []
    try:
        train_link(retrain, session=session, on_epoch=lambda ep, ps: rows.extend(pass_row(ep, p) for p in ps))
    finally:
        MetricsLog(rows).write_csv(job.directory / f"jammed_{tag}.csv")
    session.save(job.directory / f"checkpoint_jammed_{tag}.json", {"seed": seed, "jammed": jam})
    rec = convergence_epoch(MetricsLog(rows), exp["recovery_threshold"]) if rows else None
    after = cer(session.node_a, session.node_b, True)
    return {
        "seed": seed,
        "cer_clean": clean,
        "cer_jammed": jammed,
        "cer_after_retrain": after,
        "jam_onset_epoch": start,
        "recovery_epochs": None if rec is None else rec - start,
        "retrain_epochs": int(exp["retrain_epochs"]),
    }


def cmd_jammer_retrain(cfg: ExperimentConfig, out=None, workers: int = 1) -> RunArtifact:
    """Switch a tone jammer on after convergence; log the CER hit and the retraining time."""
    exp = cfg.experiment
    art = _open_run(cfg, "jammer-retrain", out, workers)
    ck = None
    if not exp["train_inline"]:
        ck = Path(exp["checkpoint"])
        if not exp["checkpoint"] or not ck.is_file():
            raise FileNotFoundError(f"experiment.checkpoint {exp['checkpoint']!r} not found and train_inline is false")
    try:
        results = _map(_run_jam_job, [JamJob(cfg, s, art.directory, ck) for s in cfg.seeds], workers)
    except DivergenceError as exc:
        art.manifest["status"] = "diverged"
        art.results["divergence"] = str(exc)
        art.write_manifest()
        raise
    lines = ["seed,cer_clean,cer_jammed,cer_after_retrain,jam_onset_epoch,recovery_epochs"]
    for r in results:
        rec = "" if r["recovery_epochs"] is None else r["recovery_epochs"]
        cers = ",".join(repr(float(r[k])) for k in ("cer_clean", "cer_jammed", "cer_after_retrain"))
        lines.append(f"{r['seed']},{cers},{r['jam_onset_epoch']},{rec}")
        for name in (f"jammed_seed{r['seed']}.csv", f"checkpoint_jammed_seed{r['seed']}.json"):
            art.add_file(name)
        if ck is None:
            art.add_file(f"convergence_seed{r['seed']}.csv")
            art.add_file(f"checkpoint_seed{r['seed']}.json")
    art.path("jammer.csv").write_text("\n".join(lines) + "\n")
    art.add_file("jammer.csv")
    art.results.update({"jammer": {"freq": exp["jammer_freq"], "power_ratio": exp["jammer_power"]}, "per_seed": results})
    _finish(art, cfg)
    return art


def _finish(art: RunArtifact, cfg: ExperimentConfig) -> None:
    if cfg.output["plots"]:
        from .plotting import render_run

        for name in render_run(art.directory):
            art.add_file(name)
    art.manifest["status"] = "ok"
    art.write_manifest()


# --------------------------------------------------------------------------
# checkpoint verification
# --------------------------------------------------------------------------


def _probe_outputs(nets: dict, sizes) -> dict[str, np.ndarray]:
    rng = np.random.default_rng(0x9B0BE)
    received = rng.normal(size=(32, sizes.samples)) + 1j * rng.normal(size=(32, sizes.samples))
    classes = np.arange(min(32, sizes.num_classes))
    out = {}
    for name, net in sorted(nets.items()):
        if net.kind == "encoder":
            out[name] = net.forward(classes).data
        elif net.kind == "decoder":
            out[name] = net.logits(received).data
        else:
            labels = classes[: len(received)] if sizes.critic_sees_label else None
            out[name] = net.forward(ad.constant(interleave(received)), labels).data
    return out


def cmd_checkpoint_roundtrip(path: str | Path) -> dict[str, Any]:
    """Load, probe, save, reload, probe again; outputs must match bit for bit."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"checkpoint {path} does not exist")
    nets, sizes, meta = load_checkpoint(path)
    if not nets:
        raise CheckpointError(f"{path}: no nets in checkpoint")
    before = _probe_outputs(nets, sizes)
    with tempfile.TemporaryDirectory() as tmp:
        again = Path(tmp) / "roundtrip.json"
        save_checkpoint(again, nets, sizes, meta)
        nets2, _, _ = load_checkpoint(again)
    after = _probe_outputs(nets2, sizes)
    mismatched = [k for k in before if not np.array_equal(before[k], after[k])]
    params_equal = all(np.array_equal(nets[k].params.flat(), nets2[k].params.flat()) for k in nets)
    return {
        "checkpoint": str(path),
        "nets": sorted(nets),
        "probe_batch": 32,
        "bitwise_equal": not mismatched and params_equal,
        "mismatched": mismatched,
    }


COMMANDS = {
    "convergence": cmd_train,
    "cer_sweep": cmd_cer_sweep,
    "train_snr_convergence": cmd_train_snr_study,
    "train_snr_sweep": cmd_train_snr_study,
    "jammer_retrain": cmd_jammer_retrain,
}

__all__ = [
    "COMMANDS",
    "RunArtifact",
    "cer_checks",
    "cmd_cer_sweep",
    "cmd_checkpoint_roundtrip",
    "cmd_jammer_retrain",
    "cmd_train",
    "cmd_train_snr_study",
]
