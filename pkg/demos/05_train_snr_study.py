"""
Which SNR should training use?
==============================

Training at very high SNR gives clean labels but teaches the decoder
nothing about noise; training very low gives noisy labels. This study
trains across a grid of train SNRs and evaluates every result at a fixed
test SNR. A reduced grid and budget keep the run short. The acceptance
suite runs the full grid with three seeds.
"""

# %%
import os
from pathlib import Path

from learnphy.config import ExperimentConfig
from learnphy.experiments import cmd_train_snr_study

OUT = Path(os.environ.get("LEARNPHY_DEMO_OUT", "demo_output")) / "train_snr_study"
cfg = ExperimentConfig.preset("rf_flat").with_overrides(
    [
        'experiment.kind="train_snr_sweep"',
        "experiment.train_snr_grid=[0, 5, 10, 20]",
        "experiment.study_test_snr_db=[10]",
        "experiment.trials=5000",
        "link.seeds=[0]",
    ]
)
art = cmd_train_snr_study(cfg, OUT, workers=os.cpu_count() or 1)

# %%
print("median epochs to 90% by train SNR:", art.results["median_convergence_epoch"])
for test, rep in art.results["convexity"].items():
    print(f"test {test} dB:", rep["median_cer_by_train_snr"], "interior minimum:", rep["interior_minimum"])
print("figures in", OUT)
