"""
Retraining around a jammer
==========================

A converged link is hit by a continuous tone twice as strong as the
signal. Its class-error rate collapses. Training simply continues on the
jammed medium and the nodes learn waveforms and decoders that work around
the tone.
"""

# %%
import os
from pathlib import Path

from learnphy.config import ExperimentConfig
from learnphy.experiments import cmd_jammer_retrain

OUT = Path(os.environ.get("LEARNPHY_DEMO_OUT", "demo_output")) / "jammer"
cfg = ExperimentConfig.preset("rf_flat").with_overrides(
    [
        "link.seeds=[0]",
        "training.max_epochs=150",
        "experiment.jammer_freq=0.1",
        "experiment.jammer_power=2.0",
        "experiment.retrain_epochs=120",
        "experiment.trials=5000",
    ]
)
art = cmd_jammer_retrain(cfg, OUT)

# %%
r = art.results["per_seed"][0]
print(f"CER clean {r['cer_clean']:.4f} -> jammed {r['cer_jammed']:.4f} -> after retraining {r['cer_after_retrain']:.4f}")
print(f"epochs after jammer onset until 90% success held: {r['recovery_epochs']}")
