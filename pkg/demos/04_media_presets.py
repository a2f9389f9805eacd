"""
Flat versus selective media
===========================

The bundled presets describe three media. Here the flat radio preset and
the selective powerline preset are trained for two seeds each, using the
same runner the command line uses. The selective medium takes longer and
its success trace is more jagged.
"""

# %%
import os
from pathlib import Path

from learnphy.config import ExperimentConfig, preset_names
from learnphy.experiments import cmd_train
from learnphy.metrics import MetricsLog, epoch_variance

OUT = Path(os.environ.get("LEARNPHY_DEMO_OUT", "demo_output"))
print("presets:", preset_names())

# %%
summary = {}
for name in ("rf_flat", "plc_selective"):
    cfg = ExperimentConfig.preset(name).with_overrides(["link.seeds=[0, 1]"])
    art = cmd_train(cfg, OUT / name, workers=os.cpu_count() or 1)
    jag = [epoch_variance(MetricsLog.read_csv(art.path(f"convergence_seed{s}.csv"))) for s in (0, 1)]
    summary[name] = (art.results["median_convergence_epoch"], max(jag))
    print(name, "per seed:", art.results["per_seed"])

# %%
for name, (epoch, jag) in summary.items():
    print(f"{name:14s} median epochs to 90%: {epoch}   epoch-to-epoch variance: {jag:.2e}")
print("plots:", sorted(str(p) for p in OUT.glob("*/convergence.svg")))
