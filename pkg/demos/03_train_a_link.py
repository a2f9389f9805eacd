"""
Training one link from scratch
==============================

Two nodes start with random encoders, decoders and critics. Each epoch
they send every class once in a shared pseudorandom order, learn to decode
it and bounce their decisions back so the sender can score its own
waveforms. Nothing but sample values crosses the channel.
"""

# %%
import numpy as np

from learnphy import ChannelConfig, TrainingConfig, evaluate_cer, train_link
from learnphy.metrics import MetricsLog, convergence_epoch

ch = ChannelConfig(kind="awgn_flat", seed=0)
cfg = TrainingConfig(channel_fwd=ch, channel_rev=ch, train_snr_db=10.0, max_epochs=150, shared_seed=0)
print(f"{cfg.samples_per_epoch} samples per epoch, {cfg.bits_per_sample:g} bit per sample")


def progress(epoch, passes):
    if epoch % 25 == 0:
        print(f"epoch {epoch:3d}  " + "  ".join(f"{p.direction} {p.class_success:5.1%}" for p in passes))


result = train_link(cfg, seed=0, on_epoch=progress)
log = MetricsLog(result.trace)
print("first epoch holding 90% for 5 epochs:", convergence_epoch(log, 0.9))

# %%
# Freeze the nets and measure the class-error rate at a few test SNRs.
for snr in (0.0, 5.0, 10.0, 15.0):
    res = evaluate_cer(result.node_a, result.node_b, ch.with_snr(snr), ch.with_snr(snr), 10_000)
    print(f"test {snr:4.1f} dB  " + "  ".join(f"{d} CER {r.cer:.4f} +/- {r.stderr:.4f}" for d, r in res.items()))

# %%
# The learned constellation: all 256 waveforms, eight complex samples each.
w = result.node_a.encoder.encode(np.arange(256))
d = np.sqrt((np.abs(w[:, None] - w[None]) ** 2).sum(-1))[np.triu_indices(256, 1)]
print(f"peak |component| {np.max(np.abs(np.r_[w.real.ravel(), w.imag.ravel()])):.3f}, min pairwise distance {d.min():.3f}")
