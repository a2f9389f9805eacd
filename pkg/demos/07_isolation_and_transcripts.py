"""
What crosses the channel
========================

A wire tap records every message the two nodes exchange. Each one is a
block of eight complex samples and nothing else. Replaying a node's
received samples reproduces its update exactly, whatever the other node's
parameters are.
"""

# %%
import os
from pathlib import Path

import numpy as np

from learnphy import ChannelConfig, LinkSession, TrainingConfig
from learnphy.protocol import WireTap, run_direction_pass, run_epoch

OUT = Path(os.environ.get("LEARNPHY_DEMO_OUT", "demo_output"))
OUT.mkdir(parents=True, exist_ok=True)
ch = ChannelConfig(kind="awgn_flat", seed=2)
session = LinkSession.create(TrainingConfig(channel_fwd=ch, channel_rev=ch, shared_seed=2), tap=True)
run_epoch(session)
a_before, b_before = session.node_a.copy(), session.node_b.copy()
schedule = session.schedule(session.epoch)
run_epoch(session)

# %%
tap = session.tap
tap.write_jsonl(OUT / "transcript.jsonl")
kinds = {(m.direction, m.kind) for m in tap}
print(f"{len(tap)} messages, payload shapes {sorted({m.payload.shape for m in tap})}, kinds {sorted(kinds)}")
print("first record:", (OUT / "transcript.jsonl").read_text().splitlines()[0][:120], "...")


# %%
# Replay node A's pass against a scrambled copy of node B.
class Replay:
    def __init__(self, rows):
        self.rows = rows

    def send(self, waveforms):
        return self.rows.copy(), float("nan")


def replay_a(remote):
    a = a_before.copy()
    e = schedule.epoch_index
    loaded = WireTap.read_jsonl(OUT / "transcript.jsonl")
    run_direction_pass(a, remote, Replay(loaded.select("A->B", e, "forward")), Replay(loaded.select("B->A", e, "echo")), schedule)
    return a.state_vector()


scrambled = b_before.copy()
for net in scrambled.nets().values():
    for t in net.params.values():
        t.data[:] = np.random.default_rng(9).normal(size=t.shape)
print("A's update identical with genuine and scrambled B:", np.array_equal(replay_a(b_before.copy()), replay_a(scrambled)))
