"""Two-node self-taught training over simulated channels.

Each direction pass runs both training paths of the link:

* receiver path: the receiving node fits its decoder to the known,
  shared-seed class order of the epoch;
* echo path: the receiver re-encodes its hard decisions and sends them
  back. The transmitter's own decoder reads the echo, which labels each
  stored waveform as confirmed or failed. Those labels train the critic,
  and the critic's score trains the encoder.

Nodes never see each other's parameters, losses or gradients. Everything
that crosses between them is a ``LinkMessage`` of sample values, and every
learning step is a method on ``Node`` that takes only arrays it received.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Iterator

import numpy as np

from . import autodiff as ad
from .autodiff import InputError
from .channel import ChannelConfig, ChannelState, apply_channel, measure_snr
from .graphs import (
    CheckpointError,
    CriticNet,
    DecoderNet,
    EncoderNet,
    NetSizes,
    interleave,
    load_checkpoint,
    save_checkpoint,
)

log = logging.getLogger(__name__)


class ProtocolError(RuntimeError):
    pass


class DivergenceError(RuntimeError):
    pass


# --------------------------------------------------------------------------
# data carried by the protocol
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class EpochSchedule:
    """The known sequence: a permutation of all classes, derived per epoch."""

    epoch_index: int
    permutation: np.ndarray

    @classmethod
    def derive(cls, shared_seed: int, epoch_index: int, num_classes: int) -> "EpochSchedule":
        rng = np.random.default_rng([shared_seed, epoch_index, 0x5C4ED])
        perm = rng.permutation(num_classes)
        perm.setflags(write=False)
        return cls(epoch_index, perm)

    def same_as(self, other: "EpochSchedule") -> bool:
        return self.epoch_index == other.epoch_index and np.array_equal(self.permutation, other.permutation)


@dataclass(frozen=True)
class LinkMessage:
    direction: str  # "A->B" or "B->A"
    epoch: int
    index: int  # position in the schedule
    kind: str  # "forward" or "echo"
    payload: np.ndarray  # S complex samples as received

    def __post_init__(self):
        p = np.asarray(self.payload)
        if p.ndim != 1 or not np.iscomplexobj(p):
            raise ProtocolError("link payloads are 1-D complex sample arrays only")

    def to_record(self) -> dict:
        return {
            "direction": self.direction,
            "epoch": self.epoch,
            "index": self.index,
            "kind": self.kind,
            "samples": [[float(z.real), float(z.imag)] for z in self.payload],
        }

    @classmethod
    def from_record(cls, rec: dict) -> "LinkMessage":
        samples = np.array([complex(re, im) for re, im in rec["samples"]])
        return cls(rec["direction"], rec["epoch"], rec["index"], rec["kind"], samples)


class WireTap:
    """Ordered transcript of every message that crossed a channel."""

    def __init__(self):
        self.messages: list[LinkMessage] = []

    def record(self, direction: str, epoch: int, kind: str, received: np.ndarray) -> None:
        for i, row in enumerate(received):
            self.messages.append(LinkMessage(direction, epoch, i, kind, row.copy()))

    def __iter__(self) -> Iterator[LinkMessage]:
        return iter(self.messages)

    def __len__(self) -> int:
        return len(self.messages)

    def select(self, direction: str, epoch: int, kind: str) -> np.ndarray:
        rows = [m.payload for m in self.messages if (m.direction, m.epoch, m.kind) == (direction, epoch, kind)]
        return np.array(rows)

    def write_jsonl(self, path) -> None:
        import json

        with open(path, "w") as fh:
            for m in self.messages:
                fh.write(json.dumps(m.to_record()) + "\n")

    @classmethod
    def read_jsonl(cls, path) -> "WireTap":
        import json

        tap = cls()
        with open(path) as fh:
            tap.messages = [LinkMessage.from_record(json.loads(line)) for line in fh if line.strip()]
        return tap


def wire_tap(session: "LinkSession") -> list[LinkMessage]:
    """Transcript of everything a session sent over its channels."""
    if session.tap is None:
        raise ProtocolError("session was created without a wire tap")
    return list(session.tap)


@dataclass(frozen=True)
class EchoRecord:
    original_class: int
    stored_tx_waveform: np.ndarray
    echo_decoded_class: int

    @property
    def success(self) -> bool:
        return self.original_class == self.echo_decoded_class


@dataclass
class TrainingConfig:
    num_classes: int = 256
    samples_per_class: int = 8
    train_snr_db: float = 10.0
    max_epochs: int = 200
    shared_seed: int = 0
    lr_encoder: float = 1e-4
    lr_decoder: float = 3e-3
    lr_critic: float = 1e-2
    early_stop: bool = False
    early_stop_threshold: float = 0.99
    early_stop_patience: int = 10
    channel_fwd: ChannelConfig = field(default_factory=ChannelConfig)
    channel_rev: ChannelConfig = field(default_factory=ChannelConfig)
    sizes: NetSizes | None = None

    def __post_init__(self):
        n = self.num_classes
        if n < 2 or n & (n - 1):
            raise InputError("num_classes must be a power of two >= 2")
        if self.samples_per_class < 1:
            raise InputError("samples_per_class must be >= 1")
        if self.max_epochs < 0:
            raise InputError("max_epochs must be >= 0")
        if self.sizes is None:
            self.sizes = NetSizes(num_classes=n, samples=self.samples_per_class)
        elif (self.sizes.num_classes, self.sizes.samples) != (n, self.samples_per_class):
            raise InputError("sizes disagree with num_classes / samples_per_class")

    @property
    def bits_per_sample(self) -> float:
        return math.log2(self.num_classes) / self.samples_per_class

    @property
    def samples_per_epoch(self) -> int:
        return self.num_classes * self.samples_per_class


# --------------------------------------------------------------------------
# nodes
# --------------------------------------------------------------------------


@dataclass
class PendingTransmit:
    """What a transmitter keeps between sending a batch and hearing the echo."""

    schedule: EpochSchedule
    waveforms: np.ndarray  # pre-channel, N×S complex


@dataclass
class ReceiveResult:
    decisions: np.ndarray
    loss: float
    success: float


@dataclass
class TransmitResult:
    records: list[EchoRecord]
    loss_crit: float
    loss_tx: float
    critic_accuracy: float


class Node:
    """One endpoint: its encoder, decoder, critic and their optimizers."""

    def __init__(self, node_id: str, encoder: EncoderNet, decoder: DecoderNet, critic: CriticNet):
        self.node_id = node_id
        self.encoder = encoder
        self.decoder = decoder
        self.critic = critic

    @classmethod
    def init(cls, node_id: str, cfg: TrainingConfig, seed: int) -> "Node":
        # per-node stream so that one node's initialisation never depends on the other's
        rng = np.random.default_rng([seed, ord(node_id[0])])
        s = cfg.sizes
        return cls(
            node_id,
            EncoderNet.init(s, rng, cfg.lr_encoder),
            DecoderNet.init(s, rng, cfg.lr_decoder),
            CriticNet.init(s, rng, cfg.lr_critic),
        )

    def copy(self) -> "Node":
        return Node(self.node_id, self.encoder.copy(), self.decoder.copy(), self.critic.copy())

    def nets(self) -> dict:
        return {"encoder": self.encoder, "decoder": self.decoder, "critic": self.critic}

    def state_vector(self) -> np.ndarray:
        return np.concatenate([n.params.flat() for n in self.nets().values()])

    # -- transmitter side ------------------------------------------------

    def transmit(self, schedule: EpochSchedule) -> PendingTransmit:
        wave = self.encoder.encode(schedule.permutation)
        return PendingTransmit(schedule, wave)

    def learn_from_echo(self, pending: PendingTransmit, echo: np.ndarray, schedule: EpochSchedule) -> TransmitResult:
        """Label stored waveforms by echo agreement, then step critic, then encoder."""
        if not pending.schedule.same_as(schedule):
            raise ProtocolError(f"node {self.node_id}: echo schedule does not match transmitted schedule")
        sent = schedule.permutation
        echoed = self.decoder.decide(echo)
        labels = (echoed == sent).astype(np.float64)
        records = [EchoRecord(int(c), w, int(e)) for c, w, e in zip(sent, pending.waveforms, echoed)]

        # critic: L_CRIT on stored waveforms
        feats = ad.constant(interleave(pending.waveforms))
        crit = self.critic
        crit.zero_grad()
        label_input = sent if crit.sizes.critic_sees_label else None
        z = crit.forward(feats, label_input)
        loss_crit = ad.bce_with_logits(z, labels)
        loss_crit.backward()
        crit_acc = float(np.mean((z.data[:, 0] > 0) == (labels > 0)))
        crit.step()

        # encoder: L_TX = -log C through the (just updated) critic; critic is not stepped
        enc = self.encoder
        enc.zero_grad()
        out = enc.forward(sent)
        loss_tx = ad.bce_with_logits(crit.forward(out, label_input), np.ones(len(sent)))
        loss_tx.backward()
        crit.zero_grad()
        enc.step()
        return TransmitResult(records, float(loss_crit.data), float(loss_tx.data), crit_acc)

    # -- receiver side ---------------------------------------------------

    def receive_and_learn(self, received: np.ndarray, schedule: EpochSchedule) -> ReceiveResult:
        """Fit the decoder on the known sequence; decisions are taken before the step."""
        dec = self.decoder
        dec.zero_grad()
        z = dec.logits(received)
        labels = ad.one_hot(schedule.permutation, dec.sizes.num_classes)
        loss = ad.softmax_cross_entropy(z, labels)
        loss.backward()
        decisions = z.data.argmax(axis=1)
        dec.step()
        return ReceiveResult(decisions, float(loss.data), float(np.mean(decisions == schedule.permutation)))

    def reencode(self, decisions: np.ndarray) -> np.ndarray:
        return self.encoder.encode(decisions)


# --------------------------------------------------------------------------
# session driver
# --------------------------------------------------------------------------


@dataclass
class Link:
    cfg: ChannelConfig
    state: ChannelState

    @classmethod
    def from_config(cls, cfg: ChannelConfig, stream: int) -> "Link":
        return cls(cfg, ChannelState.from_config(cfg, stream))

    def send(self, waveforms: np.ndarray) -> tuple[np.ndarray, float]:
        """One contiguous block of N·S samples; returns rows and measured SNR."""
        shape = waveforms.shape
        y = apply_channel(self.cfg, self.state, waveforms.reshape(-1))
        snr = measure_snr(self.state.last_signal, y)
        return y.reshape(shape), snr


@dataclass
class PassResult:
    direction: str
    records: list[EchoRecord]
    loss_rx: float
    loss_crit: float
    loss_tx: float
    class_success: float
    critic_accuracy: float
    measured_snr_db: float
    samples_sent: int


@dataclass
class LinkSession:
    """Two nodes, four links (forward/reverse per direction) and an optional tap."""

    config: TrainingConfig
    node_a: Node
    node_b: Node
    links: dict[str, Link]
    tap: WireTap | None = None
    epoch: int = 0

    @classmethod
    def create(cls, cfg: TrainingConfig, seed: int | None = None, tap: bool = False) -> "LinkSession":
        seed = cfg.shared_seed if seed is None else seed
        fwd = cfg.channel_fwd.resolved(cfg.train_snr_db)
        rev = cfg.channel_rev.resolved(cfg.train_snr_db)
        links = {
            # the A->B medium carries A's data and B's echoes, and vice versa
            "A->B": Link.from_config(fwd, 1),
            "B->A": Link.from_config(rev, 2),
        }
        return cls(cfg, Node.init("A", cfg, seed), Node.init("B", cfg, seed), links, WireTap() if tap else None)

    def schedule(self, epoch: int) -> EpochSchedule:
        return EpochSchedule.derive(self.config.shared_seed, epoch, self.config.num_classes)

    def save(self, path, meta: dict | None = None) -> None:
        """Checkpoint nets, optimizer moments, channel memory and epoch counter."""
        nets = {f"{n.node_id}.{k}": net for n in (self.node_a, self.node_b) for k, net in n.nets().items()}
        m = dict(meta or {})
        m["epoch"] = self.epoch
        m["channels"] = {k: link.state.to_dict() for k, link in self.links.items()}
        save_checkpoint(path, nets, self.config.sizes, m)

    @classmethod
    def resume(cls, path, cfg: TrainingConfig, tap: bool = False) -> "LinkSession":
        nets, sizes, meta = load_checkpoint(path)
        if sizes != cfg.sizes:
            raise ProtocolError(f"{path}: checkpoint net sizes do not match the configuration")
        nodes = {}
        for nid in ("A", "B"):
            try:
                nodes[nid] = Node(nid, nets[f"{nid}.encoder"], nets[f"{nid}.decoder"], nets[f"{nid}.critic"])
            except KeyError as exc:
                raise CheckpointError(f"{path}: missing net {exc.args[0]}") from exc
        session = cls.create(cfg, tap=tap)
        session.node_a, session.node_b = nodes["A"], nodes["B"]
        session.epoch = int(meta.get("epoch", 0))
        for k, st in meta.get("channels", {}).items():
            if k in session.links:
                session.links[k].state = ChannelState.from_dict(st)
        return session


def run_direction_pass(
    tx: Node,
    rx: Node,
    fwd: Link,
    rev: Link,
    schedule: EpochSchedule,
    rx_schedule: EpochSchedule | None = None,
    tap: WireTap | None = None,
) -> PassResult:
    """Transmit every class once from ``tx`` to ``rx`` and run both training paths."""
    rx_schedule = schedule if rx_schedule is None else rx_schedule
    if not schedule.same_as(rx_schedule):
        raise ProtocolError(
            f"schedule mismatch between nodes {tx.node_id} and {rx.node_id} at epoch {schedule.epoch_index}"
        )
    direction = f"{tx.node_id}->{rx.node_id}"
    back = f"{rx.node_id}->{tx.node_id}"

    pending = tx.transmit(schedule)
    received, snr = fwd.send(pending.waveforms)
    if tap is not None:
        tap.record(direction, schedule.epoch_index, "forward", received)

    rx_result = rx.receive_and_learn(received, rx_schedule)

    echo_tx = rx.reencode(rx_result.decisions)
    echo_rx, _ = rev.send(echo_tx)
    if tap is not None:
        tap.record(back, schedule.epoch_index, "echo", echo_rx)

    tx_result = tx.learn_from_echo(pending, echo_rx, schedule)

    losses = (rx_result.loss, tx_result.loss_crit, tx_result.loss_tx)
    if not all(np.isfinite(losses)):
        raise DivergenceError(f"non-finite loss in pass {direction}, epoch {schedule.epoch_index}: {losses}")
    return PassResult(
        direction,
        tx_result.records,
        rx_result.loss,
        tx_result.loss_crit,
        tx_result.loss_tx,
        rx_result.success,
        tx_result.critic_accuracy,
        snr,
        pending.waveforms.size,
    )


def run_epoch(session: LinkSession) -> list[PassResult]:
    """A->B pass then B->A pass under one shared schedule."""
    sched = session.schedule(session.epoch)
    a, b = session.node_a, session.node_b
    # each medium is used in both directions: data on one, echo on the other
    ab, ba = session.links["A->B"], session.links["B->A"]
    out = [
        run_direction_pass(a, b, ab, ba, sched, tap=session.tap),
        run_direction_pass(b, a, ba, ab, sched, tap=session.tap),
    ]
    session.epoch += 1
    return out


@dataclass
class TrainResult:
    session: LinkSession
    trace: list[dict]

    @property
    def node_a(self) -> Node:
        return self.session.node_a

    @property
    def node_b(self) -> Node:
        return self.session.node_b


def pass_row(epoch: int, p: PassResult) -> dict:
    return {
        "epoch": epoch,
        "direction": p.direction,
        "class_success": p.class_success,
        "loss_rx": p.loss_rx,
        "loss_tx": p.loss_tx,
        "loss_crit": p.loss_crit,
        "critic_accuracy": p.critic_accuracy,
        "measured_snr_db": p.measured_snr_db,
    }


def train_link(
    cfg: TrainingConfig,
    seed: int | None = None,
    session: LinkSession | None = None,
    tap: bool = False,
    on_epoch: Callable[[int, list[PassResult]], None] | None = None,
) -> TrainResult:
    """Run up to ``cfg.max_epochs`` epochs; stop early if configured.

    Early stop triggers once both directions hold class success at or above
    the threshold for ``early_stop_patience`` consecutive epochs.
    """
    session = session or LinkSession.create(cfg, seed, tap=tap)
    trace: list[dict] = []
    streak = 0
    for _ in range(cfg.max_epochs):
        ep = session.epoch
        try:
            passes = run_epoch(session)
        except DivergenceError:
            log.error("training diverged at epoch %d", ep)
            raise
        trace.extend(pass_row(ep, p) for p in passes)
        if on_epoch is not None:
            on_epoch(ep, passes)
        if cfg.early_stop:
            if min(p.class_success for p in passes) >= cfg.early_stop_threshold:
                streak += 1
                if streak >= cfg.early_stop_patience:
                    break
            else:
                streak = 0
    return TrainResult(session, trace)


@dataclass(frozen=True)
class CerResult:
    direction: str
    errors: int
    trials: int

    @property
    def cer(self) -> float:
        return self.errors / self.trials

    @property
    def stderr(self) -> float:
        p = self.cer
        return math.sqrt(p * (1.0 - p) / self.trials)


def evaluate_cer(
    node_a: Node,
    node_b: Node,
    channel_ab: ChannelConfig,
    channel_ba: ChannelConfig,
    num_trials: int,
    seed: int = 0,
    batch: int = 4096,
) -> dict[str, CerResult]:
    """Frozen-net class-error rate per direction on uniformly random classes.

    The receiver decides by argmax alone; no schedule is consulted.
    """
    if num_trials <= 0:
        raise InputError("num_trials must be positive")
    n = node_a.decoder.sizes.num_classes
    rng = np.random.default_rng([seed, 0xCE7])
    out = {}
    for stream, (tx, rx, ch) in enumerate(((node_a, node_b, channel_ab), (node_b, node_a, channel_ba))):
        if ch.snr_db is None:
            raise InputError("evaluation channels need an explicit test SNR")
        state = ChannelState.from_config(ch, 100 + stream)
        errors = 0
        done = 0
        while done < num_trials:
            k = min(batch, num_trials - done)
            classes = rng.integers(0, n, size=k)
            wave = tx.encoder.encode(classes)
            y = apply_channel(ch, state, wave.reshape(-1)).reshape(wave.shape)
            errors += int(np.sum(rx.decoder.decide(y) != classes))
            done += k
        d = f"{tx.node_id}->{rx.node_id}"
        out[d] = CerResult(d, errors, num_trials)
    return out
