"""Two-node self-taught physical-layer link simulator.

The package trains a learned transmitter/receiver pair on each end of a
simulated link using only sample values exchanged over the channel.
"""

from .autodiff import ConfigurationError, InputError
from .channel import ChannelConfig, ChannelState, apply_channel
from .graphs import CriticNet, DecoderNet, EncoderNet, NetSizes, load_checkpoint, save_checkpoint
from .metrics import CerCurve, MetricsLog, convergence_epoch, convexity_score
from .protocol import LinkSession, Node, TrainingConfig, evaluate_cer, train_link

__version__ = "0.1.0"

__all__ = [
    "CerCurve",
    "ChannelConfig",
    "ChannelState",
    "ConfigurationError",
    "CriticNet",
    "DecoderNet",
    "EncoderNet",
    "InputError",
    "LinkSession",
    "MetricsLog",
    "NetSizes",
    "Node",
    "TrainingConfig",
    "apply_channel",
    "convergence_epoch",
    "convexity_score",
    "evaluate_cer",
    "load_checkpoint",
    "save_checkpoint",
    "train_link",
]
