"""Scalar loss graphs for each trainable net, shared by the gradient tests."""

import numpy as np

from learnphy import autodiff as ad
from learnphy.graphs import CriticNet, DecoderNet, EncoderNet, NetSizes, interleave

SIZES = NetSizes()


def pool_margin(dec, received):
    """Smallest gap between the two largest entries of any max-pool window.

    Central differences are only valid where no window changes its winner
    inside the probe step, so parameter points too close to a tie are redrawn.
    """
    p, s = dec.params, dec.sizes
    x = ad.constant(interleave(received))
    x = ad.tanh(ad.dense(x, p["fc1.weight"], p["fc1.bias"]))
    x = ad.tanh(ad.dense(x, p["fc2.weight"], p["fc2.bias"]))
    x = ad.conv1d(ad.reshape(x, (x.shape[0], 1, s.dec_hidden2)), p["conv.kernel"], p["conv.bias"]).data
    n = (x.shape[-1] // s.pool) * s.pool
    win = np.sort(x[..., :n].reshape(x.shape[0], x.shape[1], -1, s.pool), axis=-1)
    return float(np.min(win[..., -1] - win[..., -2]))


def rx_case(rng, batch=8, margin=1e-4):
    """Decoder under the known-sequence cross entropy, away from pooling ties."""
    while True:
        dec = DecoderNet.init(SIZES, rng)
        received = rng.normal(size=(batch, SIZES.samples)) + 1j * rng.normal(size=(batch, SIZES.samples))
        if pool_margin(dec, received) > margin:
            break
    labels = ad.one_hot(rng.integers(0, SIZES.num_classes, batch), SIZES.num_classes)
    return dec.params, lambda: ad.softmax_cross_entropy(dec.logits(received), labels)


def crit_case(rng, batch=8):
    """Critic under the echo-label binary cross entropy."""
    crit = CriticNet.init(SIZES, rng)
    feats = rng.uniform(-1, 1, size=(batch, 2 * SIZES.samples))
    labels = rng.integers(0, 2, batch).astype(float)
    return crit.params, lambda: ad.bce_with_logits(crit.forward(ad.constant(feats)), labels)


def tx_case(rng, batch=8):
    """Encoder under -log C, routed through a fixed critic."""
    enc = EncoderNet.init(SIZES, rng)
    crit = CriticNet.init(SIZES, rng)
    classes = rng.integers(0, SIZES.num_classes, batch)
    ones = np.ones(batch)
    return enc.params, lambda: ad.bce_with_logits(crit.forward(enc.forward(classes)), ones)


CASES = {"decoder/L_RX": rx_case, "critic/L_CRIT": crit_case, "encoder/L_TX": tx_case}


def check(case, rng, entries=12):
    params, fwd = case(rng)
    return ad.finite_difference_check(fwd, params, tolerance=1e-4, step=1e-5, max_entries=entries, rng=rng)


def used_rows_check(rng):
    """Gradient check restricted to the embedding rows the batch actually reads."""
    enc = EncoderNet.init(SIZES, rng)
    crit = CriticNet.init(SIZES, rng)
    classes = rng.integers(0, SIZES.num_classes, 4)
    table = enc.params["embed.table"]
    fwd = lambda: ad.bce_with_logits(crit.forward(enc.forward(classes)), np.ones(4))
    table.grad = None
    fwd().backward()
    analytic = table.grad[classes].copy()
    numeric = np.zeros_like(analytic)
    for r, c in enumerate(classes):
        for j in range(SIZES.embed):
            v = table.data[c, j]
            table.data[c, j] = v + 1e-5
            fp = float(fwd().data)
            table.data[c, j] = v - 1e-5
            fm = float(fwd().data)
            table.data[c, j] = v
            numeric[r, j] = (fp - fm) / 2e-5
    return analytic, numeric

