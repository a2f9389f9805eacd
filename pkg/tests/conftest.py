import numpy as np
import pytest

from learnphy.channel import ChannelConfig
from learnphy.protocol import TrainingConfig, train_link


def central_diff(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Independent numerical gradient of scalar ``f`` at array ``x`` (x is restored)."""
    g = np.zeros_like(x)
    flat, gf = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        v = flat[i]
        flat[i] = v + h
        fp = f()
        flat[i] = v - h
        fm = f()
        flat[i] = v
        gf[i] = (fp - fm) / (2 * h)
    return g


def rel_err(a: np.ndarray, b: np.ndarray, floor: float = 1e-6) -> float:
    a, b = np.asarray(a), np.asarray(b)
    return float(np.max(np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def trained_link():
    """One converged link at the default operating point (flat AWGN, 10 dB)."""
    ch = ChannelConfig(kind="awgn_flat", seed=7)
    cfg = TrainingConfig(channel_fwd=ch, channel_rev=ch, shared_seed=7, max_epochs=120)
    return train_link(cfg, seed=7)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def acceptance_report():
    """Collects one summary line per acceptance criterion."""
    return ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
