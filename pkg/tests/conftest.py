import numpy as np
import pytest

from predrisk.model import ModelConfig
from predrisk.synthetic import interaction_samples

TOY = ModelConfig(embed_dim=4, encoder_hidden=4, decoder_hidden=6, conv1_filters=4,
                  conv2_filters=3, gat_dim=4, ch1_dim=4)


@pytest.fixture(scope="session")
def toy_config():
    return TOY


@pytest.fixture(scope="session")
def samples32():
    return interaction_samples(32)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    lines = []
    for key in ("passed", "failed"):
        for rep in terminalreporter.stats.get(key, []):
            if rep.when == "call":
                lines += [v for k, v in rep.user_properties if k == "acceptance"]
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
