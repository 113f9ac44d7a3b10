import numpy as np
import pytest
import torch

from drdg.data_model import DomainSpec
from drdg.ingestion import SynthConfig, build_synthetic_dataset, read_manifest
from drdg.networks import NetworkSpec

# Narrow networks keep the unit tests fast on one CPU core.
TINY_NET = NetworkSpec(channel_divisor=16)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_domains():
    src = DomainSpec("src", 28, 28, 5.0)
    tgt = DomainSpec("tgt", 16, 16, 8.75, annotated=False)
    return src, tgt


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory):
    """Two source scenes and three target scenes (one held out) at the default tile sizes."""
    root = tmp_path_factory.mktemp("synth")
    paths = build_synthetic_dataset(root, n_source=2, n_target=3, n_test=1, cfg=SynthConfig(seed=5))
    return {
        "root": root,
        "source": read_manifest(paths["source"]["train"]),
        "target": read_manifest(paths["target"]["train"]),
        "test": read_manifest(paths["target"]["test"]),
        "paths": paths,
    }


@pytest.fixture(autouse=True)
def _torch_threads():
    torch.set_num_threads(1)
    yield


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split("criterion ")[1].split(":")[0])):
            terminalreporter.write_line(line)
