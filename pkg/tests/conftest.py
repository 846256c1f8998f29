"""Shared fixtures: tiny architectures and a reusable synthetic dataset."""

import numpy as np
import pytest
import torch

from svfap.config import ArchConfig, TrainConfig
from svfap.data import SynthSpec, synth_generate


@pytest.fixture(scope="session")
def tiny_arch() -> ArchConfig:
    """Smallest config exercising all three stages on a 4x4x4 token grid."""
    return ArchConfig(embed_dim=32, stage_depths=(1, 1, 1),
                      bottleneck_tokens=2, heads=2, input=(8, 32, 32),
                      patch=(2, 8, 8), decoder_dim=16, decoder_depth=1,
                      decoder_heads=2)


@pytest.fixture(scope="session")
def grad_arch() -> ArchConfig:
    """Even smaller config for finite-difference checks (2x2 spatial grid)."""
    return ArchConfig(embed_dim=16, stage_depths=(1, 1, 1),
                      bottleneck_tokens=2, heads=2, input=(8, 16, 16),
                      patch=(2, 8, 8), masking_ratio=0.5, decoder_dim=8,
                      decoder_depth=1, decoder_heads=2)


@pytest.fixture()
def tiny_train() -> TrainConfig:
    return TrainConfig(base_lr=0.02, batch_size=4, epochs=3, warmup_epochs=1,
                       seed=0)


@pytest.fixture(scope="session")
def synth_dir(tmp_path_factory):
    """3 classes x 4 noiseless clips of 16 frames at 32x32."""
    out = tmp_path_factory.mktemp("synth")
    spec = SynthSpec(num_classes=3, clips_per_class=4, frames=16, height=32,
                     width=32, noise_std=0.0, seed=11)
    synth_generate(spec, out)
    return out


@pytest.fixture(autouse=True)
def _seed_torch():
    torch.manual_seed(0)
    np.random.seed(0)
    yield


_ACCEPTANCE_RESULTS = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py::test_criterion_" in report.nodeid:
        name = report.nodeid.split("::")[-1]
        if report.when == "call" or report.outcome == "failed":
            _ACCEPTANCE_RESULTS[name] = report.outcome


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """One pass/fail line per acceptance criterion at the end of the run."""
    if not _ACCEPTANCE_RESULTS:
        return
    terminalreporter.write_sep("-", "acceptance criteria")
    for name in sorted(_ACCEPTANCE_RESULTS):
        outcome = _ACCEPTANCE_RESULTS[name]
        verdict = {"passed": "PASS", "failed": "FAIL"}.get(outcome,
                                                           outcome.upper())
        terminalreporter.write_line(f"{verdict}  {name}")
