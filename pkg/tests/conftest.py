import numpy as np
import pytest

from polysnake.config import Config
from polysnake.model import init_params


def tiny_config(**kw) -> Config:
    """A narrow network that keeps per-test cost in the millisecond range."""
    base = dict(n_vertices=16, feat_dim=8, d0=4, d1=4, d2=4, encoder_channels=(8, 8, 16, 16),
                head_channels=8, num_classes=4, icd_layers=3, icd_kernel=3, icd_width=8,
                icd_fusion=(12, 8, 8), offset_hidden=8, mcr_layers=2, mcr_kernel=3, mcr_width=4,
                iterations=3, image_size=64, batch_size=2)
    base.update(kw)
    return Config(**base)


@pytest.fixture
def cfg():
    return tiny_config()


@pytest.fixture
def params(cfg):
    return init_params(0, cfg)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE: list[str] = []


def record_acceptance(number, title: str, ok: bool, detail: str) -> bool:
    """Queue one PASS/FAIL line for the end-of-run summary and echo it immediately."""
    line = f"{'PASS' if ok else 'FAIL'}  criterion {number}: {title} | {detail}"
    ACCEPTANCE.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
