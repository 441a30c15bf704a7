import numpy as np
import pytest
import torch

from segdrive import IGNORE, SEQ_LEN
from segdrive.dataset import FrameRecord, NormStats, SequenceSample
from segdrive.models import ArchConfig

TINY_ARCH = dict(backbone="tiny", extractors=["tiny", "tiny", "model_a"])


def make_sample(rng, hw=(9, 16), num_classes=20, chapter="c0", start=0, ignore_frac=0.05):
    h, w = hw
    frames = []
    for k in range(SEQ_LEN):
        labels = rng.integers(0, num_classes, size=(h, w)).astype(np.uint8)
        labels[rng.random((h, w)) < ignore_frac] = IGNORE
        frames.append(FrameRecord(
            chapter_id=chapter,
            frame_index=start + k,
            image=rng.integers(0, 256, size=(h, w, 3)).astype(np.uint8),
            mask_labels=labels,
            speed=float(rng.normal(12, 4)),
            angle=float(rng.normal(0, 20)),
        ))
    return SequenceSample(frames)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def unit_stats():
    return NormStats((0.0, 0.0, 0.0), (1.0, 1.0, 1.0), 0.0, 1.0, 0.0, 1.0)


@pytest.fixture
def tiny_arch():
    return ArchConfig(**TINY_ARCH)


@pytest.fixture(autouse=True)
def _seed_torch():
    torch.manual_seed(0)


# ---------------------------------------------------------------- acceptance report

_criteria = pytest.StashKey[dict]()


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(name): acceptance criterion covered by this test")
    config.stash[_criteria] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    results = item.config.stash[_criteria]
    name = marker.args[0]
    if report.failed or (report.when == "call" and name not in results):
        results[name] = "FAIL" if report.failed else "PASS"


def pytest_terminal_summary(terminalreporter, config):
    results = config.stash[_criteria]
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for name, status in results.items():
        terminalreporter.write_line(f"{status}  {name}")
