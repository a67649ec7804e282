import numpy as np
import pytest

from mskview.exams import PLANES, TASKS, SynthConfig, generate_synthetic


def small_config(**kw):
    base = dict(n_train=12, n_test=6, image_size=48, slices_range=(2, 4), seed=3)
    base.update(kw)
    return SynthConfig(**base)


@pytest.fixture(scope="session")
def synth_root(tmp_path_factory):
    root = tmp_path_factory.mktemp("synth")
    generate_synthetic(small_config(), root)
    return root


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_volume(rng, shape=(3, 32, 32), low=1, high=200, background=0.3):
    """uint8 volume with a zero background fraction and spread foreground values."""
    vol = rng.integers(low, high, size=shape).astype(np.uint8)
    vol[rng.random(shape) < background] = 0
    return vol


ACCEPTANCE_LINES = []


def record_criterion(number: int, title: str, ok: bool, detail: str) -> None:
    line = f"criterion {number:>2} [{'PASS' if ok else 'FAIL'}] {title}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
