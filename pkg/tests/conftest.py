import numpy as np
import pytest

from semidepth.core import CameraIntrinsics, DepthMap, DepthRange, ErrorMap, ImageBuffer, MotionParams
from semidepth.geometry import motion_to_rigid
from semidepth.losses import LossInputs, motion_target


def random_scene(seed, size=8, channels=3):
    """Small random problem: two unrelated images, dense supervision and a
    latent/motion pair near the supervised optimum."""
    rng = np.random.default_rng(seed)
    h = w = size
    f = float(size)
    K = CameraIntrinsics(f, f, (w - 1) / 2, (h - 1) / 2)
    r = DepthRange(0.1, 100.0, 32.0)
    ego = motion_to_rigid(MotionParams(rng.normal(0, 0.03, 3), rng.normal(0, 0.3, 3)))
    inputs = LossInputs(
        ImageBuffer(rng.uniform(0.1, 0.9, (h, w, channels))),
        ImageBuffer(rng.uniform(0.1, 0.9, (h, w, channels))),
        K,
        ego,
        r,
        DepthMap(rng.uniform(5, 15, (h, w))),
        ErrorMap(rng.uniform(0, 0.5, (h, w))),
    )
    u = rng.normal(0.3, 0.3, (h, w))
    m = motion_target(ego, r) + rng.normal(0, 0.01, 6)
    return inputs, u, m


def relative_error(a, b, floor=1e-8):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, repeated in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def record_criterion(number: int, title: str, passed: bool, detail: str) -> None:
    line = f"criterion {number} [{'PASS' if passed else 'FAIL'}] {title}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
