import numpy as np
import pytest

from dclose import BBox, BlobSpec, TargetSpec, make_blob_detector
from dclose.corpus import make_blob_cases

_ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def acceptance_report():
    """Collector for one pass/fail line per acceptance criterion; the lines
    print in the terminal summary regardless of capture settings."""

    def record(num: int, desc: str, ok: bool, elapsed: float, budget: float):
        _ACCEPTANCE_LINES.append((num, desc, ok, elapsed, budget))

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for num, desc, ok, elapsed, budget in sorted(_ACCEPTANCE_LINES):
        status = "PASS" if ok else "FAIL"
        terminalreporter.write_line(
            f"criterion {num:>2}: {status}  [{elapsed:6.1f}s / budget {budget:4.0f}s]  {desc}"
        )


@pytest.fixture(scope="session")
def blob_case():
    """One middle-size synthetic case: textured image plus oracle detector."""
    return make_blob_cases(per_group=1, seed=7)[1]


@pytest.fixture(scope="session")
def blob_suite():
    """The full 30-case suite (3 size groups x 10)."""
    return make_blob_cases(per_group=10, seed=7)


@pytest.fixture()
def rng():
    return np.random.default_rng(42)


@pytest.fixture()
def simple_blob():
    """A 32x32 image bright only inside a known 8x8 evidence region, plus the
    matching detector and target."""
    img = np.full((32, 32, 3), 0.1, dtype=np.float32)
    region = BBox(8, 12, 16, 20)
    img[12:20, 8:16, :] = 0.9
    spec = BlobSpec(box=region, class_profile=np.array([0.9, 0.05, 0.05]))
    det = make_blob_detector(spec)
    target = TargetSpec(det.detect(img)[0])
    return img, det, target, region
