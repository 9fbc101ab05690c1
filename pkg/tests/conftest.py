import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from dicrack.image import GrayImage

import oracles

settings.register_profile("dicrack", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("dicrack")


def blob_image(shape=(96, 96), seed=1, shift=(0.0, 0.0), density=0.015, scale=None):
    """Analytic speckle; ``shift`` moves every blob, giving an exact translation."""
    H, W = shape
    xs, ys, rs = oracles.random_blobs(shape, int(density * H * W), seed, radius=3.0, spread=0.4)
    data = oracles.render_blobs(shape, xs, ys, rs, shift, ink_gain=2.0)
    return GrayImage(np.clip(data, 0, 1), scale=scale)


@pytest.fixture(scope="session")
def speckle():
    """96x96 analytic speckle."""
    return blob_image()


@pytest.fixture(scope="session")
def speckle_160():
    return blob_image((160, 160), seed=7)


# -- acceptance verdicts ----------------------------------------------------------

_verdicts = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("acceptance")
    if mark is None or (rep.when != "call" and not rep.failed):
        return
    number, title = mark.args
    ok = _verdicts.get(number, (True,))[0] and rep.passed
    detail = "; ".join(str(v) for k, v in item.user_properties if k == "detail")
    _verdicts[number] = (ok, title, detail)


def pytest_terminal_summary(terminalreporter):
    if not _verdicts:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n in sorted(_verdicts):
        ok, title, detail = _verdicts[n]
        line = f"criterion {n} ({title}): {'PASS' if ok else 'FAIL'}"
        tr.write_line(f"{line}  [{detail}]" if detail else line)
