import json
import sys

import numpy as np
import pytest
from PIL import Image

from promptmix.backends import Backend, BackendEndpoint
from promptmix.core import ImageRecord


def mock_endpoint(role, spec=None, annotator_id=None, timeout=20.0, max_retries=2):
    launch = [sys.executable, "-m", "promptmix.mock_workers", role, json.dumps(spec or {})]
    return BackendEndpoint(role, launch, timeout, max_retries, annotator_id)


@pytest.fixture
def mock_backend():
    opened = []

    def make(role, spec=None, **kw):
        b = Backend(mock_endpoint(role, spec, **kw))
        opened.append(b)
        return b

    yield make
    for b in opened:
        b.close()


def write_image(path, array, quality=None):
    array = np.asarray(array, dtype=np.uint8)
    mode = "L" if array.ndim == 2 else "RGB"
    im = Image.fromarray(array, mode)
    if quality is None:
        im.save(path, format="PNG")
    else:
        im.save(path, format="JPEG", quality=quality)
    h, w = array.shape[:2]
    return ImageRecord(path.stem, str(path), w, h, "grayscale" if mode == "L" else "color")


@pytest.fixture
def rgb_image(tmp_path):
    rng = np.random.default_rng(1)
    return write_image(tmp_path / "rgb.png", rng.integers(0, 256, (48, 64, 3)))


# criterion number -> (title, passed, detail), filled by test_acceptance
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        title, ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {title}  ({detail})")
