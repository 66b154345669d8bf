"""Talking to external workers over newline-delimited JSON, using the bundled mocks."""

# %%
import json
import sys
import tempfile
from pathlib import Path

from promptmix.backends import Backend, BackendEndpoint, BackendPool, invoke_annotate, invoke_generate
from promptmix.errors import BackendError


def mock(role, spec=None, **kw):
    launch = [sys.executable, "-m", "promptmix.mock_workers", role, json.dumps(spec or {})]
    return BackendEndpoint(role, launch, **kw)


tmp = Path(tempfile.mkdtemp())

# %% Generate an image, then label it with an annotator at scale 8
with Backend(mock("generator")) as gen:
    img = invoke_generate(gen, "large crowd, a square", 64, 48, seed=7, out=tmp / "a.png", prompt_id="p00000")
print(img)
with Backend(mock("annotator", {"total": 120, "annotation_scale": 8}, annotator_id="A")) as ann:
    dmap = invoke_annotate(ann, img, tmp / "a.dmap")
print("annotation", dmap.shape, round(dmap.total(), 4))

# %% A worker that hangs is killed after its timeout
try:
    with Backend(mock("annotator", {"delay": 5}, timeout=0.5, max_retries=1, annotator_id="B")) as slow:
        invoke_annotate(slow, img, tmp / "b.dmap")
except BackendError as exc:
    print("failed:", exc.cause, "|", exc)

# %% A pool keeps results in input order
with BackendPool(mock("generator"), width=3) as pool:
    recs = pool.map(lambda b, s: invoke_generate(b, "x", 16, 16, s, tmp / f"{s}.png"), range(6))
print([r.id for r in recs])
