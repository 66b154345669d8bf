import json
import time

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from promptmix.backends import (
    AnnotateRequest, Backend, BackendEndpoint, BackendPool, CaptionRequest, GenerateRequest, TrainEvalRequest,
    decode_request, encode_request, invoke_annotate, invoke_caption, invoke_generate, invoke_train_eval,
)
from promptmix.core import EpochManifest, ImageRecord, write_json
from promptmix.errors import BackendError, FormatError

from conftest import mock_endpoint, write_image

text = st.text(st.characters(blacklist_categories=("Cs",)), max_size=30)


@given(st.one_of(
    st.builds(CaptionRequest, text),
    st.builds(GenerateRequest, text, st.integers(1, 4096), st.integers(1, 4096), st.integers(0, 2**64 - 1),
              text, st.one_of(st.none(), st.dictionaries(st.text(max_size=5), st.integers()))),
    st.builds(AnnotateRequest, text, text),
    st.builds(TrainEvalRequest, st.lists(text, max_size=4), text),
))
def test_protocol_round_trip(req):
    line = encode_request(req)
    assert "\n" not in line
    assert decode_request(line) == req


def test_decode_rejects_unknown_op():
    with pytest.raises(FormatError):
        decode_request('{"op": "dance"}')


def test_endpoint_expands_placeholders(tmp_path):
    ep = BackendEndpoint.from_dict({"launch": ["{python}", "{config_dir}/w.py", {"a": 1}]}, "captioner", tmp_path)
    assert ep.launch[1] == f"{tmp_path}/w.py"
    assert json.loads(ep.launch[2]) == {"a": 1}


def test_caption_table_lookup(mock_backend, rgb_image):
    b = mock_backend("captioner", {"table": {"rgb": "people at a fair"}})
    assert invoke_caption(b, rgb_image) == "people at a fair"


def test_caption_missing_file(mock_backend, tmp_path):
    b = mock_backend("captioner")
    ghost = ImageRecord("ghost", str(tmp_path / "ghost.png"), 8, 8, "color")
    with pytest.raises(BackendError) as err:
        invoke_caption(b, ghost)
    assert err.value.cause == "input"


def test_timeout_kills_worker(mock_backend, rgb_image):
    b = mock_backend("captioner", {"delay": 5}, timeout=0.5, max_retries=1)
    t0 = time.monotonic()
    with pytest.raises(BackendError) as err:
        invoke_caption(b, rgb_image)
    assert err.value.cause == "timeout"
    assert time.monotonic() - t0 < 4


def test_generate_is_deterministic(mock_backend, tmp_path):
    b = mock_backend("generator")
    r1 = invoke_generate(b, "a crowd", 32, 24, 7, tmp_path / "a.png", prompt_id="p00000")
    invoke_generate(b, "a crowd", 32, 24, 7, tmp_path / "b.png", prompt_id="p00000")
    assert r1.id == "p00000-s7" and (r1.width, r1.height) == (32, 24)
    assert (tmp_path / "a.png").read_bytes() == (tmp_path / "b.png").read_bytes()
    invoke_generate(b, "a crowd", 32, 24, 8, tmp_path / "c.png")
    assert (tmp_path / "a.png").read_bytes() != (tmp_path / "c.png").read_bytes()


def test_generate_size_mismatch(mock_backend, tmp_path):
    b = mock_backend("generator", {"size_override": [32, 32]})
    with pytest.raises(BackendError, match="32x32"):
        invoke_generate(b, "x", 64, 48, 1, tmp_path / "a.png")


def test_generate_worker_error_is_not_retried(mock_backend, tmp_path):
    log = tmp_path / "log.txt"
    b = mock_backend("generator", {"fail_seeds": [3], "log": str(log)}, max_retries=3)
    with pytest.raises(BackendError) as err:
        invoke_generate(b, "x", 16, 16, 3, tmp_path / "a.png")
    assert err.value.cause == "worker"
    assert len([ln for ln in log.read_text().splitlines() if '"generate"' in ln]) == 1


def test_annotate_uniform(mock_backend, rgb_image, tmp_path):
    b = mock_backend("annotator", {"kind": "uniform", "total": 48.0}, annotator_id="A")
    m = invoke_annotate(b, rgb_image, tmp_path / "a.dmap")
    assert m.shape == (48, 64)
    assert np.allclose(m.values, 48.0 / (48 * 64))


def test_annotate_scale(mock_backend, rgb_image, tmp_path):
    b = mock_backend("annotator", {"annotation_scale": 8, "total": 10}, annotator_id="A")
    assert invoke_annotate(b, rgb_image, tmp_path / "a.dmap").shape == (6, 8)
    assert b.annotation_scale == 8


def test_annotate_pair_totals(mock_backend, rgb_image, tmp_path):
    a = mock_backend("annotator", {"total": 100}, annotator_id="A")
    c = mock_backend("annotator", {"total": 110}, annotator_id="B")
    ta = invoke_annotate(a, rgb_image, tmp_path / "a.dmap").total()
    tc = invoke_annotate(c, rgb_image, tmp_path / "b.dmap").total()
    assert ta == pytest.approx(100, rel=1e-6) and tc == pytest.approx(110, rel=1e-6)


@pytest.mark.parametrize("corrupt,exc,match", [
    ("negative", BackendError, "negative"),
    ("dims", BackendError, "annotator B on image rgb"),
    ("rows0", FormatError, "empty map 0x1"),
])
def test_annotate_rejects_bad_maps(mock_backend, rgb_image, tmp_path, corrupt, exc, match):
    b = mock_backend("annotator", {"corrupt": corrupt}, annotator_id="B")
    with pytest.raises(exc, match=match):
        invoke_annotate(b, rgb_image, tmp_path / "a.dmap")


def _trainer_inputs(tmp_path, texts):
    entries = [{"image": {"id": f"f{i}"}, "annotation": "x", "prompt_id": "p", "prompt_text": t}
               for i, t in enumerate(texts)]
    write_json(tmp_path / "fake.json", {"kind": "fake_dataset", "annotator": "A", "entries": entries})
    manifest = EpochManifest(0, ("r1",), tuple(f"f{i}" for i in range(len(texts))))
    write_json(tmp_path / "epoch.json", manifest.to_dict({"fake_dataset": "fake.json"}))
    write_json(tmp_path / "val.json", {"kind": "images", "images": []})
    return [tmp_path / "epoch.json"], tmp_path / "val.json"


def test_trainer_rules(mock_backend, tmp_path):
    rule = {"contains": "mecca", "delta": 2.0, "per": "id"}
    b = mock_backend("trainer", {"base": 10.0, "rules": [rule]})
    epochs, val = _trainer_inputs(tmp_path, ["pilgrims in mecca"] * 3 + ["a street"])
    assert invoke_train_eval(b, epochs, val) == 16.0
    epochs, val = _trainer_inputs(tmp_path, ["a street"])
    assert invoke_train_eval(b, epochs, val) == 10.0


@pytest.mark.parametrize("reply", ["garbage", "nan"])
def test_trainer_bad_replies(mock_backend, tmp_path, reply):
    b = mock_backend("trainer", {"reply": reply}, max_retries=1)
    epochs, val = _trainer_inputs(tmp_path, [])
    with pytest.raises(BackendError):
        invoke_train_eval(b, epochs, val)


def test_retry_budget(tmp_path, rgb_image):
    spec = {"fail_first": 2, "state_file": str(tmp_path / "launches")}
    with Backend(mock_endpoint("captioner", spec, max_retries=2)) as b:
        with pytest.raises(BackendError) as err:
            invoke_caption(b, rgb_image)
        assert err.value.cause == "exit"
    assert (tmp_path / "launches").read_text() == "2"
    # the third launch succeeds
    with Backend(mock_endpoint("captioner", spec, max_retries=3)) as b:
        assert invoke_caption(b, rgb_image) == "a crowd of people"


def test_pool_preserves_order(tmp_path):
    paths = [write_image(tmp_path / f"i{i}.png", np.full((4, 4, 3), i * 10)) for i in range(8)]
    spec = {"table": {f"i{i}": f"caption {i}" for i in range(8)}, "delay": 0.01}
    with BackendPool(mock_endpoint("captioner", spec), width=3) as pool:
        assert pool.map(invoke_caption, paths) == [f"caption {i}" for i in range(8)]
