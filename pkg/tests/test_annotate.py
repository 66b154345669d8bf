import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from promptmix.annotate import (
    annotate_all, distance, filter_images, keep_count, load_annotation_index, load_annotation_set,
    quality_score, save_annotation_index,
)
from promptmix.backends import BackendPool
from promptmix.core import DenseMap, ImageRecord
from promptmix.errors import BackendError, ContractError

from conftest import mock_endpoint, write_image


def u(total, shape=(2, 2)):
    return DenseMap.uniform(*shape, total)


def test_distances():
    assert distance(u(100), u(110)) == 10
    assert distance(u(5), u(5)) == 0
    a = DenseMap([[1.0, 2.0]])
    b = DenseMap([[2.0, 4.0]])
    assert distance(a, b, "pixel_mae") == 1.5
    assert distance(b, None, "pixel_mae") == 3.0


def test_quality_score_examples():
    assert quality_score([u(100), u(110), u(90)]) == pytest.approx(20 / 110, rel=1e-15)
    assert quality_score([u(7), u(7), u(7)]) == 0
    assert quality_score([u(0), u(0)]) == 0
    with pytest.raises(ContractError):
        quality_score([u(1)])


def bruteforce_q(maps, kind):
    num = 0.0
    for i in range(len(maps)):
        for j in range(len(maps)):
            if i != j:
                num = max(num, distance(maps[i], maps[j], kind))
    den = max(distance(m, None, kind) for m in maps)
    return 0.0 if den == 0 else num / den


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 5), st.integers(0, 2**32 - 1), st.sampled_from(["count_sum", "pixel_mae"]))
def test_quality_score_properties(l, seed, kind):
    rng = np.random.default_rng(seed)
    maps = [DenseMap(rng.random((3, 4)) * rng.uniform(0, 50)) for _ in range(l)]
    q = quality_score(maps, kind)
    assert q == pytest.approx(bruteforce_q(maps, kind), rel=1e-12)
    perm = [maps[i] for i in rng.permutation(l)]
    assert quality_score(perm, kind) == pytest.approx(q, rel=1e-12)
    assert quality_score([DenseMap(m.values * 3.0) for m in maps], kind) == pytest.approx(q, rel=1e-12)
    if kind == "count_sum":
        assert 0 <= q <= 1 + 1e-12


def _recs(n):
    return [ImageRecord(f"p{i % 3:05d}-s{i}", f"/x/{i}.jpg", 8, 8, "color", f"p{i % 3:05d}", i) for i in range(n)]


def test_filter_counts():
    imgs = _recs(10)
    scores = {im.id: (i * 7) % 10 / 10 for i, im in enumerate(imgs)}
    assert len(filter_images(imgs, scores, 60)) == 6
    assert len(filter_images(imgs, scores, 1)) == 1
    assert filter_images(imgs, None, 100) == imgs
    kept = filter_images(imgs, scores, 40)
    assert sorted(scores[k.id] for k in kept) == sorted(scores.values())[:4]


def test_filter_ties_break_on_prompt_then_seed():
    imgs = _recs(6)
    kept = filter_images(imgs, {im.id: 0.5 for im in imgs}, 50)
    assert [k.id for k in kept] == ["p00000-s0", "p00000-s3", "p00001-s1"]


def test_keep_count_exact():
    assert keep_count(60, 10) == 6
    assert keep_count(0.1, 1000) == 1
    assert keep_count(33.3, 1000) == 333
    with pytest.raises(ContractError):
        keep_count(0, 5)


def test_annotate_all_and_index(tmp_path):
    imgs = [write_image(tmp_path / f"i{i}.png", np.full((16, 24, 3), i * 40)) for i in range(3)]
    pools = {
        "A": BackendPool(mock_endpoint("annotator", {"total": 100}, "A")),
        "B": BackendPool(mock_endpoint("annotator", {"total": 110}, "B"), width=2),
    }
    try:
        index = annotate_all(imgs, pools, tmp_path / "ann")
    finally:
        for p in pools.values():
            p.close()
    assert [a for a, _ in index["i1"]] == ["A", "B"]
    save_annotation_index(tmp_path / "ann" / "index.json", index, ["A", "B"])
    loaded = load_annotation_index(tmp_path / "ann" / "index.json")
    assert loaded == index
    aset = load_annotation_set("i1", loaded["i1"])
    assert quality_score(aset) == pytest.approx(10 / 110, rel=1e-6)


def test_annotate_all_wrong_dims(tmp_path):
    img = write_image(tmp_path / "i.png", np.zeros((16, 24, 3)))
    with BackendPool(mock_endpoint("annotator", {"corrupt": "dims"}, "B")) as pool:
        with pytest.raises(BackendError, match="annotator B on image i"):
            annotate_all([img], {"B": pool}, tmp_path / "ann")
