import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from promptmix.core import DenseMap
from promptmix.errors import ContractError
from promptmix.metrics import count_of, counting_errors, density_from_heads, depth_errors, gaussian_kernel


def naive_density(heads, width, height, size=15, sigma=4.0):
    """Direct per-pixel evaluation of each truncated, renormalized Gaussian."""
    out = [[0.0] * width for _ in range(height)]
    r = size // 2
    for x, y in heads:
        cx, cy = int(x), int(y)
        cells = []
        for yy in range(cy - r, cy + r + 1):
            for xx in range(cx - r, cx + r + 1):
                if 0 <= xx < width and 0 <= yy < height:
                    w = math.exp(-((xx - cx) ** 2 + (yy - cy) ** 2) / (2 * sigma * sigma))
                    cells.append((yy, xx, w))
        s = sum(w for _, _, w in cells)
        for yy, xx, w in cells:
            out[yy][xx] += w / s
    return np.array(out)


def naive_depth(pred, gt):
    sq, n, hits = 0.0, 0, [0, 0, 0]
    for p, g in zip(pred.ravel(), gt.ravel()):
        if g <= 0:
            continue
        n += 1
        sq += (p - g) ** 2
        ratio = max(g / p, p / g) if p > 0 else math.inf
        for j in range(3):
            if ratio < 1.25 ** (j + 1):
                hits[j] += 1
    return (math.sqrt(sq / n),) + tuple(h / n for h in hits)


def test_kernel_is_normalized():
    assert gaussian_kernel(15, 4).sum() == pytest.approx(1.0, abs=1e-12)


def test_no_heads_gives_zero_map():
    m = density_from_heads([], 20, 10)
    assert m.shape == (10, 20) and count_of(m) == 0.0


def test_center_head_total_is_one():
    assert count_of(density_from_heads([(31, 31)], 63, 63)) == pytest.approx(1.0, abs=1e-6)


def test_corner_head_is_renormalized():
    m = density_from_heads([(0, 0)], 63, 63)
    # oracle: the visible quarter of the kernel, divided by its own sum
    k = gaussian_kernel(15, 4)[7:, 7:]
    expected = k / k.sum()
    assert np.allclose(m.values[:8, :8], expected, rtol=1e-12)
    assert count_of(m) == pytest.approx(1.0, abs=1e-6)


def test_density_matches_naive_oracle():
    heads = [(0, 0), (5.7, 3.2), (19, 9), (10, 5), (10, 5)]
    m = density_from_heads(heads, 20, 10)
    assert np.allclose(m.values, naive_density(heads, 20, 10), rtol=1e-10, atol=1e-15)


def test_seven_heads_count():
    heads = [(3, 3), (10, 40), (55, 2), (30, 30), (63, 47), (0, 47), (20, 20)]
    assert count_of(density_from_heads(heads, 64, 48)) == pytest.approx(7.0, abs=1e-5)


def test_bounding_box_mode():
    m = density_from_heads([(10, 10, 8, 12), (0, 0, 3, 3)], 40, 30)
    assert count_of(m) == pytest.approx(2.0, abs=1e-9)


def test_out_of_bounds_head_names_index():
    with pytest.raises(ContractError, match="head 1"):
        density_from_heads([(1, 1), (20, 5)], 20, 10)


def test_counting_worked_example():
    assert counting_errors([10, 20], [12, 16]) == (3.0, 10.0)


def test_counting_identity_and_single_pair():
    assert counting_errors([DenseMap.uniform(2, 2, 7)], [DenseMap.uniform(3, 3, 7)]) == (0.0, 0.0)
    assert counting_errors([5], [9]) == (4.0, 16.0)


def test_rmse_alias():
    mae, rmse = counting_errors([10, 20], [12, 16], mse_mode="rmse-as-mse")
    assert rmse == pytest.approx(math.sqrt(10.0))


def test_counting_empty_raises():
    with pytest.raises(ContractError):
        counting_errors([], [])


def test_depth_identity():
    gt = DenseMap(np.full((3, 3), 2.0))
    assert depth_errors(gt, gt) == (0.0, 1.0, 1.0, 1.0)


def test_depth_thresholds():
    assert depth_errors(DenseMap([[1.2]]), DenseMap([[1.0]]))[1] == 1.0
    _, d1, d2, d3 = depth_errors(DenseMap([[1.3]]), DenseMap([[1.0]]))
    assert (d1, d2, d3) == (0.0, 1.0, 1.0)


def test_depth_excludes_missing_pixels():
    pred = DenseMap([[1.0, 50.0]])
    gt = DenseMap([[1.0, 0.0]])
    assert depth_errors(pred, gt) == (0.0, 1.0, 1.0, 1.0)
    with pytest.raises(ContractError):
        depth_errors(pred, DenseMap([[0.0, 0.0]]))


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_depth_matches_oracle_and_is_monotone(seed):
    rng = np.random.default_rng(seed)
    gt = rng.uniform(0.5, 10, (8, 8)) * (rng.random((8, 8)) > 0.1)
    gt[0, 0] = 1.0
    pred = gt * rng.uniform(0.5, 2.0, (8, 8)) + rng.uniform(0, 0.1, (8, 8))
    got = depth_errors(DenseMap(pred), DenseMap(gt))
    want = naive_depth(pred, gt)
    assert got[0] == pytest.approx(want[0], rel=1e-10)
    assert got[1:] == want[1:]
    assert got[1] <= got[2] <= got[3]


@settings(max_examples=100)
@given(st.lists(st.tuples(st.floats(0, 1e4), st.floats(0, 1e4)), min_size=1, max_size=30))
def test_mse_at_least_mae_squared(pairs):
    mae, mse = counting_errors([p for p, _ in pairs], [g for _, g in pairs])
    assert mse >= mae ** 2 * (1 - 1e-12)
