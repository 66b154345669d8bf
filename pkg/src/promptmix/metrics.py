"""Ground-truth density maps and the counting / depth evaluation metrics."""

from __future__ import annotations

import math

import numpy as np

from .core import DenseMap, read_json
from .errors import ContractError

DEFAULT_KERNEL_SIZE = 15
DEFAULT_SIGMA = 4.0
DELTA_BASE = 1.25


def gaussian_kernel(size: int, sigma: float) -> np.ndarray:
    """Normalized ``size x size`` Gaussian (sums to 1)."""
    if size < 1 or size % 2 == 0:
        raise ContractError(f"kernel size must be odd and positive, got {size}")
    if not sigma > 0:
        raise ContractError(f"sigma must be positive, got {sigma}")
    r = size // 2
    ax = np.arange(-r, r + 1, dtype=np.float64)
    g = np.exp(-(ax ** 2) / (2.0 * sigma ** 2))
    k = np.outer(g, g)
    return k / k.sum()


def _box_kernel_size(w: float, h: float) -> int:
    size = max(1, int(round(max(w, h))))
    return size if size % 2 == 1 else size + 1


def load_heads(path) -> list:
    """Read a head-annotation file: JSON list of [x, y] or [x, y, w, h]."""
    return [tuple(h) for h in read_json(path)]


def density_from_heads(heads, width: int, height: int, kernel_size: int = DEFAULT_KERNEL_SIZE,
                       sigma: float = DEFAULT_SIGMA) -> DenseMap:
    """Density map with one unit of mass per head.

    ``heads`` holds ``(x, y)`` pixel coordinates, or ``(x, y, w, h)`` boxes
    (top-left corner plus size) in bounding-box mode, where the kernel size
    follows the box and sigma is a quarter of it. Kernels cut by the image
    border are renormalized over their visible part, so the map total equals
    the number of heads.
    """
    density = np.zeros((height, width), dtype=np.float64)
    cache = {}
    for idx, head in enumerate(heads):
        if len(head) == 4:
            x, y, bw, bh = head
            x, y = x + bw / 2.0, y + bh / 2.0
            size = _box_kernel_size(bw, bh)
            sig = size / 4.0
        elif len(head) == 2:
            x, y = head
            size, sig = kernel_size, sigma
        else:
            raise ContractError(f"head {idx}: expected [x, y] or [x, y, w, h], got {head!r}")
        if not (0 <= x < width and 0 <= y < height):
            raise ContractError(f"head {idx} at ({x}, {y}) lies outside the {width}x{height} image")
        key = (size, sig)
        if key not in cache:
            cache[key] = gaussian_kernel(size, sig)
        kernel = cache[key]
        r = size // 2
        cx, cy = int(x), int(y)
        x0, x1 = max(cx - r, 0), min(cx + r + 1, width)
        y0, y1 = max(cy - r, 0), min(cy + r + 1, height)
        patch = kernel[y0 - (cy - r):y1 - (cy - r), x0 - (cx - r):x1 - (cx - r)]
        density[y0:y1, x0:x1] += patch / patch.sum()
    return DenseMap(density)


def count_of(dmap: DenseMap) -> float:
    return dmap.total()


def _as_count(x) -> float:
    return x.total() if isinstance(x, DenseMap) else float(x)


def counting_errors(preds, gts, mse_mode: str = "mse") -> tuple[float, float]:
    """(MAE, MSE) between predicted and ground-truth counts.

    Items may be DenseMaps or plain counts. ``mse_mode="rmse-as-mse"``
    returns the square root of the mean squared error instead, as much of
    the crowd-counting literature reports under the name MSE.
    """
    if len(preds) != len(gts):
        raise ContractError(f"{len(preds)} predictions for {len(gts)} ground truths")
    if not preds:
        raise ContractError("counting_errors needs at least one pair")
    diff = np.array([_as_count(p) - _as_count(g) for p, g in zip(preds, gts)], dtype=np.float64)
    mae = float(np.mean(np.abs(diff)))
    mse = float(np.mean(diff ** 2))
    if mse_mode == "rmse-as-mse":
        mse = math.sqrt(mse)
    elif mse_mode != "mse":
        raise ContractError(f"unknown mse_mode {mse_mode!r}")
    return mae, mse


def depth_errors(pred: DenseMap, gt: DenseMap) -> tuple[float, float, float, float]:
    """(RMSE, delta1, delta2, delta3) over pixels with a valid (> 0) ground truth."""
    if pred.shape != gt.shape:
        raise ContractError(f"shape mismatch: pred {pred.shape} vs gt {gt.shape}")
    p = pred.values
    g = gt.values
    valid = g > 0
    n = int(valid.sum())
    if n == 0:
        raise ContractError("ground truth has no valid (> 0) pixels")
    p, g = p[valid], g[valid]
    rmse = float(np.sqrt(np.mean((p - g) ** 2)))
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.maximum(g / p, p / g)
    ratio = np.where(p > 0, ratio, np.inf)
    deltas = tuple(float(np.count_nonzero(ratio < DELTA_BASE ** j)) / n for j in (1, 2, 3))
    return (rmse,) + deltas
