"""Density maps from head points, and the counting / depth metrics."""

# %%
import numpy as np

from promptmix.core import DenseMap
from promptmix.metrics import count_of, counting_errors, density_from_heads, depth_errors

# %% Three heads, one of them in a corner; each still contributes exactly 1
heads = [(2, 3), (30, 20), (0, 0)]
dmap = density_from_heads(heads, width=48, height=32)
print("map shape", dmap.shape, "count", round(count_of(dmap), 9))

# %% Bounding-box mode: [x, y, w, h], kernel size follows the box
boxed = density_from_heads([(10, 10, 12, 16), (30, 5, 4, 4)], 48, 32)
print("boxed count", round(boxed.total(), 9))

# %% Counting errors accept maps or plain counts
print("MAE, MSE:", counting_errors([10, 20], [12, 16]))
print("MAE, RMSE:", counting_errors([10, 20], [12, 16], mse_mode="rmse-as-mse"))

# %% Depth: RMSE and threshold accuracies over pixels with a valid ground truth
rng = np.random.default_rng(0)
gt = rng.uniform(1, 10, (8, 8))
gt[0, :] = 0  # missing depth, ignored
pred = gt * rng.uniform(0.8, 1.3, (8, 8))
rmse, d1, d2, d3 = depth_errors(DenseMap(pred), DenseMap(gt))
print(f"rmse {rmse:.3f}  d1 {d1:.3f}  d2 {d2:.3f}  d3 {d3:.3f}")
