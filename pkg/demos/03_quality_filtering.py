"""Score generated images by annotator disagreement and keep the best r_img percent."""

# %%
import numpy as np

from promptmix.annotate import filter_images, keep_count, quality_score
from promptmix.core import DenseMap, ImageRecord

# %% Two annotators close to each other, one far off
agree = [DenseMap.uniform(4, 4, 100), DenseMap.uniform(4, 4, 104)]
disagree = [DenseMap.uniform(4, 4, 100), DenseMap.uniform(4, 4, 160)]
print("agreeing q", quality_score(agree), " disagreeing q", quality_score(disagree))
print("pixel_mae q", quality_score(disagree, "pixel_mae"))

# %% Ten images with random scores; keep 40 percent
rng = np.random.default_rng(1)
images = [ImageRecord(f"p00000-s{i}", f"{i}.jpg", 8, 8, "color", "p00000", i) for i in range(10)]
scores = {im.id: float(rng.random()) for im in images}
kept = filter_images(images, scores, r_img=40)
print(keep_count(40, 10), "kept:", [k.id for k in kept])
