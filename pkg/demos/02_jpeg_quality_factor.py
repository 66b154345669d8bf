"""Recover the JPEG quality factor of a file from its quantization tables."""

# %%
import tempfile
from pathlib import Path

import numpy as np
from PIL import Image

from promptmix.jpegqf import estimate_jpeg_qf, read_quant_tables
from promptmix.synthesis import average_qf

tmp = Path(tempfile.mkdtemp())
pixels = np.random.default_rng(0).integers(0, 256, (64, 64, 3), dtype=np.uint8)

# %% Encode at a few qualities and estimate each one back
estimates = []
for q in (50, 75, 91, 95):
    path = tmp / f"q{q}.jpg"
    Image.fromarray(pixels).save(path, quality=q)
    estimates.append(estimate_jpeg_qf(path))
    print(q, "->", estimates[-1])

# %% The luminance table itself (natural order)
table = read_quant_tables((tmp / "q75.jpg").read_bytes())[0]
print(table.reshape(8, 8))

# %% A dataset's QF is the rounded mean of its files' estimates
print("dataset QF:", average_qf(estimates))
