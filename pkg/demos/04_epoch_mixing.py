"""Per-epoch manifests: every real id plus r_mix fake ids drawn without replacement."""

# %%
import tempfile
from collections import Counter
from pathlib import Path

from promptmix.core import read_json
from promptmix.mixer import emit_epoch_manifests, sample_epoch

fake = [f"f{i}" for i in range(10)]
real = ["r0", "r1"]

# %% One epoch
m = sample_epoch(fake, r_mix=3, base_seed=2023, t=0, real_ids=real)
print(m.real_ids, m.fake_ids, m.checksum[:12])

# %% Inclusion frequency is flat across epochs
counts = Counter()
for t in range(3000):
    counts.update(sample_epoch(fake, 3, 2023, t).fake_ids)
print(sorted(counts.values()))

# %% Writing manifests to disk; the same seed always gives the same bytes
out = Path(tempfile.mkdtemp())
paths = emit_epoch_manifests(fake, real, out, r_mix=3, epochs=4, base_seed=2023)
print(read_json(paths[1]))
