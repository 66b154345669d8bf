"""Prompt filtering against a scripted trainer: a prompt goes when its images alone hurt validation."""

# %%
import json
import sys
import tempfile
from pathlib import Path

from promptmix.backends import Backend, BackendEndpoint
from promptmix.core import ACTIVE, ImageRecord, PromptRecord, write_json
from promptmix.mixer import FakeEntry, save_fake_dataset
from promptmix.promptfilter import filter_prompts

tmp = Path(tempfile.mkdtemp())
texts = {"p00000": "large crowd in mecca", "p00001": "large crowd in a train station", "p00002": "large crowd in a park"}
bag = [PromptRecord(pid, t, status=ACTIVE) for pid, t in texts.items()]
entries = [FakeEntry(ImageRecord(f"{pid}-s{s}", f"{pid}-{s}.jpg", 8, 8, "color", pid, s), "m.dmap", t)
           for pid, t in texts.items() for s in range(3)]
save_fake_dataset(tmp / "fake.json", entries, "A")
write_json(tmp / "val.json", {"kind": "images", "images": []})

# %% The mock trainer's MAE is a fixed function of which prompts appear in the epochs
spec = {"base": 10.0, "rules": [{"contains": "mecca", "delta": 2.0}, {"contains": "train station", "delta": -1.1}]}
trainer = BackendEndpoint("trainer", [sys.executable, "-m", "promptmix.mock_workers", "trainer", json.dumps(spec)])
with Backend(trainer) as b:
    res = filter_prompts(bag, entries, ["r0"], tmp / "val.json", b, tmp / "work", r_mix=2, epochs=3,
                         base_seed=1, fake_dataset_path=tmp / "fake.json")

# %%
print("baseline", res.base_mae)
for p in res.bag:
    print(p.prompt_id, res.maes[p.prompt_id], p.status, "|", p.text)
print(len(res.entries), "of", len(entries), "images left")
