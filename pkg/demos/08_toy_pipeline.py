"""Full pipeline on the bundled four-image toy dataset, every backend mocked.

Same as ``promptmix run-all --config <toy>/config.json --out <dir>``.
"""

# %%
import tempfile
from pathlib import Path

from promptmix.cli import main
from promptmix.core import read_json
from promptmix.pipeline import tree_digest
from promptmix.toy import install_toy

tmp = Path(tempfile.mkdtemp())
config = install_toy(tmp / "data")
main(["run-all", "--config", str(config), "--out", str(tmp / "out")])

# %% Every stage leaves a report; the artifact tree digest is reproducible
for stage in ("generate", "filter-images", "mix", "eval"):
    print(stage, read_json(tmp / "out" / stage / "report.json")["counts"])
print("digest", tree_digest(tmp / "out"))
print(read_json(tmp / "out" / "mix" / "epoch_0000.json"))
