"""Prompt bag: merge captions with manual prompts, add prefix and color suffix, review."""

# %%
from promptmix.core import PromptRecord, load_image_manifest
from promptmix.prompts import (
    ModifyRules, detect_color_mode, location_prompts, manual_prompts, merge_prompt_bags, modify_all,
    review_prompts,
)
from promptmix.toy import toy_dir

real = {r.id: r for r in load_image_manifest(toy_dir() / "train.json")}
for r in real.values():
    print(r.id, detect_color_mode(r.path))

# %% Captions would come from a captioner backend; here they are typed in
auto = [PromptRecord("", "people crossing a bridge", source_image_id="img1"),
        PromptRecord("", "people at a fair", source_image_id="img2")]
bag = merge_prompt_bags(auto, manual_prompts(location_prompts(["a stadium", "a square"], "people in {}")))

# %%
bag = modify_all(bag, real, ModifyRules(prefix="large crowd", color_suffix=True))
bag = review_prompts(bag, "p00003 discard\n")
for p in bag:
    print(p.prompt_id, p.status, "|", p.effective_text)
