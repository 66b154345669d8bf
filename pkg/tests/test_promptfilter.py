import pytest

from promptmix.backends import Backend
from promptmix.core import ACTIVE, DISCARDED_BY_PROMPT_FILTER, ImageRecord, PromptRecord, write_json
from promptmix.errors import ConfigError
from promptmix.mixer import FakeEntry, save_fake_dataset
from promptmix.promptfilter import ALL, MANUAL_ONLY, filter_prompts

from conftest import mock_endpoint

TEXTS = {
    "p00000": "people at a fair",  # auto prompt
    "p00001": "large crowd in mecca",
    "p00002": "large crowd in a train station",
    "p00003": "large crowd in a park",
}
RULES = [{"contains": "mecca", "delta": 2.0}, {"contains": "train station", "delta": -1.1}]


def make_inputs(tmp_path, per_prompt=3):
    bag = [PromptRecord(pid, t, status=ACTIVE, source_image_id="r0" if pid == "p00000" else None)
           for pid, t in TEXTS.items()]
    entries = []
    for pid, t in TEXTS.items():
        for s in range(per_prompt):
            img = ImageRecord(f"{pid}-s{s}", str(tmp_path / f"{pid}-{s}.jpg"), 8, 8, "color", pid, s)
            entries.append(FakeEntry(img, str(tmp_path / "m.dmap"), t))
    save_fake_dataset(tmp_path / "fake.json", entries, "A")
    write_json(tmp_path / "val.json", {"kind": "images", "images": []})
    return bag, entries


def run(tmp_path, trainer_spec, scope=MANUAL_ONLY, **kw):
    bag, entries = make_inputs(tmp_path)
    with Backend(mock_endpoint("trainer", trainer_spec)) as trainer:
        return bag, entries, filter_prompts(
            bag, entries, ["r0", "r1"], tmp_path / "val.json", trainer, tmp_path / "work",
            r_mix=2, epochs=3, base_seed=1, fake_dataset_path=tmp_path / "fake.json", scope=scope, **kw)


def test_mecca_discarded_others_kept(tmp_path):
    bag, entries, res = run(tmp_path, {"base": 10.0, "rules": RULES})
    assert res.base_mae == 10.0
    assert res.maes == {"p00001": 12.0, "p00002": 8.9, "p00003": 10.0}
    status = {p.prompt_id: p.status for p in res.bag}
    assert status == {"p00000": ACTIVE, "p00001": DISCARDED_BY_PROMPT_FILTER, "p00002": ACTIVE, "p00003": ACTIVE}
    # atomicity: kept entries are exactly those of surviving prompts
    assert {e.id for e in res.entries} == {e.id for e in entries if e.prompt_id != "p00001"}


def test_scope_all_evaluates_auto_prompts(tmp_path):
    _, _, res = run(tmp_path, {"base": 10.0, "rules": RULES}, scope=ALL)
    assert set(res.maes) == {"p00000", "p00001", "p00002", "p00003"}


def test_constant_trainer_keeps_everything(tmp_path):
    bag, entries, res = run(tmp_path, {"base": 7.5})
    assert all(p.status == ACTIVE for p in res.bag)
    assert res.entries == entries


def test_cache_is_reused(tmp_path):
    log = tmp_path / "log.txt"
    spec = {"base": 10.0, "rules": RULES, "log": str(log)}
    run(tmp_path, spec, cache_key="k")
    n = len(log.read_text().splitlines())
    run(tmp_path, spec, cache_key="k")
    assert len(log.read_text().splitlines()) == n


def test_unknown_scope(tmp_path):
    with pytest.raises(ConfigError):
        run(tmp_path, {}, scope="some")
