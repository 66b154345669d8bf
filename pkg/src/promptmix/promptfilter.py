"""Per-prompt validation runs: discard prompts whose images alone make the
lightweight model worse than training on real data only."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

from .backends import Backend, invoke_train_eval
from .core import ACTIVE, DISCARDED_BY_PROMPT_FILTER, read_json, write_json
from .errors import ConfigError
from .mixer import emit_epoch_manifests

log = logging.getLogger(__name__)

MANUAL_ONLY = "manual-only"
ALL = "all"
BASE_KEY = "__base__"


@dataclass
class PromptFilterResult:
    bag: list
    entries: list
    base_mae: float
    maes: dict = field(default_factory=dict)  # prompt_id -> validation MAE


class _Cache:
    """Validation MAEs keyed by configuration digest, persisted after every run."""

    def __init__(self, path, key: str):
        self.path = Path(path)
        self.key = key
        self.doc = read_json(self.path) if self.path.exists() else {}

    def get(self, name):
        return self.doc.get(self.key, {}).get(name)

    def put(self, name, value: float):
        self.doc.setdefault(self.key, {})[name] = value
        write_json(self.path, self.doc)


def filter_prompts(bag, entries, real_ids, val_manifest, trainer: Backend, workdir, *, r_mix: int,
                   epochs: int, base_seed: int, fake_dataset_path, real_manifest_path=None,
                   scope: str = MANUAL_ONLY, cache_key: str = "") -> PromptFilterResult:
    """Evaluate each in-scope active prompt alone and discard it when its
    validation MAE is strictly above the real-only baseline.

    Every run uses the same seed and epoch count; a prompt's run samples
    min(r_mix, its image count) fake images per epoch.
    """
    if scope not in (MANUAL_ONLY, ALL):
        raise ConfigError(f"unknown scope {scope!r}", "prompt_filter.scope")
    workdir = Path(workdir)
    sources = {"fake_dataset": str(fake_dataset_path)}
    if real_manifest_path is not None:
        sources["real_manifest"] = str(real_manifest_path)
    cache = _Cache(workdir / "cache.json", cache_key)

    def evaluate(name, fake_ids, rmix):
        cached = cache.get(name)
        if cached is not None:
            return cached
        paths = emit_epoch_manifests(fake_ids, real_ids, workdir / "runs" / name, rmix, epochs,
                                     base_seed, sources)
        mae = invoke_train_eval(trainer, paths, val_manifest)
        cache.put(name, mae)
        return mae

    base = evaluate(BASE_KEY, [], 0)
    by_prompt = {}
    for e in entries:
        by_prompt.setdefault(e.prompt_id, []).append(e.id)

    maes = {}
    discarded = set()
    for p in bag:
        if p.status != ACTIVE or (scope == MANUAL_ONLY and not p.manual):
            continue
        ids = by_prompt.get(p.prompt_id, [])
        if not ids:
            log.info("prompt %s has no surviving images; not evaluated", p.prompt_id)
            continue
        maes[p.prompt_id] = evaluate(p.prompt_id, ids, min(r_mix, len(ids)))
        if maes[p.prompt_id] > base:
            discarded.add(p.prompt_id)

    new_bag = [p.evolve(status=DISCARDED_BY_PROMPT_FILTER) if p.prompt_id in discarded else p for p in bag]
    kept = [e for e in entries if e.prompt_id not in discarded]
    return PromptFilterResult(new_bag, kept, base, maes)
