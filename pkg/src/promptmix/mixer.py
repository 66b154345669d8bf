"""Fake dataset assembly and per-epoch real/fake mixing manifests."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import (
    DenseMap, EpochManifest, ImageRecord, read_dense_map, read_json, relpath, resolve, write_dense_map,
    write_json,
)
from .errors import ConfigError, ContractError, FormatError
from .seeds import MASK64, sample_without_replacement, splitmix64

SELECT = "select"
MEAN = "mean"


@dataclass(frozen=True)
class FakeEntry:
    image: ImageRecord
    annotation: str
    prompt_text: str = ""

    @property
    def id(self) -> str:
        return self.image.id

    @property
    def prompt_id(self) -> str:
        return self.image.prompt_id


def save_fake_dataset(path, entries, annotator: str) -> None:
    base = Path(path).parent
    write_json(path, {
        "kind": "fake_dataset",
        "annotator": annotator,
        "entries": [{"image": e.image.to_dict(base), "annotation": relpath(e.annotation, base),
                     "prompt_id": e.prompt_id, "prompt_text": e.prompt_text} for e in entries],
    })


def load_fake_dataset(path) -> list[FakeEntry]:
    doc = read_json(path)
    if doc.get("kind") != "fake_dataset":
        raise FormatError(f"{path}: not a fake dataset")
    base = Path(path).parent
    return [FakeEntry(ImageRecord.from_dict(e["image"], base), resolve(e["annotation"], base),
                      e.get("prompt_text", "")) for e in doc["entries"]]


def build_fake_dataset(images, annotation_index: dict, selected_annotator_id: str | None,
                       aggregation: str = SELECT, prompt_texts: dict | None = None,
                       out_dir=None) -> list[FakeEntry]:
    """Pair each kept image with one annotation.

    ``select`` uses ``selected_annotator_id``'s map; ``mean`` averages all of
    an image's maps pixel-wise and writes the result under ``out_dir/maps``.
    """
    prompt_texts = prompt_texts or {}
    entries = []
    for img in images:
        refs = annotation_index.get(img.id)
        if refs is None:
            raise ContractError(f"image {img.id} has no annotations")
        if aggregation == SELECT:
            path = dict(refs).get(selected_annotator_id)
            if path is None:
                raise ConfigError(f"annotator {selected_annotator_id!r} missing for image {img.id}",
                                  "pipeline.selected_annotator_id")
        elif aggregation == MEAN:
            if out_dir is None:
                raise ContractError("mean aggregation needs an output directory")
            path = str(Path(out_dir) / "maps" / f"{img.id}.mean.dmap")
            write_dense_map(mean_map([read_dense_map(p) for _, p in refs]), path)
        else:
            raise ConfigError(f"unknown aggregation {aggregation!r}", "pipeline.aggregation")
        entries.append(FakeEntry(img, path, prompt_texts.get(img.prompt_id, "")))
    return entries


def mean_map(maps) -> DenseMap:
    stack = np.stack([m.values for m in maps])
    return DenseMap(stack.mean(axis=0))


def epoch_seed(base_seed: int, t: int) -> int:
    return splitmix64((base_seed ^ t) & MASK64)


def sample_epoch(fake_ids, r_mix: int, base_seed: int, t: int, real_ids=()) -> EpochManifest:
    """Epoch t: all real ids plus min(r_mix, |fake|) fake ids drawn
    uniformly without replacement (listed in fake-dataset order)."""
    if r_mix < 0:
        raise ContractError(f"r_mix must be >= 0, got {r_mix}")
    fake_ids = list(fake_ids)
    picked = sorted(sample_without_replacement(len(fake_ids), r_mix, epoch_seed(base_seed, t)))
    return EpochManifest(t, tuple(real_ids), tuple(fake_ids[i] for i in picked))


def emit_epoch_manifests(fake_ids, real_ids, out_dir, r_mix: int, epochs: int, base_seed: int,
                         sources: dict | None = None) -> list[str]:
    """Write ``epoch_XXXX.json`` for t = 0..epochs-1 plus ``run.json``.

    ``sources`` maps names (``real_manifest``, ``fake_dataset``) to files
    recorded in each manifest so a trainer can resolve ids to images.
    """
    if epochs < 1:
        raise ConfigError("epochs must be >= 1", "pipeline.epochs")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rel_sources = {k: relpath(v, out_dir) for k, v in (sources or {}).items()}
    paths = []
    for t in range(epochs):
        manifest = sample_epoch(fake_ids, r_mix, base_seed, t, real_ids)
        path = out_dir / f"epoch_{t:04d}.json"
        write_json(path, manifest.to_dict(rel_sources))
        paths.append(str(path))
    write_json(out_dir / "run.json", {
        "kind": "run",
        "epochs": [relpath(p, out_dir) for p in paths],
        "sources": rel_sources,
    })
    return paths


def load_run(path) -> list[str]:
    doc = read_json(path)
    base = Path(path).parent
    return [resolve(p, base) for p in doc["epochs"]]
