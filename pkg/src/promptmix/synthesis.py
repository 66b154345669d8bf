"""Image generation: seeded job planning, dataset quality factor and
checkpointed generation with JPEG recompression."""

from __future__ import annotations

import logging
import os
import threading
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path

from PIL import Image

from .backends import BackendPool, invoke_generate
from .core import ACTIVE, COLOR, GRAYSCALE, ImageRecord, generated_id, read_json, write_json
from .errors import BackendError, ConfigError
from .jpegqf import estimate_jpeg_qf, is_jpeg
from .seeds import generation_seed

log = logging.getLogger(__name__)

SUBSAMPLING = {"4:4:4": 0, "4:2:2": 1, "4:2:0": 2}


@dataclass(frozen=True)
class GenerationJob:
    prompt_id: str
    prompt_index: int
    prompt: str
    g: int
    seed: int
    width: int
    height: int

    @property
    def key(self) -> str:
        return generated_id(self.prompt_id, self.seed)


def plan_generation(bag, real_by_id: dict, k: int, base_seed: int, manual_size=None) -> list[GenerationJob]:
    """k jobs per active prompt. Auto prompts take the size of their source
    image, manual prompts ``manual_size`` (width, height)."""
    if k < 1:
        raise ConfigError("k must be >= 1", "pipeline.k")
    jobs = []
    for index, p in enumerate(bag):
        if p.status != ACTIVE:
            continue
        if p.manual:
            if not manual_size:
                raise ConfigError(f"manual prompt {p.prompt_id} needs prompts.manual_size", "prompts.manual_size")
            width, height = manual_size
        else:
            src = real_by_id.get(p.source_image_id)
            if src is None:
                raise ConfigError(f"prompt {p.prompt_id}: unknown source image {p.source_image_id}")
            width, height = src.width, src.height
        for g in range(1, k + 1):
            jobs.append(GenerationJob(p.prompt_id, index, p.effective_text, g,
                                      generation_seed(base_seed, index, g), int(width), int(height)))
    return jobs


def round_half_up(x: Fraction) -> int:
    return int((x + Fraction(1, 2)).__floor__())


def dataset_qf(real_images, policy: dict) -> int:
    """Quality factor for recompression: ``{"policy": "fixed", "q": n}`` or
    ``{"policy": "dataset_average"}`` (round-half-up mean over JPEG files)."""
    kind = policy.get("policy")
    if kind == "fixed":
        q = int(policy["q"])
        if not 1 <= q <= 100:
            raise ConfigError(f"fixed quality {q} outside [1, 100]", "pipeline.jpeg_qf.q")
        return q
    if kind != "dataset_average":
        raise ConfigError(f"unknown policy {kind!r}", "pipeline.jpeg_qf.policy")
    estimates = [estimate_jpeg_qf(r.path) for r in real_images if is_jpeg(r.path)]
    return average_qf(estimates)


def average_qf(estimates) -> int:
    if not estimates:
        raise ConfigError("dataset_average needs at least one JPEG image", "pipeline.jpeg_qf.policy")
    return round_half_up(Fraction(sum(estimates), len(estimates)))


class Checkpoint:
    """Completed and failed job keys, rewritten atomically on every update."""

    def __init__(self, path, lineage: str = ""):
        self.path = Path(path)
        self.lineage = lineage
        self.completed = set()
        self.failed = {}
        self._lock = threading.Lock()

    @classmethod
    def load(cls, path, lineage: str = "") -> "Checkpoint":
        cp = cls(path, lineage)
        if cp.path.exists():
            doc = read_json(cp.path)
            if lineage and doc.get("lineage") not in ("", lineage):
                raise ConfigError(f"{path} was written under a different configuration; rerun without --resume")
            cp.completed = set(doc.get("completed", []))
        return cp

    def _flush(self):
        write_json(self.path, {"lineage": self.lineage, "completed": sorted(self.completed),
                               "failed": dict(sorted(self.failed.items()))})

    def done(self, key: str):
        with self._lock:
            self.completed.add(key)
            self.failed.pop(key, None)
            self._flush()

    def fail(self, key: str, message: str):
        with self._lock:
            self.failed[key] = message
            self._flush()


def recompress(src, dest, quality: int, subsampling: str = "4:2:0") -> str:
    """Re-encode ``src`` as baseline JPEG at ``quality``; returns the color mode."""
    with Image.open(src) as im:
        im.load()
        gray = im.mode in ("1", "L", "LA", "I", "I;16", "F")
        im = im.convert("L" if gray else "RGB")
    tmp = str(dest) + ".part"
    im.save(tmp, format="JPEG", quality=int(quality), subsampling=SUBSAMPLING[subsampling], optimize=False)
    os.replace(tmp, dest)
    return GRAYSCALE if gray else COLOR


class GenerationIncomplete(BackendError):
    pass


def run_generation(jobs, generator: BackendPool, qf: int, out_dir, checkpoint: Checkpoint | None = None,
                   subsampling: str = "4:2:0", options: dict | None = None) -> list[ImageRecord]:
    """Run every job, recompress at ``qf`` and return records in job order.

    Jobs already in ``checkpoint`` whose image exists are not re-run. Any job
    still failing at the end raises GenerationIncomplete after all other
    jobs have been attempted and checkpointed.
    """
    if subsampling not in SUBSAMPLING:
        raise ConfigError(f"unknown chroma subsampling {subsampling!r}", "pipeline.chroma_subsampling")
    out_dir = Path(out_dir)
    image_dir = out_dir / "images"
    raw_dir = out_dir / "raw"
    image_dir.mkdir(parents=True, exist_ok=True)
    checkpoint = checkpoint or Checkpoint(out_dir / "checkpoint.json")
    # leftovers of an interrupted run
    for d in (raw_dir, image_dir):
        if d.exists():
            for stale in list(d.glob("*.part")) + list(d.glob(".*.tmp")):
                stale.unlink()

    def run(backend, job):
        dest = image_dir / f"{job.key}.jpg"
        if job.key in checkpoint.completed and dest.exists():
            with Image.open(dest) as im:
                mode = GRAYSCALE if im.mode == "L" else COLOR
            return ImageRecord(job.key, str(dest), job.width, job.height, mode, job.prompt_id, job.seed)
        try:
            raw = invoke_generate(backend, job.prompt, job.width, job.height, job.seed,
                                  raw_dir / f"{job.key}.img", prompt_id=job.prompt_id, options=options)
            mode = recompress(raw.path, dest, qf, subsampling)
            os.unlink(raw.path)
        except BackendError as exc:
            log.error("generation job %s failed: %s", job.key, exc)
            checkpoint.fail(job.key, str(exc))
            return None
        checkpoint.done(job.key)
        return ImageRecord(job.key, str(dest), job.width, job.height, mode, job.prompt_id, job.seed)

    records = generator.map(run, jobs)
    if raw_dir.exists() and not any(raw_dir.iterdir()):
        raw_dir.rmdir()
    failed = [j.key for j, r in zip(jobs, records) if r is None]
    if failed:
        raise GenerationIncomplete(f"{len(failed)} generation job(s) failed: {failed[:5]}", "worker")
    return records
