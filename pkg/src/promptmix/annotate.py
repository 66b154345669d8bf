"""Multi-annotator labelling of generated images and disagreement-based
image filtering."""

from __future__ import annotations

import logging
import math
from fractions import Fraction
from itertools import combinations
from pathlib import Path

import numpy as np

from .backends import BackendPool, invoke_annotate
from .core import AnnotationSet, DenseMap, read_dense_map, read_json, relpath, resolve, write_json
from .errors import BackendError, ContractError, FormatError
from .synthesis import Checkpoint

log = logging.getLogger(__name__)

COUNT_SUM = "count_sum"
PIXEL_MAE = "pixel_mae"
DISTANCE_KINDS = (COUNT_SUM, PIXEL_MAE)


def annotate_all(images, annotators: dict[str, BackendPool], out_dir, checkpoint: Checkpoint | None = None):
    """Label every image with every annotator.

    Returns ``{image_id: [(annotator_id, dmap_path), ...]}`` in declared
    annotator order; maps are written to ``out_dir/maps/<image_id>/``.
    """
    out_dir = Path(out_dir)
    checkpoint = checkpoint or Checkpoint(out_dir / "checkpoint.json")
    images = list(images)
    index = {img.id: [] for img in images}
    failed = []
    for annotator_id, pool in annotators.items():
        def run(backend, image, annotator_id=annotator_id):
            dest = out_dir / "maps" / image.id / f"{annotator_id}.dmap"
            key = f"{image.id}/{annotator_id}"
            if key in checkpoint.completed and dest.exists():
                return str(dest)
            try:
                invoke_annotate(backend, image, dest)
            except (BackendError, FormatError) as exc:
                msg = f"annotator {annotator_id} on image {image.id}: {exc}"
                log.error(msg)
                checkpoint.fail(key, msg)
                if dest.exists():
                    dest.unlink()
                return BackendError(msg, getattr(exc, "cause", "reply"))
            checkpoint.done(key)
            return str(dest)

        for image, result in zip(images, pool.map(run, images)):
            if isinstance(result, BackendError):
                failed.append(result)
            else:
                index[image.id].append((annotator_id, result))
    if failed:
        raise BackendError(f"{len(failed)} annotation(s) failed; first: {failed[0]}", failed[0].cause)
    return index


def save_annotation_index(path, index: dict, annotator_ids) -> None:
    base = Path(path).parent
    write_json(path, {
        "kind": "annotations",
        "annotators": list(annotator_ids),
        "sets": {iid: [[a, relpath(p, base)] for a, p in entries] for iid, entries in index.items()},
    })


def load_annotation_index(path) -> dict:
    doc = read_json(path)
    if doc.get("kind") != "annotations":
        raise FormatError(f"{path}: not an annotation index")
    base = Path(path).parent
    return {iid: [(a, resolve(p, base)) for a, p in entries] for iid, entries in doc["sets"].items()}


def load_annotation_set(image_id: str, entries) -> AnnotationSet:
    return AnnotationSet(image_id, tuple((a, read_dense_map(p)) for a, p in entries))


def distance(a: DenseMap, b: DenseMap | None, kind: str = COUNT_SUM) -> float:
    """Distance between two maps; ``b=None`` stands for the all-zero map."""
    if b is not None and a.shape != b.shape:
        raise ContractError(f"shape mismatch {a.shape} vs {b.shape}")
    if kind == COUNT_SUM:
        tb = 0.0 if b is None else b.total()
        return abs(a.total() - tb)
    if kind == PIXEL_MAE:
        av = a.values
        if b is None:
            return float(np.mean(np.abs(av)))
        return float(np.mean(np.abs(av - b.values)))
    raise ContractError(f"unknown distance kind {kind!r}")


def quality_score(annotations, kind: str = COUNT_SUM) -> float:
    """Largest pairwise annotator distance over the largest distance to the
    zero map. Lower means the annotators agree more. Defined as 0 when every
    annotation is zero."""
    maps = annotations.maps if isinstance(annotations, AnnotationSet) else list(annotations)
    if len(maps) < 2:
        raise ContractError(f"quality score needs at least 2 annotations, got {len(maps)}")
    numerator = max(distance(a, b, kind) for a, b in combinations(maps, 2))
    denominator = max(distance(m, None, kind) for m in maps)
    if denominator == 0:
        if numerator != 0 or kind != COUNT_SUM:
            image_id = getattr(annotations, "image_id", "?")
            log.warning("image %s: zero denominator for %s score (numerator %g); score set to 0",
                        image_id, kind, numerator)
        return 0.0
    return numerator / denominator


def keep_count(r_img, n: int) -> int:
    """ceil(r_img / 100 * n), computed exactly."""
    r = Fraction(str(r_img)) if isinstance(r_img, float) else Fraction(r_img)
    if not 0 < r <= 100:
        raise ContractError(f"r_img must be in (0, 100], got {r_img}")
    return math.ceil(r * n / 100)


def filter_images(images, scores: dict | None, r_img) -> list:
    """Keep the ``keep_count(r_img, n)`` lowest-scoring images, ordered by
    (score, prompt_id, seed). ``r_img == 100`` without scores is the identity."""
    images = list(images)
    n_keep = keep_count(r_img, len(images))
    if not scores and n_keep == len(images):
        return images
    missing = [img.id for img in images if img.id not in (scores or {})]
    if missing:
        raise ContractError(f"no quality score for images {missing[:5]}")
    ranked = sorted(images, key=lambda im: (scores[im.id], im.prompt_id or "", im.seed or 0, im.id))
    return ranked[:n_keep]
