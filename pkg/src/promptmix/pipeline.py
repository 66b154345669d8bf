"""Stage runners. Each stage reads only the declared artifacts of earlier
stages under ``out/<stage>/`` and writes its own artifacts plus a
``report.json``.

Every report carries a lineage digest: the hash of the config fields the
stage depends on together with the lineage of its upstream stage. A stage
refuses to consume artifacts whose lineage does not match the current
configuration.
"""

from __future__ import annotations

import hashlib
import logging
import os
import shutil
import time
from pathlib import Path

import numpy as np

from . import annotate as ann
from .backends import Backend, BackendPool, invoke_caption, invoke_generate, invoke_train_eval
from .config import Config
from .core import (
    ACTIVE, digest, load_image_manifest, load_prompt_bag, read_dense_map, read_json,
    save_image_manifest, save_prompt_bag, write_json,
)
from .errors import ConfigError
from .metrics import counting_errors, depth_errors
from .mixer import build_fake_dataset, emit_epoch_manifests, load_fake_dataset, load_run, save_fake_dataset
from .promptfilter import filter_prompts
from .prompts import (
    ModifyRules, extract_prompts, manual_prompts, merge_prompt_bags, modify_all, review_prompts,
    word_edit_distance,
)
from .seeds import generation_seed
from .synthesis import Checkpoint, dataset_qf, plan_generation, run_generation

log = logging.getLogger(__name__)

STAGES = ("prompts-extract", "prompts-modify", "prompts-review", "generate", "annotate",
          "filter-images", "build-fake", "filter-prompts", "mix", "eval")
UPSTREAM = {s: (STAGES[i - 1] if i else None) for i, s in enumerate(STAGES)}
DIGEST_EXCLUDE = {"report.json", "checkpoint.json"}


def _file_hash(path) -> str | None:
    if path is None or not os.path.isfile(path):
        return None
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


def stage_inputs(cfg: Config, stage: str) -> dict:
    """Configuration fields (and input file hashes) a stage depends on."""
    g, p, pr = cfg.get, cfg.pipeline, cfg.data["prompts"]
    if stage == "prompts-extract":
        d = {"real_manifest": g("dataset.real_manifest"),
             "real_manifest_sha": _file_hash(cfg.path("dataset.real_manifest")),
             "auto": pr["auto"], "manual": pr["manual"]}
        if pr["auto"]:
            d["captioner"] = g("backends.captioner")
        return d
    if stage == "prompts-modify":
        return {k: pr[k] for k in ("prefix", "color_suffix", "grayscale_epsilon")}
    if stage == "prompts-review":
        return {"decisions": pr["decisions"], "decisions_sha": _file_hash(cfg.path("prompts.decisions"))}
    if stage == "generate":
        return {"k": p["k"], "base_seed": p["base_seed"], "jpeg_qf": p["jpeg_qf"],
                "chroma_subsampling": p["chroma_subsampling"], "face_restoration": p["face_restoration"],
                "manual_size": pr["manual_size"], "generator": g("backends.generator")}
    if stage == "annotate":
        return {"annotators": g("backends.annotators")}
    if stage == "filter-images":
        return {"r_img": p["r_img"], "distance_kind": p["distance_kind"]}
    if stage == "build-fake":
        return {"selected": cfg.selected_annotator, "aggregation": p["aggregation"]}
    if stage == "filter-prompts":
        pf = cfg.data["prompt_filter"]
        if not pf["enabled"]:
            return {"enabled": False}
        return {"prompt_filter": pf, "r_mix": p["r_mix"], "epochs": p["epochs"], "base_seed": p["base_seed"],
                "trainer": g("backends.trainer"), "val_manifest": g("dataset.val_manifest"),
                "val_manifest_sha": _file_hash(cfg.path("dataset.val_manifest"))}
    if stage == "mix":
        return {"r_mix": p["r_mix"], "epochs": p["epochs"], "base_seed": p["base_seed"]}
    if stage == "eval":
        return {"trainer": g("backends.trainer"), "val_manifest": g("dataset.val_manifest"),
                "val_manifest_sha": _file_hash(cfg.path("dataset.val_manifest")), "eval": cfg.data["eval"]}
    if stage == "check-encoders":
        return {"generator": g("backends.generator"), "captioner": g("backends.captioner"),
                "base_seed": p["base_seed"]}
    raise ConfigError(f"unknown stage {stage!r}")


def lineage(cfg: Config, stage: str) -> str:
    up = UPSTREAM.get(stage)
    if stage == "check-encoders":
        up = "prompts-review"
    return digest({"stage": stage, "inputs": stage_inputs(cfg, stage),
                   "upstream": lineage(cfg, up) if up else None})


def config_digest(cfg: Config) -> str:
    data = dict(cfg.data)
    data.pop("workers", None)
    return digest(data)


def tree_digest(root) -> str:
    """sha256 over (relative path, file sha256) of every artifact, ignoring
    stage reports and checkpoints."""
    root = Path(root)
    h = hashlib.sha256()
    for path in sorted(p for p in root.rglob("*") if p.is_file()):
        if path.name in DIGEST_EXCLUDE or path.name.endswith(".tmp"):
            continue
        rel = path.relative_to(root).as_posix()
        h.update(rel.encode("utf-8") + b"\0" + _file_hash(path).encode("ascii") + b"\n")
    return h.hexdigest()


class Run:
    """Output tree plus configuration shared by all stages of one invocation."""

    def __init__(self, cfg: Config, out, workers: int | None = None, resume: bool = False):
        self.cfg = cfg
        self.out = Path(out).resolve()
        self.workers = workers or cfg.data["workers"]
        self.resume = resume

    def dir(self, stage: str) -> Path:
        return self.out / stage

    def require(self, stage: str) -> Path:
        """Directory of a finished upstream stage with matching lineage."""
        report = self.dir(stage) / "report.json"
        if not report.exists():
            raise ConfigError(f"stage {stage} has not been run in {self.out}")
        found = read_json(report).get("lineage")
        if found != lineage(self.cfg, stage):
            raise ConfigError(f"artifacts of stage {stage} were produced under a different configuration; "
                              f"rerun {stage}")
        return self.dir(stage)

    def start(self, stage: str) -> Path:
        d = self.dir(stage)
        if d.exists() and not self.resume:
            shutil.rmtree(d)
        d.mkdir(parents=True, exist_ok=True)
        stale = d / "report.json"
        if stale.exists():
            stale.unlink()
        return d

    def finish(self, stage: str, started: float, counts: dict) -> dict:
        report = {
            "stage": stage,
            "lineage": lineage(self.cfg, stage),
            "config_digest": config_digest(self.cfg),
            "duration_s": round(time.monotonic() - started, 6),
            "counts": counts,
        }
        write_json(self.dir(stage) / "report.json", report)
        return report

    def pool(self, endpoint) -> BackendPool:
        return BackendPool(endpoint, self.workers)

    def real_images(self):
        path = self.cfg.path("dataset.real_manifest")
        if path is None:
            raise ConfigError("no real manifest configured", "dataset.real_manifest")
        if not os.path.isfile(path):
            raise ConfigError(f"{path} does not exist", "dataset.real_manifest")
        return load_image_manifest(path)

    def val_manifest(self) -> str:
        path = self.cfg.path("dataset.val_manifest")
        if path is None or not os.path.isfile(path):
            raise ConfigError(f"validation manifest {path} does not exist", "dataset.val_manifest")
        return path


# ---------------------------------------------------------------------------
# stages


def stage_prompts_extract(run: Run) -> dict:
    t0 = time.monotonic()
    d = run.start("prompts-extract")
    cfg = run.cfg
    real = run.real_images()
    auto = []
    if cfg.data["prompts"]["auto"]:
        with run.pool(cfg.endpoint("captioner")) as pool:
            auto = extract_prompts(real, pool)
    manual = manual_prompts(cfg.data["prompts"]["manual"])
    bag = merge_prompt_bags(auto, manual)
    save_prompt_bag(d / "prompts.json", bag)
    return run.finish("prompts-extract", t0, {"auto": len(auto), "manual": len(manual), "total": len(bag)})


def stage_prompts_modify(run: Run) -> dict:
    t0 = time.monotonic()
    bag = load_prompt_bag(run.require("prompts-extract") / "prompts.json")
    d = run.start("prompts-modify")
    pr = run.cfg.data["prompts"]
    rules = ModifyRules(pr["prefix"], bool(pr["color_suffix"]), int(pr["grayscale_epsilon"]))
    real_by_id = {r.id: r for r in run.real_images()}
    bag = modify_all(bag, real_by_id, rules)
    save_prompt_bag(d / "prompts.json", bag)
    return run.finish("prompts-modify", t0, {"prompts": len(bag)})


def stage_prompts_review(run: Run) -> dict:
    t0 = time.monotonic()
    bag = load_prompt_bag(run.require("prompts-modify") / "prompts.json")
    d = run.start("prompts-review")
    path = run.cfg.path("prompts.decisions")
    text = ""
    if path is not None:
        if not os.path.isfile(path):
            raise ConfigError(f"{path} does not exist", "prompts.decisions")
        text = Path(path).read_text(encoding="utf-8")
    bag = review_prompts(bag, text)
    save_prompt_bag(d / "prompts.json", bag)
    active = sum(p.status == ACTIVE for p in bag)
    return run.finish("prompts-review", t0, {"active": active, "discarded": len(bag) - active})


def stage_generate(run: Run) -> dict:
    t0 = time.monotonic()
    bag = load_prompt_bag(run.require("prompts-review") / "prompts.json")
    cfg = run.cfg
    endpoint = cfg.endpoint("generator")
    d = run.start("generate")
    p = cfg.pipeline
    real = run.real_images()
    jobs = plan_generation(bag, {r.id: r for r in real}, p["k"], p["base_seed"], cfg.data["prompts"]["manual_size"])
    qf = dataset_qf(real, p["jpeg_qf"])
    checkpoint = Checkpoint.load(d / "checkpoint.json", lineage(cfg, "generate"))
    options = {"face_restoration": True} if p["face_restoration"] else None
    with run.pool(endpoint) as pool:
        records = run_generation(jobs, pool, qf, d, checkpoint, p["chroma_subsampling"], options)
    save_image_manifest(d / "fake_manifest.json", records, {"qf": qf})
    return run.finish("generate", t0, {"jobs": len(jobs), "images": len(records), "qf": qf})


def stage_annotate(run: Run) -> dict:
    t0 = time.monotonic()
    images = load_image_manifest(run.require("generate") / "fake_manifest.json")
    cfg = run.cfg
    endpoints = cfg.annotator_endpoints()
    d = run.start("annotate")
    checkpoint = Checkpoint.load(d / "checkpoint.json", lineage(cfg, "annotate"))
    pools = {ep.annotator_id: run.pool(ep) for ep in endpoints}
    try:
        index = ann.annotate_all(images, pools, d, checkpoint)
    finally:
        for pool in pools.values():
            pool.close()
    ann.save_annotation_index(d / "annotations.json", index, list(pools))
    return run.finish("annotate", t0, {"images": len(images), "annotators": len(pools)})


def stage_filter_images(run: Run) -> dict:
    t0 = time.monotonic()
    images = load_image_manifest(run.require("generate") / "fake_manifest.json")
    index = ann.load_annotation_index(run.require("annotate") / "annotations.json")
    d = run.start("filter-images")
    p = run.cfg.pipeline
    scores = None
    if run.cfg.l >= 2:
        scores = {img.id: ann.quality_score(ann.load_annotation_set(img.id, index[img.id]), p["distance_kind"])
                  for img in images}
        write_json(d / "scores.json", scores)
    kept = ann.filter_images(images, scores, p["r_img"])
    save_image_manifest(d / "filtered_manifest.json", kept)
    return run.finish("filter-images", t0, {"images": len(images), "kept": len(kept)})


def stage_build_fake(run: Run) -> dict:
    t0 = time.monotonic()
    kept = load_image_manifest(run.require("filter-images") / "filtered_manifest.json")
    index = ann.load_annotation_index(run.require("annotate") / "annotations.json")
    bag = load_prompt_bag(run.require("prompts-review") / "prompts.json")
    d = run.start("build-fake")
    p = run.cfg.pipeline
    texts = {q.prompt_id: q.effective_text for q in bag}
    entries = build_fake_dataset(kept, index, run.cfg.selected_annotator, p["aggregation"], texts, d)
    label = run.cfg.selected_annotator if p["aggregation"] == "select" else "mean"
    save_fake_dataset(d / "fake_dataset.json", entries, label)
    return run.finish("build-fake", t0, {"entries": len(entries)})


def stage_filter_prompts(run: Run) -> dict:
    t0 = time.monotonic()
    src = run.require("build-fake") / "fake_dataset.json"
    entries = load_fake_dataset(src)
    bag = load_prompt_bag(run.require("prompts-review") / "prompts.json")
    cfg = run.cfg
    label = read_json(src).get("annotator", "")
    pf = cfg.data["prompt_filter"]
    if not pf["enabled"]:
        d = run.start("filter-prompts")
        save_prompt_bag(d / "prompts.json", bag)
        save_fake_dataset(d / "fake_dataset.json", entries, label)
        return run.finish("filter-prompts", t0, {"enabled": False, "entries": len(entries)})
    trainer_ep = cfg.endpoint("trainer")
    val = run.val_manifest()
    real_path = cfg.path("dataset.real_manifest")
    real_ids = [r.id for r in run.real_images()]
    # per-prompt results survive restarts, so keep the cache even without --resume
    d = run.dir("filter-prompts")
    cache = d / "cache.json"
    keep = cache.read_bytes() if cache.exists() else None
    d = run.start("filter-prompts")
    if keep is not None:
        cache.write_bytes(keep)
    p = cfg.pipeline
    with Backend(trainer_ep) as trainer:
        result = filter_prompts(bag, entries, real_ids, val, trainer, d, r_mix=p["r_mix"], epochs=p["epochs"],
                                base_seed=p["base_seed"], fake_dataset_path=src, real_manifest_path=real_path,
                                scope=pf["scope"], cache_key=lineage(cfg, "filter-prompts"))
    save_prompt_bag(d / "prompts.json", result.bag)
    write_json(d / "results.json", result.maes)
    save_fake_dataset(d / "fake_dataset.json", result.entries, label)
    discarded = sorted(set(result.maes) - {e.prompt_id for e in result.entries})
    return run.finish("filter-prompts", t0, {"enabled": True, "base_mae": result.base_mae,
                                             "evaluated": len(result.maes), "discarded": discarded,
                                             "entries": len(result.entries)})


def stage_mix(run: Run) -> dict:
    t0 = time.monotonic()
    src = run.require("filter-prompts") / "fake_dataset.json"
    entries = load_fake_dataset(src)
    real = run.real_images()
    d = run.start("mix")
    p = run.cfg.pipeline
    sources = {"fake_dataset": str(src), "real_manifest": run.cfg.path("dataset.real_manifest")}
    paths = emit_epoch_manifests([e.id for e in entries], [r.id for r in real], d, p["r_mix"], p["epochs"],
                                 p["base_seed"], sources)
    per_epoch = min(p["r_mix"], len(entries))
    return run.finish("mix", t0, {"epochs": len(paths), "real": len(real), "fake_per_epoch": per_epoch})


def _paired_maps(pred_dir, gt_dir):
    names = sorted(n for n in os.listdir(gt_dir) if n.endswith(".dmap"))
    missing = [n for n in names if not os.path.isfile(os.path.join(pred_dir, n))]
    if missing:
        raise ConfigError(f"predictions missing for {missing[:5]}", "eval.predictions")
    return [(read_dense_map(os.path.join(pred_dir, n)), read_dense_map(os.path.join(gt_dir, n))) for n in names]


def evaluate_maps(pred_dir, gt_dir, task: str = "counting", mse_mode: str = "mse") -> dict:
    pairs = _paired_maps(pred_dir, gt_dir)
    if task == "counting":
        mae, mse = counting_errors([a for a, _ in pairs], [b for _, b in pairs], mse_mode)
        return {"n": len(pairs), "mae": mae, "mse": mse, "mse_mode": mse_mode}
    if task == "depth":
        rows = np.array([depth_errors(a, b) for a, b in pairs])
        rmse, d1, d2, d3 = rows.mean(axis=0)
        return {"n": len(pairs), "rmse": float(rmse), "delta1": float(d1), "delta2": float(d2), "delta3": float(d3)}
    raise ConfigError(f"unknown task {task!r}", "eval.task")


def stage_eval(run: Run) -> dict:
    t0 = time.monotonic()
    cfg = run.cfg
    ev = cfg.data["eval"]
    has_trainer = bool(cfg.get("backends.trainer"))
    has_maps = ev["predictions"] is not None and ev["ground_truth"] is not None
    if not has_trainer and not has_maps:
        raise ConfigError("eval needs a trainer endpoint or eval.predictions and eval.ground_truth", "eval")
    result = {}
    if has_trainer:
        epochs = load_run(run.require("mix") / "run.json")
        val = run.val_manifest()
        d = run.start("eval")
        with Backend(cfg.endpoint("trainer")) as trainer:
            result["val_mae"] = invoke_train_eval(trainer, epochs, val)
    else:
        d = run.start("eval")
    if has_maps:
        result["metrics"] = evaluate_maps(cfg.path("eval.predictions"), cfg.path("eval.ground_truth"),
                                          ev["task"], ev["mse_mode"])
    write_json(d / "result.json", result)
    return run.finish("eval", t0, result)


def stage_check_encoders(run: Run) -> dict:
    """Generate one image per active prompt, caption it back and record the
    word edit distance to the prompt. Diagnostic only."""
    t0 = time.monotonic()
    bag = load_prompt_bag(run.require("prompts-review") / "prompts.json")
    cfg = run.cfg
    gen_ep, cap_ep = cfg.endpoint("generator"), cfg.endpoint("captioner")
    d = run.start("check-encoders")
    real_by_id = {r.id: r for r in run.real_images()}
    rows = []
    with Backend(gen_ep) as gen, Backend(cap_ep) as cap:
        for i, p in enumerate(bag):
            if p.status != ACTIVE:
                continue
            if p.manual:
                w, h = cfg.data["prompts"]["manual_size"] or (512, 512)
            else:
                src = real_by_id[p.source_image_id]
                w, h = src.width, src.height
            seed = generation_seed(cfg.pipeline["base_seed"], i, 1)
            img = invoke_generate(gen, p.effective_text, w, h, seed, d / "images" / f"{p.prompt_id}.png", p.prompt_id)
            caption = invoke_caption(cap, img)
            rows.append({"prompt_id": p.prompt_id, "prompt": p.effective_text, "caption": caption,
                         "word_edit_distance": word_edit_distance(p.effective_text, caption)})
    write_json(d / "results.json", rows)
    worst = max((r["word_edit_distance"] for r in rows), default=0)
    return run.finish("check-encoders", t0, {"prompts": len(rows), "max_word_edit_distance": worst})


STAGE_FUNCS = {
    "prompts-extract": stage_prompts_extract,
    "prompts-modify": stage_prompts_modify,
    "prompts-review": stage_prompts_review,
    "generate": stage_generate,
    "annotate": stage_annotate,
    "filter-images": stage_filter_images,
    "build-fake": stage_build_fake,
    "filter-prompts": stage_filter_prompts,
    "mix": stage_mix,
    "eval": stage_eval,
    "check-encoders": stage_check_encoders,
}


def run_all(run: Run) -> list[dict]:
    reports = []
    cfg = run.cfg
    for stage in STAGES:
        if stage == "eval" and not cfg.get("backends.trainer") and cfg.get("eval.predictions") is None:
            continue
        if run.resume and _finished(run, stage):
            reports.append(read_json(run.dir(stage) / "report.json"))
            continue
        reports.append(STAGE_FUNCS[stage](run))
    return reports


def _finished(run: Run, stage: str) -> bool:
    report = run.dir(stage) / "report.json"
    return report.exists() and read_json(report).get("lineage") == lineage(run.cfg, stage)
