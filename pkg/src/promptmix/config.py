"""Pipeline configuration: one JSON file plus dotted-path overrides.

Whole-line ``//`` comments are allowed in the file so the bundled
template can document itself. Relative paths are resolved against the
directory of the config file.
"""

from __future__ import annotations

import copy
import json
import os
from pathlib import Path

from .backends import BackendEndpoint
from .errors import ConfigError
from .promptfilter import ALL, MANUAL_ONLY
from .synthesis import SUBSAMPLING

DEFAULTS = {
    "dataset": {"real_manifest": None, "val_manifest": None},
    "pipeline": {
        "k": 10,
        "r_img": 100,
        "r_mix": 500,
        "epochs": 500,
        "base_seed": 0,
        "distance_kind": "count_sum",
        "jpeg_qf": {"policy": "dataset_average"},
        "chroma_subsampling": "4:2:0",
        "selected_annotator_id": None,
        "aggregation": "select",
        "face_restoration": False,
    },
    "prompts": {
        "auto": True,
        "manual": [],
        "prefix": "",
        "color_suffix": True,
        "grayscale_epsilon": 2,
        "manual_size": None,
        "decisions": None,
    },
    "prompt_filter": {"enabled": False, "scope": MANUAL_ONLY},
    "backends": {"captioner": None, "generator": None, "annotators": [], "trainer": None},
    "eval": {"task": "counting", "predictions": None, "ground_truth": None, "mse_mode": "mse"},
    "workers": 1,
}

PATH_FIELDS = ("dataset.real_manifest", "dataset.val_manifest", "prompts.decisions",
               "eval.predictions", "eval.ground_truth")


def _strip_comments(text: str) -> str:
    return "\n".join(line for line in text.splitlines() if not line.lstrip().startswith("//"))


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def parse_override(item: str) -> tuple[str, object]:
    if "=" not in item:
        raise ConfigError(f"override {item!r} is not key=value", "--set")
    key, raw = item.split("=", 1)
    try:
        value = json.loads(raw)
    except ValueError:
        value = raw
    return key.strip(), value


def set_path(data: dict, dotted: str, value) -> None:
    parts = dotted.split(".")
    if parts[0] not in DEFAULTS:
        raise ConfigError(f"unknown config section {parts[0]!r}", dotted)
    node = data
    for part in parts[:-1]:
        nxt = node.get(part)
        if nxt is None:
            nxt = node[part] = {}
        if not isinstance(nxt, dict):
            raise ConfigError(f"{part!r} is not an object", dotted)
        node = nxt
    node[parts[-1]] = value


class Config:
    def __init__(self, data: dict, base_dir="."):
        self.data = _merge(DEFAULTS, data)
        self.base_dir = Path(base_dir).resolve()
        self.validate()

    @classmethod
    def load(cls, path, overrides=()) -> "Config":
        path = Path(path)
        try:
            data = json.loads(_strip_comments(path.read_text(encoding="utf-8")))
        except FileNotFoundError:
            raise ConfigError(f"config file {path} not found", "--config") from None
        except ValueError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})", "--config") from None
        if not isinstance(data, dict):
            raise ConfigError("top level must be an object", "--config")
        data = _merge(DEFAULTS, data)
        for item in overrides:
            set_path(data, *parse_override(item))
        return cls(data, path.parent)

    def get(self, dotted: str, default=None):
        node = self.data
        for part in dotted.split("."):
            if not isinstance(node, dict) or part not in node:
                return default
            node = node[part]
        return node

    def path(self, dotted: str):
        value = self.get(dotted)
        if value is None:
            return None
        return os.path.normpath(os.path.join(self.base_dir, value))

    @property
    def pipeline(self) -> dict:
        return self.data["pipeline"]

    @property
    def annotator_ids(self) -> list[str]:
        return [a.get("id") for a in self.data["backends"]["annotators"]]

    @property
    def l(self) -> int:
        return len(self.data["backends"]["annotators"])

    @property
    def selected_annotator(self) -> str | None:
        sel = self.pipeline.get("selected_annotator_id")
        if sel is None and self.annotator_ids:
            sel = self.annotator_ids[0]
        return sel

    def endpoint(self, role: str) -> BackendEndpoint:
        d = self.data["backends"].get(role)
        if not d:
            raise ConfigError(f"no {role} endpoint configured", f"backends.{role}")
        return self._endpoint(d, role, f"backends.{role}")

    def annotator_endpoints(self) -> list[BackendEndpoint]:
        if not self.data["backends"]["annotators"]:
            raise ConfigError("at least one annotator is required", "backends.annotators")
        return [self._endpoint(d, "annotator", f"backends.annotators[{i}]")
                for i, d in enumerate(self.data["backends"]["annotators"])]

    def _endpoint(self, d, role, field):
        try:
            return BackendEndpoint.from_dict(d, role, self.base_dir)
        except ConfigError as exc:
            raise ConfigError(str(exc), field) from None
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc), field) from None

    def validate(self) -> None:
        p = self.pipeline

        def integer(name, lo):
            v = p.get(name)
            if not isinstance(v, int) or isinstance(v, bool) or v < lo:
                raise ConfigError(f"must be an integer >= {lo}, got {v!r}", f"pipeline.{name}")

        integer("k", 1)
        integer("r_mix", 0)
        integer("epochs", 1)
        integer("base_seed", 0)
        if p["base_seed"] >= 1 << 64:
            raise ConfigError("must fit in 64 bits", "pipeline.base_seed")
        r_img = p.get("r_img")
        if not isinstance(r_img, (int, float)) or isinstance(r_img, bool) or not 0 < r_img <= 100:
            raise ConfigError(f"must be in (0, 100], got {r_img!r}", "pipeline.r_img")
        if p["distance_kind"] not in ("count_sum", "pixel_mae"):
            raise ConfigError(f"unknown distance {p['distance_kind']!r}", "pipeline.distance_kind")
        if p["aggregation"] not in ("select", "mean"):
            raise ConfigError(f"unknown aggregation {p['aggregation']!r}", "pipeline.aggregation")
        if p["chroma_subsampling"] not in SUBSAMPLING:
            raise ConfigError(f"must be one of {sorted(SUBSAMPLING)}", "pipeline.chroma_subsampling")
        qf = p["jpeg_qf"]
        if not isinstance(qf, dict) or qf.get("policy") not in ("fixed", "dataset_average"):
            raise ConfigError("policy must be 'fixed' or 'dataset_average'", "pipeline.jpeg_qf")
        if qf["policy"] == "fixed" and not (isinstance(qf.get("q"), int) and 1 <= qf["q"] <= 100):
            raise ConfigError("fixed policy needs an integer q in [1, 100]", "pipeline.jpeg_qf.q")
        ids = self.annotator_ids
        if any(not isinstance(i, str) or not i for i in ids):
            raise ConfigError("every annotator needs a non-empty string id", "backends.annotators")
        if len(set(ids)) != len(ids):
            raise ConfigError(f"duplicate annotator ids {ids}", "backends.annotators")
        if r_img < 100 and ids and len(ids) < 2:
            raise ConfigError("image filtering (r_img < 100) needs at least two annotators", "pipeline.r_img")
        sel = p.get("selected_annotator_id")
        if sel is not None and ids and p["aggregation"] == "select" and sel not in ids:
            raise ConfigError(f"{sel!r} is not a configured annotator", "pipeline.selected_annotator_id")
        pr = self.data["prompts"]
        if not isinstance(pr["manual"], list) or not all(isinstance(t, str) and t for t in pr["manual"]):
            raise ConfigError("must be a list of non-empty strings", "prompts.manual")
        ms = pr.get("manual_size")
        if ms is not None and not (isinstance(ms, list) and len(ms) == 2 and all(isinstance(v, int) and v >= 1 for v in ms)):
            raise ConfigError("must be [width, height]", "prompts.manual_size")
        if self.data["prompt_filter"]["scope"] not in (MANUAL_ONLY, ALL):
            raise ConfigError(f"must be {MANUAL_ONLY!r} or {ALL!r}", "prompt_filter.scope")
        w = self.data.get("workers")
        if not isinstance(w, int) or isinstance(w, bool) or w < 1:
            raise ConfigError("must be an integer >= 1", "workers")
        if self.data["eval"]["mse_mode"] not in ("mse", "rmse-as-mse"):
            raise ConfigError("must be 'mse' or 'rmse-as-mse'", "eval.mse_mode")
