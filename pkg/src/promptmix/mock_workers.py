"""Deterministic mock workers speaking the backend protocol.

Run as ``python -m promptmix.mock_workers ROLE [SPEC_JSON]``. Every reply
is a pure function of the request and the spec, so pipeline runs on mocks
are byte-identical.

Spec keys shared by all roles:
    delay         seconds to sleep before each reply (also PROMPTMIX_MOCK_DELAY)
    fail_first    crash the first N launches (counted in ``state_file``)
    log           append every request line to this file

captioner:  table {image basename, stem or path: caption}, default
generator:  size_override [w, h], fail_seeds [..]
annotator:  kind "uniform" (total) | "hashed" (total, spread),
            annotation_scale, corrupt "negative" | "rows0" | "dims"
trainer:    base, rules [{contains, delta, per: "id" | "run"}],
            reply "nan" | "garbage"
"""

from __future__ import annotations

import hashlib
import json
import os
import sys
import time

import numpy as np
from PIL import Image

from .core import DenseMap, encode_dense_map, read_json, resolve, write_dense_map


def _digest_bytes(*parts, n: int) -> bytes:
    out = b""
    counter = 0
    seed = "\x1f".join(str(p) for p in parts).encode("utf-8")
    while len(out) < n:
        out += hashlib.sha256(seed + counter.to_bytes(8, "little")).digest()
        counter += 1
    return out[:n]


def _unit(*parts) -> float:
    """Deterministic float in [0, 1) from the hash of ``parts``."""
    return int.from_bytes(_digest_bytes(*parts, n=8), "little") / 2.0 ** 64


def mock_image(prompt: str, seed: int, width: int, height: int) -> Image.Image:
    """Blocky RGB image whose pixels are a pure function of the arguments."""
    bw, bh = max(1, (width + 7) // 8), max(1, (height + 7) // 8)
    raw = np.frombuffer(_digest_bytes(prompt, seed, width, height, n=bw * bh * 3), dtype=np.uint8)
    small = Image.fromarray(raw.reshape(bh, bw, 3).copy(), "RGB")
    return small.resize((width, height), Image.NEAREST)


class MockWorker:
    def __init__(self, role: str, spec: dict):
        self.role = role
        self.spec = spec

    def hello(self, req):
        return {"role": self.role, "annotation_scale": int(self.spec.get("annotation_scale", 1))}

    def caption(self, req):
        path = req["image"]
        if not os.path.isfile(path):
            raise ValueError(f"no such image {path}")
        table = self.spec.get("table", {})
        name = os.path.basename(path)
        for key in (path, name, os.path.splitext(name)[0]):
            if key in table:
                return {"caption": table[key]}
        return {"caption": self.spec.get("default", "a crowd of people")}

    def generate(self, req):
        seed = int(req["seed"])
        if seed in self.spec.get("fail_seeds", []):
            raise ValueError(f"scripted failure for seed {seed}")
        w, h = self.spec.get("size_override", (req["width"], req["height"]))
        img = mock_image(req["prompt"], seed, int(w), int(h))
        tmp = req["out"] + ".part"
        img.save(tmp, format="PNG")
        os.replace(tmp, req["out"])
        return {"path": req["out"]}

    def annotate(self, req):
        with Image.open(req["image"]) as im:
            width, height = im.size
            pixels = im.tobytes()
        scale = int(self.spec.get("annotation_scale", 1))
        rows, cols = height // scale, width // scale
        total = float(self.spec.get("total", 100.0))
        if self.spec.get("kind", "uniform") == "hashed":
            u = _unit(hashlib.sha256(pixels).hexdigest(), self.spec.get("salt", ""))
            total *= 1.0 + float(self.spec.get("spread", 0.2)) * (2.0 * u - 1.0)
        corrupt = self.spec.get("corrupt")
        if corrupt == "dims":
            rows, cols = rows + 1, cols
        if corrupt == "rows0":
            data = encode_dense_map(DenseMap.uniform(1, 1, 0.0))
            data = data[:6] + (0).to_bytes(4, "little") + data[10:14]
            with open(req["out"], "wb") as fh:
                fh.write(data)
            return {"path": req["out"]}
        values = np.full((rows, cols), total / (rows * cols))
        if corrupt == "negative":
            values[0, 0] = -1.0
        write_dense_map(DenseMap(values), req["out"])
        return {"path": req["out"]}

    def train_eval(self, req):
        if not os.path.isfile(req["val_manifest"]):
            raise ValueError(f"no such validation manifest {req['val_manifest']}")
        reply = self.spec.get("reply")
        if reply == "nan":
            return {"mae": float("nan")}
        fake_ids = set()
        prompt_of = {}
        for path in req["train_manifests"]:
            manifest = read_json(path)
            fake_ids.update(manifest.get("fake_ids", []))
            fake_path = (manifest.get("sources") or {}).get("fake_dataset")
            if fake_path and fake_ids:
                fake_path = resolve(fake_path, os.path.dirname(path))
                if fake_path not in prompt_of:
                    prompt_of[fake_path] = {e["image"]["id"]: e.get("prompt_text", "")
                                            for e in read_json(fake_path)["entries"]}
        texts = {}
        for table in prompt_of.values():
            texts.update(table)
        mae = float(self.spec.get("base", 10.0))
        for rule in self.spec.get("rules", []):
            hits = sum(1 for fid in fake_ids if rule["contains"].lower() in texts.get(fid, "").lower())
            if rule.get("per", "run") == "id":
                mae += rule["delta"] * hits
            elif hits:
                mae += rule["delta"]
        return {"mae": round(mae, 12)}


_OPS = ("hello", "caption", "generate", "annotate", "train_eval")


def _bump_launch_counter(path) -> int:
    count = 0
    if os.path.exists(path):
        with open(path) as fh:
            count = int(fh.read() or 0)
    count += 1
    with open(path, "w") as fh:
        fh.write(str(count))
    return count


def main(argv=None):
    argv = sys.argv[1:] if argv is None else argv
    role = argv[0]
    spec = json.loads(argv[1]) if len(argv) > 1 else {}
    if spec.get("fail_first"):
        if _bump_launch_counter(spec["state_file"]) <= int(spec["fail_first"]):
            sys.exit(3)
    worker = MockWorker(role, spec)
    delay = float(spec.get("delay", os.environ.get("PROMPTMIX_MOCK_DELAY", 0)) or 0)
    out = sys.stdout
    for line in sys.stdin:
        line = line.strip()
        if not line:
            continue
        if spec.get("log"):
            with open(spec["log"], "a") as fh:
                fh.write(line + "\n")
        req = json.loads(line)
        op = req.get("op")
        if op != "hello" and delay:
            time.sleep(delay)
        if op != "hello" and spec.get("reply") == "garbage":
            out.write("not json at all\n")
            out.flush()
            continue
        try:
            if op not in _OPS:
                raise ValueError(f"unknown op {op!r}")
            handler = getattr(worker, op)
            reply = {"ok": True, **handler(req)}
        except Exception as exc:  # reported to the client, never fatal
            reply = {"ok": False, "error": f"{type(exc).__name__}: {exc}"}
        out.write(json.dumps(reply) + "\n")
        out.flush()


if __name__ == "__main__":
    main()
