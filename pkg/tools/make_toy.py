"""Regenerate the bundled toy dataset under src/promptmix/data/toy/."""

import json
from pathlib import Path

import numpy as np
from PIL import Image

from promptmix.core import COLOR, GRAYSCALE, ImageRecord, save_image_manifest

ROOT = Path(__file__).resolve().parents[1] / "src" / "promptmix" / "data" / "toy"
W, H = 64, 48

SCENES = {
    "img1": (COLOR, "people crossing a bridge", [(10, 12), (20, 14), (33, 20), (50, 30), (60, 44)]),
    "img2": (GRAYSCALE, "people at a fair", [(5, 5), (30, 24), (31, 26), (47, 10)]),
    "img3": (COLOR, "a crowd on a street", [(0, 0), (63, 47), (32, 24)]),
    "img4": (GRAYSCALE, "a crowd in a train station", [(12, 40), (40, 8), (41, 9), (42, 10), (25, 25), (55, 35)]),
    "val1": (COLOR, "a crowd at a concert", [(16, 16), (48, 32)]),
}


def scene(name, mode, heads):
    rng = np.random.default_rng(sum(map(ord, name)))
    yy, xx = np.mgrid[0:H, 0:W]
    base = np.stack([xx * 3 + 40, yy * 4 + 30, (xx + yy) * 2 + 20], axis=-1).astype(np.float64)
    base += rng.normal(0, 6, base.shape)
    for x, y in heads:
        blob = np.exp(-((xx - x) ** 2 + (yy - y) ** 2) / 8.0)
        base += blob[..., None] * np.array([120, 90, 70])
    img = np.clip(base, 0, 255).astype(np.uint8)
    if mode == GRAYSCALE:
        return Image.fromarray(img.mean(axis=-1).astype(np.uint8), "L")
    return Image.fromarray(img, "RGB")


def main():
    (ROOT / "images").mkdir(parents=True, exist_ok=True)
    (ROOT / "heads").mkdir(exist_ok=True)
    records = {}
    for name, (mode, _, heads) in SCENES.items():
        path = ROOT / "images" / f"{name}.jpg"
        scene(name, mode, heads).save(path, format="JPEG", quality=75)
        (ROOT / "heads" / f"{name}.json").write_text(json.dumps([list(h) for h in heads]))
        records[name] = ImageRecord(name, str(path), W, H, mode)
    save_image_manifest(ROOT / "train.json", [records[n] for n in ("img1", "img2", "img3", "img4")])
    save_image_manifest(ROOT / "val.json", [records["val1"]])


if __name__ == "__main__":
    main()
