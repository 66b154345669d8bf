"""Shared record types, the DMAP dense-map format and canonical JSON I/O.

Every JSON artifact written by the toolkit is canonical (sorted keys, compact
separators, UTF-8, shortest round-trip floats) so that checksums and golden
digests are stable. File paths stored inside an artifact are relative to the
directory of the file that contains them; in memory they are absolute.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
import tempfile
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import FormatError

GRAYSCALE = "grayscale"
COLOR = "color"
COLOR_MODES = (GRAYSCALE, COLOR)

CANDIDATE = "candidate"
ACTIVE = "active"
DISCARDED_BY_PROMPT_FILTER = "discarded_by_prompt_filter"
DISCARDED_BY_INSPECTION = "discarded_by_inspection"
PROMPT_STATUSES = (CANDIDATE, ACTIVE, DISCARDED_BY_PROMPT_FILTER, DISCARDED_BY_INSPECTION)

SEED_MASK = (1 << 64) - 1


# ---------------------------------------------------------------------------
# canonical JSON


def dumps_canonical(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False, allow_nan=False)


def digest(obj) -> str:
    """sha256 hex digest of the canonical JSON encoding of ``obj``."""
    return hashlib.sha256(dumps_canonical(obj).encode("utf-8")).hexdigest()


def atomic_write_bytes(path, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.chmod(tmp, 0o644)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json(path, obj) -> None:
    atomic_write_bytes(path, dumps_canonical(obj).encode("utf-8"))


def read_json(path):
    try:
        with open(path, "rb") as fh:
            return json.loads(fh.read().decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: not valid JSON ({exc})") from exc


def relpath(target, start_dir) -> str:
    return Path(os.path.relpath(os.path.abspath(target), os.path.abspath(start_dir))).as_posix()


def resolve(path, base_dir) -> str:
    return os.path.normpath(os.path.join(os.path.abspath(base_dir), path))


# ---------------------------------------------------------------------------
# record types


@dataclass(frozen=True)
class ImageRecord:
    """One image file plus metadata.

    Real images have ``prompt_id`` and ``seed`` both ``None``; generated
    images carry both.
    """

    id: str
    path: str
    width: int
    height: int
    color_mode: str = COLOR
    prompt_id: str | None = None
    seed: int | None = None

    @property
    def generated(self) -> bool:
        return self.prompt_id is not None

    def to_dict(self, base_dir=None) -> dict:
        if self.generated:
            origin = {"kind": "generated", "prompt_id": self.prompt_id, "seed": self.seed}
        else:
            origin = {"kind": "real"}
        return {
            "id": self.id,
            "path": relpath(self.path, base_dir) if base_dir is not None else self.path,
            "width": self.width,
            "height": self.height,
            "color_mode": self.color_mode,
            "origin": origin,
        }

    @classmethod
    def from_dict(cls, d: dict, base_dir=None) -> "ImageRecord":
        try:
            origin = d.get("origin") or {"kind": "real"}
            path = d["path"]
            if base_dir is not None:
                path = resolve(path, base_dir)
            return cls(
                id=str(d["id"]),
                path=path,
                width=int(d["width"]),
                height=int(d["height"]),
                color_mode=d.get("color_mode", COLOR),
                prompt_id=origin.get("prompt_id"),
                seed=origin.get("seed"),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise FormatError(f"malformed image record {d!r}: {exc}") from exc


def generated_id(prompt_id: str, seed: int) -> str:
    return f"{prompt_id}-s{seed}"


@dataclass(frozen=True)
class PromptRecord:
    prompt_id: str
    text: str
    modified_text: str = ""
    source_image_id: str | None = None  # None marks a manual prompt
    status: str = CANDIDATE
    modified: bool = False

    @property
    def manual(self) -> bool:
        return self.source_image_id is None

    @property
    def effective_text(self) -> str:
        return self.modified_text if self.modified else self.text

    def evolve(self, **changes) -> "PromptRecord":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        if self.manual:
            provenance = {"kind": "manual"}
        else:
            provenance = {"kind": "auto", "source_image_id": self.source_image_id}
        return {
            "prompt_id": self.prompt_id,
            "text": self.text,
            "modified_text": self.modified_text,
            "modified": self.modified,
            "provenance": provenance,
            "status": self.status,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PromptRecord":
        try:
            prov = d.get("provenance") or {"kind": "manual"}
            return cls(
                prompt_id=str(d["prompt_id"]),
                text=d["text"],
                modified_text=d.get("modified_text", ""),
                source_image_id=prov.get("source_image_id") if prov.get("kind") == "auto" else None,
                status=d.get("status", CANDIDATE),
                modified=bool(d.get("modified", False)),
            )
        except (KeyError, TypeError) as exc:
            raise FormatError(f"malformed prompt record {d!r}: {exc}") from exc


@dataclass(frozen=True, eq=False)
class DenseMap:
    """2D real-valued map (density or depth). ``values`` is a read-only
    float64 array of shape ``(rows, cols)``; the DMAP file stores float32."""

    values: np.ndarray

    def __post_init__(self):
        arr = np.array(self.values, dtype=np.float64, copy=True)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise FormatError(f"dense map must be a non-empty 2D array, got shape {arr.shape}")
        arr.setflags(write=False)
        object.__setattr__(self, "values", arr)

    @classmethod
    def uniform(cls, rows: int, cols: int, total: float) -> "DenseMap":
        return cls(np.full((rows, cols), total / (rows * cols), dtype=np.float64))

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    @property
    def cols(self) -> int:
        return self.values.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    def total(self) -> float:
        return float(np.sum(self.values))

    def violations(self) -> list[str]:
        bad = []
        if not np.all(np.isfinite(self.values)):
            bad.append("values must be finite")
        elif np.any(self.values < 0):
            bad.append("values must be non-negative")
        return bad

    def __eq__(self, other):
        if not isinstance(other, DenseMap):
            return NotImplemented
        return self.shape == other.shape and np.array_equal(self.values, other.values)


@dataclass(frozen=True)
class AnnotationSet:
    image_id: str
    entries: tuple = field(default_factory=tuple)  # ((annotator_id, DenseMap), ...)

    def __post_init__(self):
        ids = [a for a, _ in self.entries]
        if len(set(ids)) != len(ids):
            raise FormatError(f"{self.image_id}: duplicate annotator ids {ids}")
        shapes = {m.shape for _, m in self.entries}
        if len(shapes) > 1:
            raise FormatError(f"{self.image_id}: annotations differ in shape {sorted(shapes)}")

    @property
    def maps(self) -> list[DenseMap]:
        return [m for _, m in self.entries]

    def get(self, annotator_id: str) -> DenseMap | None:
        for a, m in self.entries:
            if a == annotator_id:
                return m
        return None


@dataclass(frozen=True)
class EpochManifest:
    epoch: int
    real_ids: tuple
    fake_ids: tuple
    checksum: str = ""

    def __post_init__(self):
        object.__setattr__(self, "real_ids", tuple(self.real_ids))
        object.__setattr__(self, "fake_ids", tuple(self.fake_ids))
        if not self.checksum:
            object.__setattr__(self, "checksum", epoch_checksum(self.real_ids, self.fake_ids))

    @property
    def ids(self) -> tuple:
        return self.real_ids + self.fake_ids

    def to_dict(self, sources: dict | None = None) -> dict:
        d = {
            "kind": "epoch",
            "epoch": self.epoch,
            "real_ids": list(self.real_ids),
            "fake_ids": list(self.fake_ids),
            "checksum": self.checksum,
        }
        if sources:
            d["sources"] = sources
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EpochManifest":
        return cls(int(d["epoch"]), d["real_ids"], d["fake_ids"], d.get("checksum", ""))


def epoch_checksum(real_ids, fake_ids) -> str:
    return digest(list(real_ids) + list(fake_ids))


# ---------------------------------------------------------------------------
# DMAP binary format: "DMAP" | u8 version=1 | u8 dtype=0 | u32 rows | u32 cols | f32 LE payload

DMAP_MAGIC = b"DMAP"
DMAP_VERSION = 1
DMAP_DTYPE_F32LE = 0
_HEADER = struct.Struct("<4sBBII")


def encode_dense_map(dmap: DenseMap) -> bytes:
    payload = np.ascontiguousarray(dmap.values, dtype="<f4").tobytes()
    return _HEADER.pack(DMAP_MAGIC, DMAP_VERSION, DMAP_DTYPE_F32LE, dmap.rows, dmap.cols) + payload


def decode_dense_map(data: bytes, source="<bytes>") -> DenseMap:
    if len(data) < _HEADER.size:
        raise FormatError(f"{source}: truncated DMAP header ({len(data)} bytes)")
    magic, version, dtype, rows, cols = _HEADER.unpack_from(data)
    if magic != DMAP_MAGIC:
        raise FormatError(f"{source}: bad magic {magic!r}")
    if version != DMAP_VERSION:
        raise FormatError(f"{source}: unsupported DMAP version {version}")
    if dtype != DMAP_DTYPE_F32LE:
        raise FormatError(f"{source}: unsupported DMAP dtype {dtype}")
    if rows == 0 or cols == 0:
        raise FormatError(f"{source}: empty map {rows}x{cols}")
    expected = _HEADER.size + 4 * rows * cols
    if len(data) != expected:
        raise FormatError(f"{source}: payload is {len(data) - _HEADER.size} bytes, expected {4 * rows * cols}")
    values = np.frombuffer(data, dtype="<f4", offset=_HEADER.size).reshape(rows, cols)
    return DenseMap(values)


def write_dense_map(dmap: DenseMap, path) -> None:
    atomic_write_bytes(path, encode_dense_map(dmap))


def read_dense_map(path) -> DenseMap:
    with open(path, "rb") as fh:
        return decode_dense_map(fh.read(), source=str(path))


# ---------------------------------------------------------------------------
# manifests


def save_image_manifest(path, records, extra: dict | None = None) -> None:
    base = Path(path).parent
    doc = {"kind": "images", "images": [r.to_dict(base) for r in records]}
    if extra:
        doc.update(extra)
    write_json(path, doc)


def load_image_manifest(path) -> list[ImageRecord]:
    doc = read_json(path)
    if not isinstance(doc, dict) or doc.get("kind") != "images":
        raise FormatError(f"{path}: not an image manifest")
    base = Path(path).parent
    return [ImageRecord.from_dict(d, base) for d in doc["images"]]


def save_prompt_bag(path, bag, extra: dict | None = None) -> None:
    doc = {"kind": "prompts", "prompts": [p.to_dict() for p in bag]}
    if extra:
        doc.update(extra)
    write_json(path, doc)


def load_prompt_bag(path) -> list[PromptRecord]:
    doc = read_json(path)
    if isinstance(doc, list):
        items = doc
    elif isinstance(doc, dict) and doc.get("kind") == "prompts":
        items = doc["prompts"]
    else:
        raise FormatError(f"{path}: not a prompt bag")
    return [PromptRecord.from_dict(d) for d in items]


def _is_uint64(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool) and 0 <= v <= SEED_MASK


def _image_violations(records) -> list[str]:
    out = []
    seen = set()
    for i, rec in enumerate(records):
        if not isinstance(rec, dict):
            out.append(f"images[{i}]: record is not an object")
            continue
        rid = rec.get("id", f"#{i}")
        if "id" not in rec or not isinstance(rec["id"], str) or not rec["id"]:
            out.append(f"images[{i}]: id must be a non-empty string")
        elif rid in seen:
            out.append(f"image {rid}: duplicate id")
        seen.add(rid)
        if not isinstance(rec.get("path"), str):
            out.append(f"image {rid}: path missing")
        for dim in ("width", "height"):
            v = rec.get(dim)
            if not isinstance(v, int) or isinstance(v, bool) or v < 1:
                out.append(f"image {rid}: {dim} must be an integer >= 1")
        if rec.get("color_mode") not in COLOR_MODES:
            out.append(f"image {rid}: color_mode must be one of {COLOR_MODES}")
        origin = rec.get("origin")
        if not isinstance(origin, dict):
            out.append(f"image {rid}: origin missing")
            continue
        kind = origin.get("kind")
        if kind == "real":
            if "prompt_id" in origin or "seed" in origin:
                out.append(f"image {rid}: real image must not carry prompt_id or seed")
        elif kind == "generated":
            if not isinstance(origin.get("prompt_id"), str) or not origin.get("prompt_id"):
                out.append(f"image {rid}: generated image missing prompt_id")
            if not _is_uint64(origin.get("seed")):
                out.append(f"image {rid}: generated image missing 64-bit unsigned seed")
        else:
            out.append(f"image {rid}: unknown origin kind {kind!r}")
    return out


def _prompt_violations(items) -> list[str]:
    out = []
    seen = set()
    for i, p in enumerate(items):
        if not isinstance(p, dict):
            out.append(f"prompts[{i}]: record is not an object")
            continue
        pid = p.get("prompt_id", f"#{i}")
        if pid in seen:
            out.append(f"prompt {pid}: duplicate prompt_id")
        seen.add(pid)
        if not isinstance(p.get("text"), str):
            out.append(f"prompt {pid}: text missing")
        status = p.get("status")
        if status not in PROMPT_STATUSES:
            out.append(f"prompt {pid}: unknown status {status!r}")
        if status == ACTIVE and not p.get("modified_text") and not p.get("text"):
            out.append(f"prompt {pid}: active prompt has empty text")
        if status == ACTIVE and p.get("modified") and not p.get("modified_text"):
            out.append(f"prompt {pid}: active prompt has empty modified_text")
        prov = p.get("provenance") or {}
        if prov.get("kind") == "auto" and not prov.get("source_image_id"):
            out.append(f"prompt {pid}: auto prompt without source_image_id")
        elif prov.get("kind") not in ("auto", "manual"):
            out.append(f"prompt {pid}: unknown provenance {prov.get('kind')!r}")
    return out


def _epoch_violations(m: dict) -> list[str]:
    out = []
    epoch = m.get("epoch")
    if not isinstance(epoch, int) or isinstance(epoch, bool) or epoch < 0:
        out.append("epoch: must be an integer >= 0")
    real_ids = m.get("real_ids")
    fake_ids = m.get("fake_ids")
    if not isinstance(real_ids, list) or not isinstance(fake_ids, list):
        return out + ["epoch: real_ids and fake_ids must be lists"]
    if len(set(fake_ids)) != len(fake_ids):
        dups = sorted({f for f in fake_ids if fake_ids.count(f) > 1})
        out.append(f"epoch {epoch}: fake ids sampled twice {dups}")
    if len(set(real_ids)) != len(real_ids):
        out.append(f"epoch {epoch}: duplicate real ids")
    if set(real_ids) & set(fake_ids):
        out.append(f"epoch {epoch}: ids appear as both real and fake")
    if m.get("checksum") != epoch_checksum(real_ids, fake_ids):
        out.append(f"epoch {epoch}: checksum does not match id list")
    return out


def validate_manifest(manifest) -> list[str]:
    """Check type invariants of a parsed manifest; return one message per
    violation (empty when the manifest is valid)."""
    if isinstance(manifest, list):
        manifest = {"kind": "images", "images": manifest}
    if not isinstance(manifest, dict):
        return ["manifest: not a JSON object"]
    kind = manifest.get("kind")
    if kind == "images":
        return _image_violations(manifest.get("images", []))
    if kind == "prompts":
        return _prompt_violations(manifest.get("prompts", []))
    if kind == "epoch":
        return _epoch_violations(manifest)
    if kind == "fake_dataset":
        entries = manifest.get("entries", [])
        out = _image_violations([e.get("image", {}) for e in entries])
        for e in entries:
            if not isinstance(e.get("annotation"), str):
                out.append(f"image {e.get('image', {}).get('id')}: annotation path missing")
        return out
    return [f"manifest: unknown kind {kind!r}"]
