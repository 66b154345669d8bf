"""Wire contract to external model workers.

A worker is any executable that speaks newline-delimited JSON on its
standard streams: one request line in, one reply line out. Large payloads
(images, DMAP files) travel by path. On launch the client sends
``{"op":"hello"}`` and the worker answers with its role and, for
annotators, the integer ``annotation_scale`` by which its maps are
downscaled relative to the input image.

Request lines::

    {"op":"caption","image":path}
    {"op":"generate","prompt":s,"width":w,"height":h,"seed":n,"out":path}
    {"op":"annotate","image":path,"out":path}
    {"op":"train_eval","train_manifests":[paths],"val_manifest":path}

Replies are ``{"ok":true, ...}`` or ``{"ok":false,"error":s}``.
"""

from __future__ import annotations

import json
import logging
import math
import os
import selectors
import subprocess
import sys
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

from PIL import Image

from .core import COLOR, GRAYSCALE, DenseMap, ImageRecord, generated_id, read_dense_map
from .errors import BackendError, ConfigError, FormatError

log = logging.getLogger(__name__)

ROLES = ("captioner", "generator", "annotator", "trainer")


@dataclass(frozen=True)
class BackendEndpoint:
    """How to launch one worker.

    ``max_retries`` is the total attempt budget per request: a worker that
    fails that many times in a row yields a BackendError even if the next
    attempt would have succeeded.
    """

    role: str
    launch: tuple
    timeout: float = 60.0
    max_retries: int = 2
    annotator_id: str | None = None
    env: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "launch", tuple(self.launch))
        if self.role not in ROLES:
            raise ConfigError(f"unknown role {self.role!r}", "role")
        if (self.role == "annotator") != (self.annotator_id is not None):
            raise ConfigError("annotator_id is required for, and only for, annotators", "annotator_id")
        if not self.launch:
            raise ConfigError("launch command is empty", "launch")
        if not self.timeout > 0:
            raise ConfigError("timeout must be > 0", "timeout")
        if int(self.max_retries) < 1:
            raise ConfigError("max_retries must be >= 1", "max_retries")

    @classmethod
    def from_dict(cls, d: dict, role: str, base_dir=None) -> "BackendEndpoint":
        launch = d.get("launch")
        if isinstance(launch, str):
            launch = launch.split()
        if not isinstance(launch, (list, tuple)):
            raise ConfigError("launch must be a list of strings", "launch")
        # non-string items (e.g. a mock worker's spec object) are passed as JSON
        launch = [_expand(a if isinstance(a, str) else json.dumps(a, sort_keys=True), base_dir) for a in launch]
        return cls(
            role=role,
            launch=launch,
            timeout=float(d.get("timeout", 60.0)),
            max_retries=int(d.get("max_retries", 2)),
            annotator_id=d.get("id") if role == "annotator" else None,
            env={str(k): str(v) for k, v in (d.get("env") or {}).items()},
        )


def _expand(arg: str, base_dir) -> str:
    arg = arg.replace("{python}", sys.executable)
    if base_dir is not None:
        arg = arg.replace("{config_dir}", os.path.abspath(base_dir))
    return arg


# ---------------------------------------------------------------------------
# protocol


@dataclass(frozen=True)
class CaptionRequest:
    image: str
    op = "caption"


@dataclass(frozen=True)
class GenerateRequest:
    prompt: str
    width: int
    height: int
    seed: int
    out: str
    options: dict | None = None
    op = "generate"


@dataclass(frozen=True)
class AnnotateRequest:
    image: str
    out: str
    op = "annotate"


@dataclass(frozen=True)
class TrainEvalRequest:
    train_manifests: tuple
    val_manifest: str
    op = "train_eval"

    def __post_init__(self):
        object.__setattr__(self, "train_manifests", tuple(self.train_manifests))


REQUEST_TYPES = {cls.op: cls for cls in (CaptionRequest, GenerateRequest, AnnotateRequest, TrainEvalRequest)}


def encode_request(req) -> str:
    d = {"op": req.op}
    for name, value in req.__dict__.items():
        if value is None:
            continue
        d[name] = list(value) if isinstance(value, tuple) else value
    return json.dumps(d, sort_keys=True, ensure_ascii=False)


def decode_request(line: str):
    try:
        d = json.loads(line)
        cls = REQUEST_TYPES[d.pop("op")]
        return cls(**d)
    except (ValueError, KeyError, TypeError) as exc:
        raise FormatError(f"bad request line {line!r}: {exc}") from exc


# ---------------------------------------------------------------------------
# worker process


class _WorkerFailure(Exception):
    def __init__(self, message, cause):
        super().__init__(message)
        self.cause = cause


class _Worker:
    def __init__(self, endpoint: BackendEndpoint):
        self.endpoint = endpoint
        env = dict(os.environ)
        env.update(endpoint.env)
        try:
            self.proc = subprocess.Popen(
                list(endpoint.launch), stdin=subprocess.PIPE, stdout=subprocess.PIPE,
                stderr=subprocess.DEVNULL, env=env,
            )
        except OSError as exc:
            raise _WorkerFailure(f"cannot launch {endpoint.launch[0]}: {exc}", "exit") from exc
        self._buf = b""
        try:
            self.hello = self.request({"op": "hello"})
        except _WorkerFailure:
            self.close(kill=True)
            raise

    def request(self, payload: dict) -> dict:
        line = (json.dumps(payload, sort_keys=True) + "\n").encode("utf-8")
        try:
            self.proc.stdin.write(line)
            self.proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise _WorkerFailure(f"worker exited before request: {exc}", "exit") from exc
        raw = self._readline(self.endpoint.timeout)
        try:
            reply = json.loads(raw)
        except ValueError as exc:
            raise _WorkerFailure(f"unparseable reply {raw[:200]!r}", "reply") from exc
        if not isinstance(reply, dict) or "ok" not in reply:
            raise _WorkerFailure(f"reply without ok field: {raw[:200]!r}", "reply")
        return reply

    def _readline(self, timeout: float) -> bytes:
        deadline = time.monotonic() + timeout
        fd = self.proc.stdout.fileno()
        with selectors.DefaultSelector() as sel:
            sel.register(fd, selectors.EVENT_READ)
            while b"\n" not in self._buf:
                remaining = deadline - time.monotonic()
                if remaining <= 0 or not sel.select(remaining):
                    raise _WorkerFailure(f"no reply within {timeout}s", "timeout")
                chunk = os.read(fd, 65536)
                if not chunk:
                    raise _WorkerFailure(f"worker exited with status {self.proc.wait()}", "exit")
                self._buf += chunk
        line, self._buf = self._buf.split(b"\n", 1)
        return line

    def close(self, kill=False):
        if kill and self.proc.poll() is None:
            self.proc.kill()
        if self.proc.poll() is None:
            try:
                self.proc.stdin.close()
                self.proc.wait(timeout=2)
            except (OSError, subprocess.TimeoutExpired):
                self.proc.kill()
                self.proc.wait()
        for stream in (self.proc.stdin, self.proc.stdout):
            try:
                stream.close()
            except OSError:
                pass


class Backend:
    """Client for one endpoint; owns at most one live worker process and
    serializes requests to it."""

    def __init__(self, endpoint: BackendEndpoint):
        self.endpoint = endpoint
        self._worker = None
        self._lock = threading.Lock()
        self.hello = {}

    @property
    def annotation_scale(self) -> int:
        """Downscale factor from the last handshake (1 before any call)."""
        return int(self.hello.get("annotation_scale", 1) or 1)

    def _ensure(self) -> _Worker:
        if self._worker is None:
            self._worker = _Worker(self.endpoint)
            self.hello = self._worker.hello
        return self._worker

    def _drop(self, kill=False):
        if self._worker is not None:
            self._worker.close(kill=kill)
            self._worker = None

    def call(self, request) -> dict:
        payload = json.loads(encode_request(request))
        last = None
        with self._lock:
            for attempt in range(1, self.endpoint.max_retries + 1):
                try:
                    reply = self._ensure().request(payload)
                except _WorkerFailure as exc:
                    log.warning("%s attempt %d/%d failed: %s", self.endpoint.role, attempt,
                                self.endpoint.max_retries, exc)
                    self._drop(kill=True)
                    last = exc
                    continue
                if not reply["ok"]:
                    raise BackendError(f"{self.endpoint.role}: {reply.get('error', 'unknown error')}", "worker")
                return reply
        raise BackendError(f"{self.endpoint.role}: gave up after {self.endpoint.max_retries} attempts: {last}",
                           last.cause)

    def close(self):
        with self._lock:
            self._drop()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class BackendPool:
    """Fixed-width pool of Backends for one endpoint. ``map`` returns
    results in input order whatever the completion order."""

    def __init__(self, endpoint: BackendEndpoint, width: int = 1):
        self.endpoint = endpoint
        self.width = max(1, int(width))
        self._local = threading.local()
        self._all = []
        self._lock = threading.Lock()

    def _backend(self) -> Backend:
        b = getattr(self._local, "backend", None)
        if b is None:
            b = Backend(self.endpoint)
            self._local.backend = b
            with self._lock:
                self._all.append(b)
        return b

    def map(self, fn, items):
        items = list(items)
        if self.width == 1:
            return [fn(self._backend(), it) for it in items]
        with ThreadPoolExecutor(max_workers=self.width) as ex:
            return list(ex.map(lambda it: fn(self._backend(), it), items))

    def close(self):
        with self._lock:
            for b in self._all:
                b.close()
            self._all.clear()
        self._local = threading.local()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


# ---------------------------------------------------------------------------
# typed invocations


def invoke_caption(backend: Backend, image: ImageRecord) -> str:
    if not os.path.isfile(image.path):
        raise BackendError(f"image {image.id}: file not found {image.path}", "input")
    reply = backend.call(CaptionRequest(os.path.abspath(image.path)))
    text = reply.get("caption")
    if not isinstance(text, str) or not text.strip():
        raise BackendError(f"image {image.id}: captioner returned an empty caption", "reply")
    return text.strip()


def invoke_generate(backend: Backend, prompt: str, width: int, height: int, seed: int, out,
                    prompt_id: str = "manual", options: dict | None = None) -> ImageRecord:
    out = os.path.abspath(out)
    os.makedirs(os.path.dirname(out), exist_ok=True)
    reply = backend.call(GenerateRequest(prompt, int(width), int(height), int(seed), out, options or None))
    path = reply.get("path", out)
    if not os.path.isfile(path):
        raise BackendError(f"generator reported success but {path} does not exist", "reply")
    try:
        with Image.open(path) as im:
            size, mode = im.size, im.mode
    except OSError as exc:
        raise BackendError(f"generator wrote an undecodable image {path}: {exc}", "reply") from exc
    if size != (width, height):
        raise BackendError(f"generator returned {size[0]}x{size[1]} for a {width}x{height} request", "reply")
    return ImageRecord(
        id=generated_id(prompt_id, seed), path=path, width=width, height=height,
        color_mode=GRAYSCALE if mode in ("L", "I", "I;16", "F", "1") else COLOR,
        prompt_id=prompt_id, seed=int(seed),
    )


def invoke_annotate(backend: Backend, image: ImageRecord, out) -> DenseMap:
    if not os.path.isfile(image.path):
        raise BackendError(f"image {image.id}: file not found {image.path}", "input")
    out = os.path.abspath(out)
    os.makedirs(os.path.dirname(out), exist_ok=True)
    reply = backend.call(AnnotateRequest(os.path.abspath(image.path), out))
    dmap = read_dense_map(reply.get("path", out))
    bad = dmap.violations()
    if bad:
        raise BackendError(f"annotator {backend.endpoint.annotator_id} on {image.id}: {'; '.join(bad)}", "reply")
    scale = backend.annotation_scale
    expected = (image.height // scale, image.width // scale)
    if dmap.shape != expected:
        raise BackendError(
            f"annotator {backend.endpoint.annotator_id} on image {image.id}: map is "
            f"{dmap.rows}x{dmap.cols}, expected {expected[0]}x{expected[1]} (scale {scale})", "reply")
    return dmap


def invoke_train_eval(backend: Backend, epoch_manifests, val_manifest) -> float:
    paths = [os.path.abspath(p) for p in epoch_manifests]
    for p in paths + [os.path.abspath(val_manifest)]:
        if not os.path.isfile(p):
            raise BackendError(f"manifest not found: {p}", "input")
    reply = backend.call(TrainEvalRequest(paths, os.path.abspath(val_manifest)))
    mae = reply.get("mae")
    try:
        mae = float(mae)
    except (TypeError, ValueError):
        raise BackendError(f"trainer replied with non-numeric mae {mae!r}", "reply") from None
    if math.isnan(mae) or math.isinf(mae) or mae < 0:
        raise BackendError(f"trainer replied with invalid mae {mae}", "reply")
    return mae
