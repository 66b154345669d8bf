"""Candidate prompt bag: caption extraction, manual prompts, modification
with prefix / color suffix, and manual review."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from PIL import Image, UnidentifiedImageError

from .backends import BackendPool, invoke_caption
from .core import ACTIVE, CANDIDATE, COLOR, DISCARDED_BY_INSPECTION, GRAYSCALE, ImageRecord, PromptRecord
from .errors import BackendError, ConfigError, FormatError

DEFAULT_GRAY_EPSILON = 2
GRAYSCALE_SUFFIX = "grayscale image"
COLOR_SUFFIX = "color image"


@dataclass(frozen=True)
class ModifyRules:
    prefix: str = ""
    color_suffix: bool = False
    grayscale_epsilon: int = DEFAULT_GRAY_EPSILON


def prompt_id(index: int) -> str:
    return f"p{index:05d}"


def extract_prompts(real_images, captioner: BackendPool) -> list[PromptRecord]:
    """One auto prompt per real training image, in manifest order."""
    real_images = list(real_images)

    def caption(backend, image):
        try:
            return invoke_caption(backend, image)
        except BackendError as exc:
            raise BackendError(f"image {image.id}: {exc}", exc.cause) from exc

    captions = captioner.map(caption, real_images)
    return [PromptRecord(prompt_id="", text=text, source_image_id=img.id)
            for img, text in zip(real_images, captions)]


def manual_prompts(texts) -> list[PromptRecord]:
    return [PromptRecord(prompt_id="", text=t) for t in texts]


def merge_prompt_bags(auto, manual) -> list[PromptRecord]:
    """Auto prompts first, then manual, renumbered with fresh ids."""
    merged = list(auto) + list(manual)
    return [p.evolve(prompt_id=prompt_id(i)) for i, p in enumerate(merged)]


def location_prompts(locations, template: str = "large crowd in {}") -> list[str]:
    return [template.format(loc) for loc in locations]


def detect_color_mode(image_path, epsilon: int = DEFAULT_GRAY_EPSILON) -> str:
    """Grayscale iff every pixel's channels differ pairwise by at most ``epsilon``."""
    try:
        with Image.open(image_path) as im:
            im.load()
            if im.mode in ("1", "L", "LA", "I", "I;16", "F"):
                return GRAYSCALE
            rgb = np.asarray(im.convert("RGB"), dtype=np.int16)
    except (OSError, UnidentifiedImageError) as exc:
        raise FormatError(f"{image_path}: cannot decode image ({exc})") from exc
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    spread = np.maximum(np.maximum(np.abs(r - g), np.abs(g - b)), np.abs(r - b))
    return GRAYSCALE if int(spread.max(initial=0)) <= epsilon else COLOR


def modify_prompt(prompt: PromptRecord, source: ImageRecord | None, rules: ModifyRules) -> PromptRecord:
    """Join prefix, text and color suffix with ", ". Already modified
    prompts are returned unchanged."""
    if prompt.modified:
        return prompt
    parts = []
    if rules.prefix:
        parts.append(rules.prefix)
    parts.append(prompt.text)
    if rules.color_suffix and source is not None:
        mode = detect_color_mode(source.path, rules.grayscale_epsilon)
        parts.append(GRAYSCALE_SUFFIX if mode == GRAYSCALE else COLOR_SUFFIX)
    return prompt.evolve(modified_text=", ".join(parts), modified=True)


def modify_all(bag, real_by_id: dict, rules: ModifyRules) -> list[PromptRecord]:
    out = []
    for p in bag:
        source = None
        if not p.manual:
            source = real_by_id.get(p.source_image_id)
            if source is None:
                raise ConfigError(f"prompt {p.prompt_id}: unknown source image {p.source_image_id}")
        out.append(modify_prompt(p, source, rules))
    return out


def parse_decisions(text: str) -> dict[str, str]:
    decisions = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2 or parts[1] not in ("keep", "discard"):
            raise ConfigError(f"line {lineno}: expected '<prompt_id> keep|discard', got {line!r}", "decisions")
        decisions[parts[0]] = parts[1]
    return decisions


def review_prompts(bag, decisions) -> list[PromptRecord]:
    """Apply keep/discard decisions; unlisted candidates become active.

    ``decisions`` is a mapping or the text of a decisions file.
    """
    if isinstance(decisions, str):
        decisions = parse_decisions(decisions)
    known = {p.prompt_id for p in bag}
    unknown = sorted(set(decisions) - known)
    if unknown:
        raise ConfigError(f"decisions reference unknown prompt ids {unknown}", "decisions")
    out = []
    for p in bag:
        if decisions.get(p.prompt_id) == "discard":
            out.append(p.evolve(status=DISCARDED_BY_INSPECTION))
        elif p.status == CANDIDATE:
            text = p.effective_text
            if not text:
                raise ConfigError(f"prompt {p.prompt_id}: empty text cannot become active")
            out.append(p.evolve(status=ACTIVE))
        else:
            out.append(p)
    return out


def word_edit_distance(a: str, b: str) -> int:
    """Levenshtein distance over whitespace-separated words."""
    x, y = a.lower().split(), b.lower().split()
    prev = list(range(len(y) + 1))
    for i, wa in enumerate(x, 1):
        cur = [i]
        for j, wb in enumerate(y, 1):
            cur.append(min(prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (wa != wb)))
        prev = cur
    return prev[-1]
