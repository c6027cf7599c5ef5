"""Shared domain types, label algebra and their canonical JSON encoding.

Every type here is a frozen dataclass. ``to_dict``/``from_dict`` give the
wire form (snake_case keys, ISO-8601 dates, lowercase enum values, integer
tags next to names for :class:`FineCategory`), and :func:`dumps` produces the
canonical text used for reports and round-trip checks.
"""

from __future__ import annotations

import base64
import enum
import io
import json
import re
from dataclasses import dataclass, field
from datetime import date
from typing import Any, Optional
from urllib.parse import urlsplit

DEFAULT_MIN_TEXT_LEN = 20
DEFAULT_SEGMENT_MAX_CHARS = 600
FAKE_NEWS_PREFIX = "fake news "

_WS = re.compile(r"\s+")


class InvalidRecord(ValueError):
    """A domain object was constructed in a state its invariants forbid."""


class BinaryLabel(str, enum.Enum):
    MISINFORMATION = "misinformation"
    NON_MISINFORMATION = "non_misinformation"

    @property
    def is_misinformation(self) -> bool:
        return self is BinaryLabel.MISINFORMATION


class FineCategory(enum.IntEnum):
    """Six-way refined category; the integer tags are part of the wire format."""

    TRUE = 1
    SATIRE = 2
    MISLEADING_CONTENT = 3
    FALSE_CONNECTION = 4
    MANIPULATED_CONTENT = 5
    UNVERIFIED = 6

    @property
    def wire_name(self) -> str:
        return self.name.lower()

    @property
    def display_name(self) -> str:
        return _DISPLAY_NAMES[self]

    def to_dict(self) -> dict:
        return {"tag": int(self), "name": self.wire_name}

    @classmethod
    def from_dict(cls, data: Any) -> "FineCategory":
        if isinstance(data, dict):
            cat = cls(int(data["tag"]))
            if "name" in data and data["name"] != cat.wire_name:
                raise InvalidRecord(f"category tag {cat.value} does not match name {data['name']!r}")
            return cat
        if isinstance(data, int):
            return cls(data)
        return cls[str(data).upper()]


_DISPLAY_NAMES = {
    FineCategory.TRUE: "True",
    FineCategory.SATIRE: "Satire/Parody",
    FineCategory.MISLEADING_CONTENT: "Misleading Content",
    FineCategory.FALSE_CONNECTION: "False Connection",
    FineCategory.MANIPULATED_CONTENT: "Manipulated Content",
    FineCategory.UNVERIFIED: "Unverified",
}


class SourceDataset(str, enum.Enum):
    TWITTER = "twitter"
    FAKEDDIT = "fakeddit"
    CUSTOM = "custom"


class PromptVariant(str, enum.Enum):
    DIRECT = "direct"
    COT = "cot"


def _iso_date(value: Optional[date]) -> Optional[str]:
    return value.isoformat() if value is not None else None


def _parse_date(value: Optional[str]) -> Optional[date]:
    return date.fromisoformat(value) if value else None


def _b64(data: bytes) -> str:
    return base64.b64encode(data).decode("ascii")


@dataclass(frozen=True)
class ImageRef:
    """Image attached to a post: inline bytes, a local path, or a URL."""

    data: Optional[bytes] = None
    media_type: Optional[str] = None
    path: Optional[str] = None
    url: Optional[str] = None

    def __post_init__(self):
        if self.data is None and self.path is None and self.url is None:
            raise InvalidRecord("image reference needs data, path or url")

    @property
    def resolved(self) -> bool:
        return self.data is not None

    def to_dict(self) -> dict:
        return {
            "data": _b64(self.data) if self.data is not None else None,
            "media_type": self.media_type,
            "path": self.path,
            "url": self.url,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ImageRef":
        data = d.get("data")
        return cls(
            data=base64.b64decode(data) if data is not None else None,
            media_type=d.get("media_type"),
            path=d.get("path"),
            url=d.get("url"),
        )


def sniff_media_type(data: bytes) -> Optional[str]:
    """Decode ``data`` as a raster image and return its MIME type, or None."""
    from PIL import Image

    try:
        with Image.open(io.BytesIO(data)) as img:
            img.load()
            return Image.MIME.get(img.format or "", None) or "application/octet-stream"
    except Exception:
        return None


@dataclass(frozen=True)
class PostRecord:
    id: str
    text: str
    image: Optional[ImageRef] = None
    gold_label: Optional[BinaryLabel] = None
    language: Optional[str] = None
    source_dataset: SourceDataset = SourceDataset.CUSTOM

    def __post_init__(self):
        if not self.text or not self.text.strip():
            raise InvalidRecord(f"post {self.id!r} has empty text")

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "text": self.text,
            "image": self.image.to_dict() if self.image else None,
            "gold_label": self.gold_label.value if self.gold_label else None,
            "language": self.language,
            "source_dataset": self.source_dataset.value,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PostRecord":
        return cls(
            id=d["id"],
            text=d["text"],
            image=ImageRef.from_dict(d["image"]) if d.get("image") else None,
            gold_label=BinaryLabel(d["gold_label"]) if d.get("gold_label") else None,
            language=d.get("language"),
            source_dataset=SourceDataset(d.get("source_dataset", "custom")),
        )


@dataclass(frozen=True)
class DirectResult:
    prediction: BinaryLabel
    rationale: str
    needs_external: bool = False
    prompt_variant: PromptVariant = PromptVariant.DIRECT

    def __post_init__(self):
        if not self.rationale or not self.rationale.strip():
            raise InvalidRecord("direct result needs a non-empty rationale")
        if not isinstance(self.needs_external, bool):
            raise InvalidRecord("needs_external must be a bool")

    def to_dict(self) -> dict:
        return {
            "prediction": self.prediction.value,
            "rationale": self.rationale,
            "needs_external": self.needs_external,
            "prompt_variant": self.prompt_variant.value,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DirectResult":
        return cls(
            prediction=BinaryLabel(d["prediction"]),
            rationale=d["rationale"],
            needs_external=bool(d.get("needs_external", False)),
            prompt_variant=PromptVariant(d.get("prompt_variant", "direct")),
        )


def has_fake_news_prefix(title: str) -> bool:
    return len(title) > len(FAKE_NEWS_PREFIX) and title[:9].lower() == "fake news" and title[9] == " "


@dataclass(frozen=True)
class QuerySet:
    title: str
    questions: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "questions", tuple(self.questions))
        if not has_fake_news_prefix(self.title):
            raise InvalidRecord(f"query title must start with {FAKE_NEWS_PREFIX!r}: {self.title!r}")
        if len(self.questions) != 2:
            raise InvalidRecord(f"expected exactly 2 questions, got {len(self.questions)}")
        for q in self.questions:
            if not q.strip() or not q.rstrip().endswith("?"):
                raise InvalidRecord(f"malformed question {q!r}")

    def members(self) -> list[tuple[str, str]]:
        """(origin, query) pairs in fixed search order."""
        return [("title", self.title), ("question1", self.questions[0]), ("question2", self.questions[1])]

    def to_dict(self) -> dict:
        return {"title": self.title, "questions": list(self.questions)}

    @classmethod
    def from_dict(cls, d: dict) -> "QuerySet":
        return cls(title=d["title"], questions=tuple(d["questions"]))


QUERY_ORIGINS = ("title", "question1", "question2")


@dataclass(frozen=True)
class WebDocument:
    url: str
    web_title: str
    snippet: str
    query_origin: str
    fetched_body: Optional[str] = None
    publication_date: Optional[date] = None

    def __post_init__(self):
        parts = urlsplit(self.url)
        if parts.scheme not in ("http", "https") or not parts.netloc:
            raise InvalidRecord(f"not an absolute http(s) url: {self.url!r}")
        if self.query_origin not in QUERY_ORIGINS:
            raise InvalidRecord(f"unknown query origin {self.query_origin!r}")

    def to_dict(self) -> dict:
        return {
            "url": self.url,
            "web_title": self.web_title,
            "snippet": self.snippet,
            "query_origin": self.query_origin,
            "fetched_body": self.fetched_body,
            "publication_date": _iso_date(self.publication_date),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "WebDocument":
        return cls(
            url=d["url"],
            web_title=d["web_title"],
            snippet=d["snippet"],
            query_origin=d["query_origin"],
            fetched_body=d.get("fetched_body"),
            publication_date=_parse_date(d.get("publication_date")),
        )


@dataclass(frozen=True)
class EvidenceTriplet:
    segments: tuple[str, ...]
    web_title: str
    publication_date: Optional[date] = None
    max_segment_chars: int = field(default=DEFAULT_SEGMENT_MAX_CHARS, compare=False, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "segments", tuple(self.segments))
        if not self.segments:
            raise InvalidRecord("evidence triplet needs at least one segment")
        for s in self.segments:
            if not s.strip():
                raise InvalidRecord("empty evidence segment")
            if len(s) > self.max_segment_chars:
                raise InvalidRecord(f"segment longer than {self.max_segment_chars} characters")

    def to_dict(self) -> dict:
        return {
            "segments": list(self.segments),
            "web_title": self.web_title,
            "publication_date": _iso_date(self.publication_date),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EvidenceTriplet":
        segments = tuple(d["segments"])
        return cls(
            segments=segments,
            web_title=d["web_title"],
            publication_date=_parse_date(d.get("publication_date")),
            max_segment_chars=max([DEFAULT_SEGMENT_MAX_CHARS, *map(len, segments)]),
        )


def dedupe_titles(titles) -> tuple[str, ...]:
    seen: set[str] = set()
    out = []
    for t in titles:
        t = _WS.sub(" ", t).strip()
        key = t.casefold()
        if t and key not in seen:
            seen.add(key)
            out.append(t)
    return tuple(out)


@dataclass(frozen=True)
class VisualEvidence:
    page_titles: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "page_titles", dedupe_titles(self.page_titles))

    def to_dict(self) -> dict:
        return {"page_titles": list(self.page_titles)}

    @classmethod
    def from_dict(cls, d: dict) -> "VisualEvidence":
        return cls(page_titles=tuple(d.get("page_titles", ())))


def map_category(category: FineCategory, direct: DirectResult) -> BinaryLabel:
    """Resolve a refined category to the binary label.

    Category 1 is real news, 2-5 are kinds of misinformation, and an
    Unverified result keeps the initial-stage prediction.
    """
    if category is FineCategory.TRUE:
        return BinaryLabel.NON_MISINFORMATION
    if category is FineCategory.UNVERIFIED:
        return direct.prediction
    return BinaryLabel.MISINFORMATION


@dataclass(frozen=True)
class FinalVerdict:
    category: FineCategory
    binary: BinaryLabel
    used_external: bool
    fell_back_to_direct: bool
    direct: DirectResult
    evidence_text: tuple[EvidenceTriplet, ...] = ()
    evidence_visual: VisualEvidence = field(default_factory=VisualEvidence)
    refined_rationale: Optional[str] = None
    # e.g. "direct_only", "refine_parse_failure", "baseline"
    provenance: tuple[str, ...] = ()
    warnings: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "evidence_text", tuple(self.evidence_text))
        object.__setattr__(self, "provenance", tuple(self.provenance))
        object.__setattr__(self, "warnings", tuple(self.warnings))
        if not isinstance(self.category, FineCategory) or not isinstance(self.binary, BinaryLabel):
            raise InvalidRecord("verdict needs a FineCategory and a BinaryLabel")
        if self.fell_back_to_direct != (self.category is FineCategory.UNVERIFIED):
            raise InvalidRecord("fell_back_to_direct must be true exactly when category is Unverified")
        if self.binary is not map_category(self.category, self.direct):
            raise InvalidRecord(
                f"binary label {self.binary.value} inconsistent with category {self.category.wire_name}"
            )
        if not self.used_external and (self.evidence_text or self.evidence_visual.page_titles):
            raise InvalidRecord("evidence present on a verdict that did not use external knowledge")

    @classmethod
    def resolve(cls, category: FineCategory, direct: DirectResult, **kwargs) -> "FinalVerdict":
        """Build a verdict whose binary label and fallback flag follow from ``category``."""
        return cls(
            category=category,
            binary=map_category(category, direct),
            fell_back_to_direct=category is FineCategory.UNVERIFIED,
            direct=direct,
            **kwargs,
        )

    def to_dict(self) -> dict:
        return {
            "category": self.category.to_dict(),
            "binary": self.binary.value,
            "used_external": self.used_external,
            "fell_back_to_direct": self.fell_back_to_direct,
            "direct": self.direct.to_dict(),
            "evidence_text": [e.to_dict() for e in self.evidence_text],
            "evidence_visual": self.evidence_visual.to_dict(),
            "refined_rationale": self.refined_rationale,
            "provenance": list(self.provenance),
            "warnings": list(self.warnings),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FinalVerdict":
        return cls(
            category=FineCategory.from_dict(d["category"]),
            binary=BinaryLabel(d["binary"]),
            used_external=d["used_external"],
            fell_back_to_direct=d["fell_back_to_direct"],
            direct=DirectResult.from_dict(d["direct"]),
            evidence_text=tuple(EvidenceTriplet.from_dict(e) for e in d.get("evidence_text", [])),
            evidence_visual=VisualEvidence.from_dict(d.get("evidence_visual", {})),
            refined_rationale=d.get("refined_rationale"),
            provenance=tuple(d.get("provenance", ())),
            warnings=tuple(d.get("warnings", ())),
        )


@dataclass(frozen=True)
class Validation:
    ok: bool
    reason: Optional[str] = None

    def __bool__(self) -> bool:
        return self.ok


def collapse_ws(text: str) -> str:
    return _WS.sub(" ", text).strip()


def validate_post(
    record: PostRecord, min_text_len: int = DEFAULT_MIN_TEXT_LEN, require_image: bool = False
) -> Validation:
    """Check a post against the ingestion filter.

    Truthy iff the whitespace-collapsed text has at least ``min_text_len``
    characters and, when ``require_image`` is set, the image decodes. A
    falsy result carries a machine-readable ``reason``.
    """
    if min_text_len < 0:
        raise ValueError("min_text_len must be >= 0")
    if len(collapse_ws(record.text)) < min_text_len:
        return Validation(False, "text_too_short")
    if require_image:
        if record.image is None:
            return Validation(False, "missing_image")
        if record.image.data is not None and sniff_media_type(record.image.data) is None:
            return Validation(False, "undecodable_image")
    return Validation(True)


def dumps(obj: Any) -> str:
    """Canonical JSON: sorted keys, compact separators, UTF-8 preserved."""
    if hasattr(obj, "to_dict"):
        obj = obj.to_dict()
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)
