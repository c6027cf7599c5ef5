"""Coarse-to-fine evidence distillation: topic filter, page fetch, evidence extraction."""

from __future__ import annotations

import json
import logging
import re
import threading
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from datetime import date
from typing import Optional
from urllib.parse import urlsplit

import httpx

from .core import DEFAULT_SEGMENT_MAX_CHARS, EvidenceTriplet, PostRecord, QuerySet, WebDocument
from .errors import FetchFailure, OfflineViolation, ParseFailure
from .fixtures import FixtureStore, url_digest
from .inference import Prompter, _json_object
from .retrieval import queries_block

logger = logging.getLogger(__name__)

DEFAULT_BATCH_SIZE = 8
DEFAULT_BODY_BUDGET = 8000
MAX_REDIRECTS = 5
PER_HOST_LIMIT = 2


@dataclass(frozen=True)
class RelevanceBatch:
    documents: tuple[WebDocument, ...]
    verdicts: tuple[bool, ...]

    def __post_init__(self):
        if len(self.documents) != len(self.verdicts):
            raise ValueError("verdicts must parallel documents")
        if not all(isinstance(v, bool) for v in self.verdicts):
            raise ValueError("relevance verdicts must be booleans")


# -- topic filter -----------------------------------------------------------------

def _documents_block(docs) -> str:
    lines = []
    for i, d in enumerate(docs, 1):
        lines.append(f"[{i}] Title: {d.web_title}\n    URL: {d.url}\n    Snippet: {d.snippet}")
    return "\n".join(lines)


def _as_bool(v) -> Optional[bool]:
    if isinstance(v, bool):
        return v
    if isinstance(v, str) and v.strip().lower() in ("true", "false"):
        return v.strip().lower() == "true"
    return None


def parse_relevance(raw: str, n: int) -> Optional[list[bool]]:
    """Per-document booleans from a JSON map keyed "1".."n"; None if any is missing."""
    obj = _json_object(raw)
    if obj is None:
        return None
    out = []
    for i in range(1, n + 1):
        v = _as_bool(obj.get(str(i)))
        if v is None:
            return None
        out.append(v)
    return out


def _judge(prompter: Prompter, batch, queries: QuerySet, post: PostRecord) -> tuple[RelevanceBatch, Optional[str]]:
    raw = prompter.ask(
        "topic_filter",
        tag=post.id,
        text=post.text,
        queries=queries_block(queries),
        documents=_documents_block(batch),
    )
    verdicts = parse_relevance(raw, len(batch))
    if verdicts is None:
        keys = ", ".join(f'"{i}": true|false' for i in range(1, len(batch) + 1))
        fixed = prompter.repair("topic_filter", raw, "{" + keys + "}", tag=post.id)
        verdicts = parse_relevance(fixed, len(batch))
    if verdicts is None:
        msg = f"relevance batch of {len(batch)} unparseable twice; dropped"
        logger.warning("%s: %s", post.id, msg)
        return RelevanceBatch(tuple(batch), (False,) * len(batch)), msg
    return RelevanceBatch(tuple(batch), tuple(verdicts)), None


def judge_batches(
    prompter: Prompter,
    docs: list[WebDocument],
    queries: QuerySet,
    post: PostRecord,
    batch_size: int = DEFAULT_BATCH_SIZE,
    *,
    warnings: Optional[list] = None,
) -> list[RelevanceBatch]:
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    batches = [docs[i:i + batch_size] for i in range(0, len(docs), batch_size)]
    if not batches:
        return []
    with ThreadPoolExecutor(max_workers=min(len(batches), 4)) as pool:
        results = list(pool.map(lambda b: _judge(prompter, b, queries, post), batches))
    out = []
    for judged, msg in results:
        if msg and warnings is not None:
            warnings.append(msg)
        out.append(judged)
    return out


def topic_filter(
    prompter: Prompter,
    docs: list[WebDocument],
    queries: QuerySet,
    post: PostRecord,
    batch_size: int = DEFAULT_BATCH_SIZE,
    *,
    warnings: Optional[list] = None,
) -> list[WebDocument]:
    """Documents judged on-topic, in input order.

    One model call per batch; a batch whose answer cannot be parsed after one
    repair is dropped entirely.
    """
    kept = []
    for batch in judge_batches(prompter, docs, queries, post, batch_size, warnings=warnings):
        kept.extend(d for d, ok in zip(batch.documents, batch.verdicts) if ok)
    return kept


# -- page fetching ------------------------------------------------------------------

@dataclass(frozen=True)
class Page:
    url: str
    status: int
    content_type: str
    body: str


class Fetcher:
    """HTTP page source with fixture replay, recording and an optional disk cache.

    ``mode="fixture"`` serves pages from ``store`` and never touches the
    network; ``mode="live"`` fetches (following at most five redirects,
    at most two concurrent requests per host) and, with ``record``, saves
    each page to ``store``.
    """

    def __init__(
        self,
        mode: str = "live",
        *,
        store: Optional[FixtureStore] = None,
        record: bool = False,
        cache=None,
        user_agent: str = "Mozilla/5.0 (compatible; mmverify/0.1)",
        offline: bool = False,
        transport: Optional[httpx.BaseTransport] = None,
    ):
        if mode not in ("live", "fixture"):
            raise ValueError(f"unknown fetch mode {mode!r}")
        if (mode == "fixture" or record) and store is None:
            raise ValueError("fixture and record modes need a store")
        self.mode = mode
        self.store = store
        self.record = record and mode == "live"
        self.cache = cache
        self.user_agent = user_agent
        self.offline = offline
        self.calls = 0
        self.failures = 0
        self._lock = threading.Lock()
        self._hosts: dict[str, threading.BoundedSemaphore] = defaultdict(
            lambda: threading.BoundedSemaphore(PER_HOST_LIMIT)
        )
        self._client = httpx.Client(
            transport=transport,
            follow_redirects=True,
            max_redirects=MAX_REDIRECTS,
            headers={"User-Agent": user_agent},
        )

    def get(self, url: str, timeout_ms: int) -> Page:
        with self._lock:
            self.calls += 1
        if self.mode == "fixture":
            data = self.store.load("pages", url_digest(url))
            if data is None:
                raise FetchFailure(f"no page fixture for {url}")
            page = Page(data["url"], int(data["status"]), data.get("content_type", "text/html"), data["body"])
        else:
            page = self._live(url, timeout_ms)
        if page.status >= 400:
            raise FetchFailure(f"HTTP {page.status} for {url}")
        if "html" not in page.content_type.lower():
            raise FetchFailure(f"non-HTML content ({page.content_type}) at {url}")
        return page

    def _live(self, url: str, timeout_ms: int) -> Page:
        if self.offline:
            raise OfflineViolation(f"page fetch attempted while offline: {url}")
        if self.cache is not None:
            hit = self.cache.get("fetch", url)
            if hit is not None:
                return Page(**json.loads(hit))
        with self._lock:
            slot = self._hosts[urlsplit(url).netloc.lower()]
        try:
            with slot:
                resp = self._client.get(url, timeout=timeout_ms / 1000)
        except httpx.TooManyRedirects as exc:
            raise FetchFailure(f"too many redirects for {url}") from exc
        except httpx.HTTPError as exc:
            with self._lock:
                self.failures += 1
            raise FetchFailure(f"fetch failed for {url}: {exc}") from exc
        page = Page(url, resp.status_code, resp.headers.get("content-type", ""), resp.text)
        if self.cache is not None and page.status < 400:
            self.cache.put("fetch", url, json.dumps(page.__dict__).encode())
        if self.record:
            self.store.save("pages", url_digest(url), dict(page.__dict__), url=url)
        return page


_BLOCKS = ["p", "h1", "h2", "h3", "h4", "h5", "h6", "li", "blockquote", "pre", "figcaption", "dd", "dt"]
_DROP_TAGS = [
    "script",
    "style",
    "noscript",
    "template",
    "iframe",
    "svg",
    "canvas",
    "form",
    "button",
    "nav",
    "header",
    "footer",
    "aside",
    "select",
    "input",
    "object",
    "embed",
]
_JUNK_TOKENS = {
    "nav",
    "navbar",
    "menu",
    "breadcrumb",
    "breadcrumbs",
    "footer",
    "masthead",
    "sidebar",
    "related",
    "promo",
    "sponsor",
    "sponsored",
    "subscribe",
    "newsletter",
    "social",
    "share",
    "signin",
    "login",
    "cookie",
    "cookies",
    "advert",
    "ad",
    "ads",
    "banner",
    "widget",
    "comments",
    "comment",
    "trending",
    "popular",
    "recommended",
}
_TAG_LIKE = re.compile(r"<\s*/?\s*[a-zA-Z!][^<>]*>")


def _is_junk(el) -> bool:
    if el.name in ("html", "body", "article", "main") or el.attrs is None:
        return False
    tokens = []
    for attr in ("class", "id", "role"):
        v = el.get(attr)
        if isinstance(v, list):
            v = " ".join(v)
        if v:
            tokens.extend(re.split(r"[\s_\-]+", v.lower()))
    return any(t in _JUNK_TOKENS for t in tokens)


def _clean_text(s: str) -> str:
    s = _TAG_LIKE.sub(" ", s)
    s = re.sub(r"<\s*script", " ", s, flags=re.I)
    return re.sub(r"\s+", " ", s).strip()


def truncate_paragraphs(paragraphs: list[str], budget: int) -> str:
    """Join whole paragraphs while the result fits ``budget`` characters."""
    out: list[str] = []
    used = 0
    for p in paragraphs:
        extra = len(p) + (2 if out else 0)
        if used + extra > budget:
            if not out:
                cut = p[:budget]
                space = cut.rfind(" ")
                out.append(cut[:space] if space > budget // 2 else cut)
            break
        out.append(p)
        used += extra
    return "\n\n".join(out)


def extract_main_content(html: str, budget: int = DEFAULT_BODY_BUDGET) -> tuple[str, Optional[date]]:
    """Readable main text (capped at a paragraph boundary) and the publication date."""
    from bs4 import BeautifulSoup

    soup = BeautifulSoup(html, "html.parser")
    published = publication_date(soup)
    for tag in soup.find_all(_DROP_TAGS):
        tag.decompose()
    for el in soup.find_all(True):
        if el.decomposed:
            continue
        if _is_junk(el):
            el.decompose()
    root = soup.find("article") or soup.find("main") or soup.find(attrs={"role": "main"}) or soup.body or soup
    paragraphs = []
    for el in root.find_all(_BLOCKS):
        if el.find(_BLOCKS) is not None:
            continue
        text = _clean_text(el.get_text(" "))
        if text:
            paragraphs.append(text)
    if not paragraphs:
        paragraphs = [t for t in (_clean_text(x) for x in root.get_text("\n").split("\n")) if t]
    return truncate_paragraphs(paragraphs, budget), published


_MONTHS = {
    m: i
    for i, names in enumerate(
        [
            ("jan", "january"),
            ("feb", "february"),
            ("mar", "march"),
            ("apr", "april"),
            ("may",),
            ("jun", "june"),
            ("jul", "july"),
            ("aug", "august"),
            ("sep", "sept", "september"),
            ("oct", "october"),
            ("nov", "november"),
            ("dec", "december"),
        ],
        1,
    )
    for m in names
}
_ISO = re.compile(r"(\d{4})[-/](\d{1,2})[-/](\d{1,2})")
_MDY = re.compile(r"\b([A-Za-z]{3,9})\.?\s+(\d{1,2})(?:st|nd|rd|th)?,?\s+(\d{4})\b")
_DMY = re.compile(r"\b(\d{1,2})(?:st|nd|rd|th)?\s+([A-Za-z]{3,9})\.?,?\s+(\d{4})\b")
_BYLINE = re.compile(r"\b(?:published|posted|updated|first published|date)\b\s*(?:on|:)?\s*", re.I)

_META_KEYS = (
    "article:published_time",
    "og:published_time",
    "datepublished",
    "publishdate",
    "publish-date",
    "pubdate",
    "date",
    "dc.date",
    "dc.date.issued",
    "dcterms.created",
    "sailthru.date",
    "parsely-pub-date",
    "article.published",
)


def parse_date(text: str) -> Optional[date]:
    for rx, order in ((_ISO, "ymd"), (_MDY, "mdy"), (_DMY, "dmy")):
        m = rx.search(text)
        if not m:
            continue
        try:
            if order == "ymd":
                return date(int(m.group(1)), int(m.group(2)), int(m.group(3)))
            if order == "mdy":
                month = _MONTHS.get(m.group(1).lower())
                if month:
                    return date(int(m.group(3)), month, int(m.group(2)))
            else:
                month = _MONTHS.get(m.group(2).lower())
                if month:
                    return date(int(m.group(3)), month, int(m.group(1)))
        except ValueError:
            continue
    return None


def _ld_dates(node):
    if isinstance(node, dict):
        for key in ("datePublished", "uploadDate", "dateCreated"):
            if isinstance(node.get(key), str):
                yield node[key]
        for v in node.values():
            yield from _ld_dates(v)
    elif isinstance(node, list):
        for v in node:
            yield from _ld_dates(v)


def publication_date(soup) -> Optional[date]:
    """Structured metadata first (ld+json, then meta tags), then a visible byline."""
    for script in soup.find_all("script", attrs={"type": "application/ld+json"}):
        try:
            data = json.loads(script.string or "")
        except ValueError:
            continue
        for raw in _ld_dates(data):
            d = parse_date(raw)
            if d:
                return d
    metas = {}
    for meta in soup.find_all("meta"):
        key = (meta.get("property") or meta.get("name") or meta.get("itemprop") or "").lower()
        if key and meta.get("content") and key not in metas:
            metas[key] = meta["content"]
    for key in _META_KEYS:
        if key in metas:
            d = parse_date(metas[key])
            if d:
                return d
    for t in soup.find_all("time"):
        if t.get("itemprop", "").lower() == "datepublished" or t.get("pubdate") is not None:
            d = parse_date(t.get("datetime") or t.get_text(" "))
            if d:
                return d
    body = soup.body or soup
    text = body.get_text(" ")
    for m in _BYLINE.finditer(text):
        d = parse_date(text[m.end():m.end() + 40])
        if d:
            return d
    return None


def fetch_content(
    doc: WebDocument, fetcher: Fetcher, timeout_ms: int = 15_000, budget: int = DEFAULT_BODY_BUDGET
) -> WebDocument:
    page = fetcher.get(doc.url, timeout_ms)
    body, published = extract_main_content(page.body, budget)
    if not body:
        raise FetchFailure(f"no readable content at {doc.url}")
    return replace(doc, fetched_body=body, publication_date=published)


# -- evidence extraction ---------------------------------------------------------------

def _parse_segments(raw: str) -> Optional[list[str]]:
    obj = _json_object(raw)
    if obj is not None:
        segs = obj.get("segments", obj.get("evidence"))
    else:
        text = raw.strip()
        start, end = text.find("["), text.rfind("]")
        if start < 0 or end <= start:
            return None
        try:
            segs = json.loads(text[start:end + 1])
        except ValueError:
            return None
    if not isinstance(segs, list) or not all(isinstance(s, str) for s in segs):
        return None
    return [s.strip() for s in segs if s.strip()]


def extract_evidence(
    prompter: Prompter,
    doc: WebDocument,
    post: PostRecord,
    max_chars: int = DEFAULT_SEGMENT_MAX_CHARS,
) -> Optional[EvidenceTriplet]:
    """Model-selected passages from ``doc`` bearing on the post, as one triplet.

    Returns None when the model finds nothing relevant. Output that is
    unparseable or over-long gets one repair; ParseFailure after that.
    """
    if doc.fetched_body is None:
        raise ValueError("document has no fetched body")
    raw = prompter.ask(
        "evidence_extraction",
        tag=post.id,
        text=post.text,
        web_title=doc.web_title,
        body=doc.fetched_body,
        max_chars=str(max_chars),
    )
    segs = _parse_segments(raw)
    if segs is None or any(len(s) > max_chars for s in segs):
        rules = (
            '{"segments": ["<passage>", ...]}\n'
            f"Every passage must be at most {max_chars} characters; shorten long passages, keeping key details."
        )
        segs = _parse_segments(prompter.repair("evidence_extraction", raw, rules, tag=post.id))
        if segs is None or any(len(s) > max_chars for s in segs):
            raise ParseFailure(f"evidence extraction for {doc.url} unusable after repair")
    if not segs:
        return None
    return EvidenceTriplet(tuple(segs), doc.web_title, doc.publication_date, max_segment_chars=max_chars)
