"""Reasoning-aware query generation, text search and reverse-image tracing."""

from __future__ import annotations

import hashlib
import io
import logging
import re
import threading
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional
from urllib.parse import parse_qsl, urlencode, urlsplit, urlunsplit, unquote

import httpx

from .core import (
    FAKE_NEWS_PREFIX,
    DirectResult,
    InvalidRecord,
    PostRecord,
    QuerySet,
    VisualEvidence,
    WebDocument,
    collapse_ws,
)
from .errors import OfflineViolation, ParseFailure, ProviderTimeout, ProviderUnavailable
from .fixtures import FixtureStore
from .inference import PostContext, Prompter, _json_object, _label_word

logger = logging.getLogger(__name__)

DEFAULT_TOP_K = 5
QUERY_FORMAT = '{"title": "fake news <short title>", "questions": ["<question 1>?", "<question 2>?"]}'

_TRACKING_PARAMS = {
    "fbclid",
    "gclid",
    "dclid",
    "msclkid",
    "mc_cid",
    "mc_eid",
    "igshid",
    "ref",
    "ref_src",
    "spm",
    "_ga",
    "yclid",
}


@dataclass(frozen=True)
class SearchProviderConfig:
    provider: str = "stub_fixture"
    top_k: int = DEFAULT_TOP_K
    per_query_timeout_ms: int = 10_000
    region: Optional[str] = None

    def __post_init__(self):
        if self.provider not in ("duckduckgo_like", "stub_fixture"):
            raise ValueError(f"unknown search provider {self.provider!r}")
        if self.top_k < 1:
            raise ValueError("top_k must be >= 1")
        if self.per_query_timeout_ms <= 0:
            raise ValueError("per_query_timeout_ms must be > 0")


def normalize_url(url: str) -> str:
    """Dedup key: lowercase scheme/host, no fragment, default port or tracking params."""
    parts = urlsplit(url.strip())
    scheme = parts.scheme.lower()
    host = (parts.hostname or "").lower()
    port = parts.port
    if port and not ((scheme == "http" and port == 80) or (scheme == "https" and port == 443)):
        host = f"{host}:{port}"
    if parts.username:
        host = f"{parts.username}@{host}"
    query = [
        (k, v)
        for k, v in parse_qsl(parts.query, keep_blank_values=True)
        if not k.lower().startswith("utm_") and k.lower() not in _TRACKING_PARAMS
    ]
    return urlunsplit((scheme, host, parts.path or "/", urlencode(query), ""))


# -- query generation ---------------------------------------------------------

# "Q1:", "Question 2 -", "1.", "2)" or a bullet
_QUESTION_LINE = re.compile(r"^\s*[*#]*\s*(?:q(?:uestion)?\s*\d*\s*[*]*\s*[:=.)\-]|\d+[.)]|[-*•]\s)", re.I)
_NUMBERING = re.compile(r"^\s*(?:[-*•]|\(?\d+[.):]|q\d*[.:)]|question\s*\d*\s*[:.)])\s*", re.I)


def ensure_fake_news_prefix(title: str) -> str:
    t = collapse_ws(title).strip(" \"'“”")
    m = re.match(r"fake\s*news\b[\s:,;\-\u2013\u2014|]*", t, re.I)
    rest = t[m.end():] if m else t
    return FAKE_NEWS_PREFIX + rest if rest else ""


def _normalize_question(q) -> str:
    q = collapse_ws(_NUMBERING.sub("", str(q))).strip(" \"'“”")
    if q and not q.endswith("?"):
        q = q.rstrip(".!:;,") + "?"
    return q if q != "?" else ""


def _parse_query_output(raw: str) -> Optional[tuple[str, list[str]]]:
    obj = _json_object(raw)
    if obj is not None:
        title = obj.get("title")
        questions = obj.get("questions")
        if isinstance(questions, str):
            questions = [questions]
        if isinstance(title, str) and isinstance(questions, list):
            return ensure_fake_news_prefix(title), [q for q in map(_normalize_question, questions) if q]
        return None
    title = None
    questions = []
    for line in raw.splitlines():
        m = re.match(r"^\s*[*#]*\s*title\s*[*]*\s*[:=]\s*(.+)$", line, re.I)
        if m and title is None:
            title = ensure_fake_news_prefix(m.group(1))
            continue
        if _QUESTION_LINE.match(line):
            q = _normalize_question(re.sub(r"^\s*[*#]*\s*question\s*\d*\s*[*]*\s*[:=]", "", line, flags=re.I))
            if q:
                questions.append(q)
    if title:
        return title, questions
    return None


def _valid(parsed) -> bool:
    return parsed is not None and bool(parsed[0]) and len(parsed[1]) == 2


def generate_queries(
    prompter: Prompter,
    post: PostRecord,
    direct: DirectResult,
    *,
    ctx: Optional[PostContext] = None,
    warnings: Optional[list] = None,
) -> QuerySet:
    """Title plus two verification questions derived from the first-stage reasoning.

    Invalid output gets one repair call; if the model still returns more
    than two questions the first two are kept and a warning is logged.
    """
    ctx = ctx or prompter.context_for(post)
    raw = prompter.ask(
        "query_generation",
        image=ctx.image,
        media_type=ctx.media_type,
        tag=post.id,
        text=post.text,
        image_note=ctx.image_note,
        prediction=_label_word(direct.prediction),
        reasoning=direct.rationale,
    )
    first = _parse_query_output(raw)
    if _valid(first):
        return QuerySet(first[0], tuple(first[1]))
    repaired = _parse_query_output(prompter.repair("query_generation", raw, QUERY_FORMAT, tag=post.id))
    if _valid(repaired):
        return QuerySet(repaired[0], tuple(repaired[1]))
    for parsed in (repaired, first):
        if parsed is not None and parsed[0] and len(parsed[1]) > 2:
            msg = f"query generation returned {len(parsed[1])} questions; kept the first 2"
            logger.warning("%s: %s", post.id, msg)
            if warnings is not None:
                warnings.append(msg)
            return QuerySet(parsed[0], tuple(parsed[1][:2]))
    raise ParseFailure(f"query generation output unusable: {raw[:80]!r}")


# -- text search providers -----------------------------------------------------

class SearchProvider:
    """Base class: ``search`` returns [{url, title, snippet}] for one query."""

    def __init__(self, max_in_flight: int = 8):
        self._slots = threading.BoundedSemaphore(max_in_flight)
        self._lock = threading.Lock()
        self.calls = 0
        self.queries: Counter = Counter()

    def search(self, query: str, top_k: int, timeout_ms: int, region: Optional[str] = None) -> list[dict]:
        with self._lock:
            self.calls += 1
            self.queries[query] += 1
        with self._slots:
            return self._search(query, top_k, timeout_ms, region)

    def _search(self, query, top_k, timeout_ms, region) -> list[dict]:
        raise NotImplementedError


class StubSearchProvider(SearchProvider):
    """Serves results from fixture entries ``{"query", "results"}``.

    An entry may carry ``"error": "timeout"`` (or any other message) to
    simulate a failing query; unknown queries return no hits.
    """

    def __init__(self, entries: list[dict], **kw):
        super().__init__(**kw)
        self._entries = {collapse_ws(e["query"]): e for e in entries}

    @classmethod
    def from_store(cls, store: FixtureStore, **kw) -> "StubSearchProvider":
        return cls(store.search_entries(), **kw)

    def _search(self, query, top_k, timeout_ms, region):
        entry = self._entries.get(collapse_ws(query))
        if entry is None:
            logger.debug("no search fixture for %r", query)
            return []
        error = entry.get("error")
        if error == "timeout":
            raise ProviderTimeout(f"search timed out after {timeout_ms} ms: {query!r}")
        if error:
            raise ProviderUnavailable(f"search failed for {query!r}: {error}")
        return list(entry.get("results", []))[:top_k]


class DuckDuckGoProvider(SearchProvider):
    """Live adapter for DuckDuckGo's HTML results endpoint."""

    endpoint = "https://html.duckduckgo.com/html/"

    def __init__(
        self,
        *,
        user_agent: str = "Mozilla/5.0 (compatible; mmverify/0.1)",
        offline: bool = False,
        transport: Optional[httpx.BaseTransport] = None,
        endpoint: Optional[str] = None,
        **kw,
    ):
        super().__init__(**kw)
        self.user_agent = user_agent
        self.offline = offline
        self.endpoint = endpoint or self.endpoint
        self._client = httpx.Client(transport=transport, follow_redirects=True)

    def _search(self, query, top_k, timeout_ms, region):
        if self.offline:
            raise OfflineViolation("live text search attempted while offline")
        from bs4 import BeautifulSoup

        try:
            resp = self._client.post(
                self.endpoint,
                data={"q": query, "kl": region or "wt-wt"},
                headers={"User-Agent": self.user_agent},
                timeout=timeout_ms / 1000,
            )
        except httpx.TimeoutException as exc:
            raise ProviderTimeout(f"search timed out: {query!r}") from exc
        except httpx.HTTPError as exc:
            raise ProviderUnavailable(f"search failed: {exc}") from exc
        if resp.status_code >= 400:
            raise ProviderUnavailable(f"search HTTP {resp.status_code} for {query!r}")
        soup = BeautifulSoup(resp.text, "html.parser")
        hits = []
        for res in soup.select("div.result"):
            if "result--ad" in (res.get("class") or []):
                continue
            a = res.select_one("a.result__a")
            if a is None or not a.get("href"):
                continue
            href = a["href"]
            if "uddg=" in href:
                href = unquote(dict(parse_qsl(urlsplit(href).query)).get("uddg", href))
            if href.startswith("//"):
                href = "https:" + href
            snippet = res.select_one(".result__snippet")
            hits.append(
                {
                    "url": href,
                    "title": a.get_text(" ", strip=True),
                    "snippet": snippet.get_text(" ", strip=True) if snippet else "",
                }
            )
            if len(hits) >= top_k:
                break
        return hits


class RecordingSearchProvider(SearchProvider):
    """Wraps a live provider and writes every successful answer to the store."""

    def __init__(self, inner: SearchProvider, store: FixtureStore, **kw):
        super().__init__(**kw)
        self.inner = inner
        self.store = store
        self.failures = 0

    def _search(self, query, top_k, timeout_ms, region):
        try:
            hits = self.inner.search(query, top_k, timeout_ms, region)
        except ProviderUnavailable:
            self.failures += 1
            raise
        self.store.save_search(collapse_ws(query), hits)
        return hits


def text_search(
    queries: QuerySet,
    provider: SearchProvider,
    cfg: SearchProviderConfig = SearchProviderConfig(),
    *,
    warnings: Optional[list] = None,
) -> list[WebDocument]:
    """Search every query member concurrently and merge in fixed query order.

    Documents are deduplicated by normalized URL, keeping the first one seen
    in (title, question1, question2) order. Raises ProviderUnavailable only
    when every query failed.
    """
    members = queries.members()
    with ThreadPoolExecutor(max_workers=len(members)) as pool:
        futures = [
            pool.submit(provider.search, q, cfg.top_k, cfg.per_query_timeout_ms, cfg.region) for _, q in members
        ]
    docs: list[WebDocument] = []
    seen: set[str] = set()
    failed = 0
    for (origin, q), fut in zip(members, futures):
        try:
            hits = fut.result()
        except ProviderUnavailable as exc:
            failed += 1
            msg = f"search for {origin} failed: {exc}"
            logger.warning(msg)
            if warnings is not None:
                warnings.append(msg)
            continue
        for hit in hits[: cfg.top_k]:
            url = str(hit.get("url", ""))
            try:
                key = normalize_url(url)
                doc = WebDocument(
                    url=url,
                    web_title=collapse_ws(str(hit.get("title", ""))),
                    snippet=collapse_ws(str(hit.get("snippet", ""))),
                    query_origin=origin,
                )
            except (InvalidRecord, ValueError):
                logger.debug("dropping invalid search hit %r", url)
                continue
            if key in seen:
                continue
            seen.add(key)
            docs.append(doc)
    if failed == len(members):
        raise ProviderUnavailable("every text search query failed")
    return docs


# -- reverse image search ---------------------------------------------------------

def pixel_digest(image: bytes) -> str:
    """sha256 of the decoded RGBA pixels and size; stable under lossless re-encoding."""
    from PIL import Image

    with Image.open(io.BytesIO(image)) as img:
        rgba = img.convert("RGBA")
        h = hashlib.sha256(f"{rgba.width}x{rgba.height}:".encode())
        h.update(rgba.tobytes())
    return h.hexdigest()


class ImageSearchProvider:
    def __init__(self):
        self._lock = threading.Lock()
        self.calls = 0

    def search(self, image: bytes) -> list[str]:
        with self._lock:
            self.calls += 1
        return self._search(image)

    def _search(self, image: bytes) -> list[str]:
        raise NotImplementedError


class StubImageProvider(ImageSearchProvider):
    """Reverse-image answers keyed by :func:`pixel_digest`."""

    def __init__(self, store: Optional[FixtureStore] = None, table: Optional[dict] = None):
        super().__init__()
        self.store = store
        self.table = table or {}

    def _search(self, image):
        key = pixel_digest(image)
        entry = self.table.get(key)
        if entry is None and self.store is not None:
            entry = self.store.load("images", key)
        if entry is None:
            return []
        if entry.get("error"):
            raise ProviderUnavailable(f"reverse image search failed: {entry['error']}")
        return list(entry.get("titles", []))


class HttpReverseImageProvider(ImageSearchProvider):
    """Generic reverse-image HTTP API.

    POSTs the image as multipart field ``image`` and expects JSON with a
    ``matches`` (or ``results``) list of objects carrying a ``title``.
    """

    def __init__(
        self,
        endpoint: str,
        api_key: Optional[str] = None,
        *,
        timeout_ms: int = 20_000,
        offline: bool = False,
        transport: Optional[httpx.BaseTransport] = None,
    ):
        super().__init__()
        self.endpoint = endpoint
        self.api_key = api_key
        self.timeout = timeout_ms / 1000
        self.offline = offline
        self._client = httpx.Client(transport=transport)

    def _search(self, image):
        if self.offline:
            raise OfflineViolation("live reverse image search attempted while offline")
        headers = {"Authorization": f"Bearer {self.api_key}"} if self.api_key else {}
        try:
            resp = self._client.post(
                self.endpoint, files={"image": ("image", image)}, headers=headers, timeout=self.timeout
            )
        except httpx.HTTPError as exc:
            raise ProviderUnavailable(f"reverse image search failed: {exc}") from exc
        if resp.status_code >= 400:
            raise ProviderUnavailable(f"reverse image search HTTP {resp.status_code}")
        try:
            data = resp.json()
        except ValueError as exc:
            raise ProviderUnavailable("reverse image search returned non-JSON") from exc
        matches = data.get("matches", data.get("results", [])) if isinstance(data, dict) else []
        return [str(m["title"]) for m in matches if isinstance(m, dict) and m.get("title")]


class RecordingImageProvider(ImageSearchProvider):
    def __init__(self, inner: ImageSearchProvider, store: FixtureStore):
        super().__init__()
        self.inner = inner
        self.store = store
        self.failures = 0

    def _search(self, image):
        try:
            titles = self.inner.search(image)
        except ProviderUnavailable:
            self.failures += 1
            raise
        self.store.save("images", pixel_digest(image), {"titles": titles}, source="reverse_image")
        return titles


def image_search(
    image: bytes,
    provider: ImageSearchProvider,
    *,
    fail_open: bool = True,
    warnings: Optional[list] = None,
) -> VisualEvidence:
    """Titles of pages showing the same image, deduplicated case-insensitively."""
    try:
        titles = provider.search(image)
    except ProviderUnavailable as exc:
        if not fail_open:
            raise
        msg = f"image search failed: {exc}"
        logger.warning(msg)
        if warnings is not None:
            warnings.append(msg)
        return VisualEvidence()
    return VisualEvidence(tuple(titles))


def queries_block(queries: QuerySet) -> str:
    return "\n".join(f"- {q}" for _, q in queries.members())

