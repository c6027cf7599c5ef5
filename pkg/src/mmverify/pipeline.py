"""Refined prediction and the end-to-end per-post pipeline."""

from __future__ import annotations

import logging
import os
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Optional, Union

from .cache import DiskCache
from .config import SECRET_ENV, PipelineConfig
from .core import (
    DirectResult,
    EvidenceTriplet,
    FineCategory,
    FinalVerdict,
    PostRecord,
    PromptVariant,
    VisualEvidence,
    validate_post,
)
from .distill import Fetcher, extract_evidence, fetch_content, topic_filter
from .errors import ConfigError, FetchFailure, MMVerifyError, OfflineViolation, ParseFailure
from .fixtures import FixtureStore
from .gateway import ChatCompletionsClient, Gateway, RetryPolicy, Script
from .inference import (
    ModelSettings,
    PostContext,
    Prompter,
    _REASON_KEY,
    _json_object,
    _label_word,
    assess_external_need,
    run_direct,
)
from .prompts import TemplateRegistry
from .retrieval import (
    DuckDuckGoProvider,
    HttpReverseImageProvider,
    ImageSearchProvider,
    RecordingImageProvider,
    RecordingSearchProvider,
    SearchProvider,
    SearchProviderConfig,
    StubImageProvider,
    StubSearchProvider,
    generate_queries,
    image_search,
    text_search,
)

logger = logging.getLogger(__name__)

METHODS = ("direct", "cot", "lemma")
CATEGORY_FORMAT = "Category: <number>. <category name>\nReason: <one short paragraph>"


class PostAborted(MMVerifyError):
    def __init__(self, post_id: str, stage: str, cause: Exception):
        super().__init__(f"{post_id}: {stage} failed: {cause}")
        self.post_id = post_id
        self.stage = stage
        self.cause = cause


@dataclass(frozen=True)
class FailureRecord:
    post_id: str
    stage: str
    error_type: str
    message: str

    def to_dict(self) -> dict:
        return {"post_id": self.post_id, "stage": self.stage, "error_type": self.error_type, "message": self.message}

    @classmethod
    def from_dict(cls, d: dict) -> "FailureRecord":
        return cls(d["post_id"], d["stage"], d["error_type"], d["message"])


# -- category parsing ---------------------------------------------------------------

_CATEGORY_LINE = re.compile(r"^[\s*#>\-]*(?:final\s+)?category[\s*]*[:=]\s*(.+)$", re.I | re.M)
_NAME_PATTERNS = [
    (FineCategory.SATIRE, re.compile(r"\b(satire|satirical|parody)\b", re.I)),
    (FineCategory.MISLEADING_CONTENT, re.compile(r"\bmisleading\b", re.I)),
    (FineCategory.FALSE_CONNECTION, re.compile(r"\bfalse[\s_-]+connection\b", re.I)),
    (FineCategory.MANIPULATED_CONTENT, re.compile(r"\bmanipulated\b", re.I)),
    (FineCategory.UNVERIFIED, re.compile(r"\bunverified\b", re.I)),
]


def _category_from_value(value: str) -> Optional[FineCategory]:
    value = value.strip().strip("*\"'`[]() ")
    m = re.match(r"(?:category\s*)?#?([1-6])\b", value, re.I)
    if m:
        return FineCategory(int(m.group(1)))
    named = {cat for cat, rx in _NAME_PATTERNS if rx.search(value)}
    if len(named) == 1:
        return named.pop()
    if not named and re.match(r"(true|real)\b", value, re.I):
        return FineCategory.TRUE
    return None


def parse_category(raw: str) -> Optional[FineCategory]:
    """Exactly one refined category from model output, or None."""
    obj = _json_object(raw)
    if obj is not None and obj.get("category") is not None:
        cat = _category_from_value(str(obj["category"]))
        if cat is not None:
            return cat
    lines = _CATEGORY_LINE.findall(raw)
    if lines:
        return _category_from_value(lines[-1])
    numbered = set(re.findall(r"\bcategory\s*#?\s*([1-6])\b", raw, re.I))
    named = {cat for cat, rx in _NAME_PATTERNS if rx.search(raw)}
    found = {FineCategory(int(n)) for n in numbered} | named
    return found.pop() if len(found) == 1 else None


def _refined_rationale(raw: str) -> Optional[str]:
    m = _REASON_KEY.search(raw)
    text = raw[m.end():] if m else _CATEGORY_LINE.sub("", raw)
    text = text.strip()
    return text or None


def render_text_evidence(triplets) -> str:
    if not triplets:
        return "(none)"
    blocks = []
    for i, t in enumerate(triplets, 1):
        when = t.publication_date.isoformat() if t.publication_date else "unknown"
        lines = [f"[{i}] Title: {t.web_title}", f"    Published: {when}"]
        lines.extend(f"    - {s}" for s in t.segments)
        blocks.append("\n".join(lines))
    return "\n".join(blocks)


def render_visual_evidence(visual: VisualEvidence) -> str:
    if not visual.page_titles:
        return "(none)"
    return "\n".join(f"- {t}" for t in visual.page_titles)


def refine(
    prompter: Prompter,
    post: PostRecord,
    direct: DirectResult,
    e_text: list[EvidenceTriplet],
    e_visual: VisualEvidence,
    *,
    ctx: Optional[PostContext] = None,
    provenance: tuple[str, ...] = (),
    warnings: tuple[str, ...] = (),
) -> FinalVerdict:
    """Six-way judgment over the gathered evidence.

    Output that still has no single category after one repair resolves to
    Unverified (so the first-stage label stands) with a provenance flag.
    """
    ctx = ctx or prompter.context_for(post)
    raw = prompter.ask(
        "refined_prediction",
        image=ctx.image,
        media_type=ctx.media_type,
        tag=post.id,
        text=post.text,
        image_note=ctx.image_note,
        prediction=_label_word(direct.prediction),
        reasoning=direct.rationale,
        evidence_text=render_text_evidence(e_text),
        evidence_visual=render_visual_evidence(e_visual),
    )
    category = parse_category(raw)
    source = raw
    if category is None:
        source = prompter.repair("refined_prediction", raw, CATEGORY_FORMAT, tag=post.id)
        category = parse_category(source)
    common = dict(
        used_external=True,
        evidence_text=tuple(e_text),
        evidence_visual=e_visual,
        warnings=warnings,
    )
    if category is None:
        logger.warning("%s: refined category unparseable; keeping the first-stage label", post.id)
        return FinalVerdict.resolve(
            FineCategory.UNVERIFIED,
            direct,
            refined_rationale=None,
            provenance=provenance + ("refine_parse_failure",),
            **common,
        )
    return FinalVerdict.resolve(category, direct, refined_rationale=_refined_rationale(source), provenance=provenance, **common)


# -- pipeline -------------------------------------------------------------------------

class Pipeline:
    """Owns the gateway, providers and fetcher built from one config."""

    def __init__(
        self,
        config: PipelineConfig,
        *,
        gateway: Optional[Gateway] = None,
        search: Optional[SearchProvider] = None,
        images: Optional[ImageSearchProvider] = None,
        fetcher: Optional[Fetcher] = None,
        registry: Optional[TemplateRegistry] = None,
        script: Optional[Script] = None,
    ):
        self.config = config
        store = FixtureStore(config.fixtures) if config.fixtures else None
        self.store = store
        cache = DiskCache(config.cache_dir, config.cache_max_age_s) if config.cache_dir else None
        if gateway is None:
            client = None
            if config.mode == "live":
                client = ChatCompletionsClient(
                    config.api_base_url,
                    os.environ.get(SECRET_ENV["api_key"]),
                    retry=RetryPolicy(max_attempts=config.max_attempts),
                    offline=config.offline,
                )
            gateway = Gateway(
                config.mode,
                store=store,
                record=config.record,
                script=script,
                client=client,
                max_concurrency=config.max_model_concurrency,
                cache=cache,
            )
        self.gateway = gateway
        if search is None:
            if config.search_provider == "stub_fixture":
                search = StubSearchProvider.from_store(store) if store else StubSearchProvider([])
            else:
                search = DuckDuckGoProvider(user_agent=config.user_agent, offline=config.offline)
                if config.record:
                    search = RecordingSearchProvider(search, store)
        self.search = search
        if images is None:
            if config.image_provider == "stub_fixture":
                images = StubImageProvider(store)
            else:
                if not config.image_endpoint:
                    raise ConfigError("image_provider http needs image_endpoint")
                images = HttpReverseImageProvider(
                    config.image_endpoint,
                    os.environ.get(SECRET_ENV["image_api_key"]),
                    offline=config.offline,
                )
                if config.record:
                    images = RecordingImageProvider(images, store)
        self.images = images
        if fetcher is None:
            fetcher = Fetcher(
                config.fetch_mode,
                store=store,
                record=config.record,
                cache=cache,
                user_agent=config.user_agent,
                offline=config.offline,
            )
        self.fetcher = fetcher
        settings = ModelSettings(config.model_hint, config.max_tokens, config.temperature, config.image_mode)
        self.prompter = Prompter(gateway, registry or TemplateRegistry(config.prompts), settings)
        self.search_cfg = SearchProviderConfig(
            config.search_provider, config.top_k, config.per_query_timeout_ms, config.region
        )

    # one post ---------------------------------------------------------------------

    def run_post(self, post: PostRecord) -> FinalVerdict:
        """Initial inference, gate, retrieval, distillation and refinement for one post."""
        cfg = self.config
        stage = "validate"
        try:
            check = validate_post(post, cfg.min_text_len, cfg.require_image)
            if not check:
                raise MMVerifyError(f"post rejected: {check.reason}")
            stage = "initial_inference"
            ctx = self.prompter.context_for(post)
            direct = run_direct(self.prompter, post, initial_stage=True, ctx=ctx)
            provenance: tuple[str, ...] = ()
            if cfg.no_initial_stage_infer:
                need = True
                provenance = ("gate_bypassed",)
            else:
                stage = "external_need"
                need = assess_external_need(self.prompter, post, direct)
            direct = replace(direct, needs_external=need)
            if not need:
                return FinalVerdict.resolve(
                    FineCategory.UNVERIFIED, direct, used_external=False, provenance=("direct_only",)
                )

            stage = "query_generation"
            query_warnings: list[str] = []
            queries = generate_queries(self.prompter, post, direct, ctx=ctx, warnings=query_warnings)

            stage = "retrieval"
            text_warnings: list[str] = []
            image_warnings: list[str] = []
            want_image = not cfg.no_visual_retrieval and post.image is not None and post.image.data is not None
            with ThreadPoolExecutor(max_workers=2) as pool:
                text_future = pool.submit(text_search, queries, self.search, self.search_cfg, warnings=text_warnings)
                image_future = (
                    pool.submit(
                        image_search,
                        post.image.data,
                        self.images,
                        fail_open=cfg.image_fail_open,
                        warnings=image_warnings,
                    )
                    if want_image
                    else None
                )
                docs = text_future.result()
                visual = image_future.result() if image_future else VisualEvidence()

            stage = "topic_filter"
            filter_warnings: list[str] = []
            relevant = topic_filter(self.prompter, docs, queries, post, cfg.batch_size, warnings=filter_warnings)

            stage = "fetch"
            fetched, fetch_warnings = self._fetch_all(relevant)

            stage = "evidence_extraction"
            triplets, extract_warnings = self._extract_all(fetched, post)

            stage = "refine"
            warnings = tuple(
                query_warnings + text_warnings + image_warnings + filter_warnings + fetch_warnings + extract_warnings
            )
            return refine(
                self.prompter,
                post,
                direct,
                triplets,
                visual,
                ctx=ctx,
                provenance=provenance,
                warnings=warnings,
            )
        except OfflineViolation:
            raise
        except MMVerifyError as exc:
            raise PostAborted(post.id, stage, exc) from exc

    def _fetch_all(self, docs):
        def one(doc):
            try:
                return fetch_content(doc, self.fetcher, self.config.fetch_timeout_ms, self.config.body_budget), None
            except FetchFailure as exc:
                return None, f"fetch failed for {doc.url}: {exc}"

        if not docs:
            return [], []
        with ThreadPoolExecutor(max_workers=min(8, len(docs))) as pool:
            results = list(pool.map(one, docs))
        return [d for d, _ in results if d is not None], [w for _, w in results if w]

    def _extract_all(self, docs, post):
        def one(doc):
            try:
                return extract_evidence(self.prompter, doc, post, self.config.segment_max_chars), None
            except ParseFailure as exc:
                return None, f"no evidence from {doc.url}: {exc}"

        if not docs:
            return [], []
        with ThreadPoolExecutor(max_workers=min(8, len(docs))) as pool:
            results = list(pool.map(one, docs))
        return [t for t, _ in results if t is not None], [w for _, w in results if w]

    def run_baseline(self, post: PostRecord, variant: PromptVariant) -> FinalVerdict:
        try:
            check = validate_post(post, self.config.min_text_len, self.config.require_image)
            if not check:
                raise MMVerifyError(f"post rejected: {check.reason}")
            direct = run_direct(self.prompter, post, variant)
        except OfflineViolation:
            raise
        except MMVerifyError as exc:
            raise PostAborted(post.id, variant.value, exc) from exc
        return FinalVerdict.resolve(
            FineCategory.UNVERIFIED, direct, used_external=False, provenance=("baseline", variant.value)
        )

    def run_method(self, post: PostRecord, method: str) -> FinalVerdict:
        if method == "lemma":
            return self.run_post(post)
        if method == "direct":
            return self.run_baseline(post, PromptVariant.DIRECT)
        if method == "cot":
            return self.run_baseline(post, PromptVariant.COT)
        raise ValueError(f"unknown method {method!r}")

    # many posts ---------------------------------------------------------------------

    def run_many(self, posts: list[PostRecord], method: str = "lemma") -> list[Union[FinalVerdict, FailureRecord]]:
        """Run every post; failures become records and never stop the batch. Input order is kept."""

        def one(post):
            try:
                return self.run_method(post, method)
            except PostAborted as exc:
                logger.warning("%s", exc)
                return FailureRecord(post.id, exc.stage, type(exc.cause).__name__, str(exc.cause))

        with ThreadPoolExecutor(max_workers=self.config.post_concurrency) as pool:
            return list(pool.map(one, posts))

    def stats(self) -> dict:
        calls = self.gateway.calls
        return {
            "model_calls": dict(sorted(calls.items())),
            "model_calls_total": sum(calls.values()),
            "search_calls": self.search.calls,
            "image_search_calls": self.images.calls,
            "fetch_calls": self.fetcher.calls,
            "extraction_calls": calls.get("evidence_extraction", 0),
        }


def run_post(post: PostRecord, config: PipelineConfig, **components) -> FinalVerdict:
    return Pipeline(config, **components).run_post(post)
