import io
import json
import re
from pathlib import Path

import pytest
from PIL import Image

from mmverify.config import PipelineConfig
from mmverify.core import BinaryLabel, ImageRef, PostRecord
from mmverify.distill import Fetcher
from mmverify.fixtures import FixtureStore, url_digest
from mmverify.gateway import Gateway
from mmverify.inference import Prompter
from mmverify.pipeline import Pipeline
from mmverify.retrieval import StubImageProvider, StubSearchProvider, pixel_digest

ROOT = Path(__file__).resolve().parent.parent
DATA = Path(__file__).resolve().parent / "data"
CORPUS = ROOT / "corpus"


def png(seed: int = 1, size=(16, 12)) -> bytes:
    buf = io.BytesIO()
    Image.new("RGB", size, (seed * 37 % 256, seed * 91 % 256, seed * 11 % 256)).save(buf, format="PNG")
    return buf.getvalue()


def post(pid="p1", text="A photo claims the river flooded the old town square yesterday", image=None, gold=None):
    img = ImageRef(data=image, media_type="image/png") if image is not None else None
    return PostRecord(pid, text, img, gold)


def article(title, paragraphs, published=None):
    meta = f'<meta property="article:published_time" content="{published}">' if published else ""
    body = "".join(f"<p>{p}</p>" for p in paragraphs)
    return f"<html><head><title>{title}</title>{meta}</head><body><article><h1>{title}</h1>{body}</article></body></html>"


class World:
    """Rule-based model for scripted pipelines.

    Answers every template from a few knobs: the first-stage label, the
    gate answer, which URLs are relevant and what the refined category is.
    """

    def __init__(
        self,
        label="misinformation",
        gate=True,
        relevant=lambda url: True,
        category="Category: 4. False Connection\nReason: The image is older than the event.",
        queries=("fake news river flood old town", "Did the river flood the old town?", "When was the photo taken?"),
    ):
        self.label = label
        self.gate = gate
        self.relevant = relevant
        self.category = category
        self.queries = queries
        self.seen = []

    def __call__(self, request):
        self.seen.append(request.template_id)
        tid, prompt = request.template_id, request.rendered_prompt
        if tid in ("direct", "initial_inference"):
            return f"Verdict: {self.label}\nReason: The caption and the image do not fit together."
        if tid == "cot":
            return f"Reason: Step by step the caption does not fit.\nVerdict: {self.label}"
        if tid == "external_need":
            return f"External knowledge needed: {'yes' if self.gate else 'no'}"
        if tid == "query_generation":
            t, q1, q2 = self.queries
            return json.dumps({"title": t, "questions": [q1, q2]})
        if tid == "topic_filter":
            urls = re.findall(r"^\s+URL: (\S+)$", prompt, re.M)
            return json.dumps({str(i): bool(self.relevant(u)) for i, u in enumerate(urls, 1)})
        if tid == "evidence_extraction":
            title = re.search(r"^Page title: (.*)$", prompt, re.M).group(1)
            return json.dumps({"segments": [f"Passage from {title}."]})
        if tid == "refined_prediction":
            return self.category
        if tid == "image_summary":
            return "A flooded square."
        return "(no change)"


def build_pipeline(tmp_path, world, *, search=(), pages=None, images=None, **cfg):
    """Pipeline with a scripted model, stub search, stub images and fixture pages."""
    store = FixtureStore(tmp_path / "fx")
    for url, html in (pages or {}).items():
        status, body = (html if isinstance(html, tuple) else (200, html))
        store.save("pages", url_digest(url), {"url": url, "status": status, "content_type": "text/html", "body": body})
    table = {pixel_digest(img): entry for img, entry in (images or {}).items()}
    config = PipelineConfig(mode="scripted", fixtures=str(store.root), **cfg)
    return Pipeline(
        config,
        script=world,
        search=StubSearchProvider(list(search)),
        images=StubImageProvider(table=table),
        fetcher=Fetcher("fixture", store=store),
    )


def scripted_prompter(answer):
    """Prompter whose gateway answers through ``answer(request)``."""
    return Prompter(Gateway("scripted", script=answer))


@pytest.fixture
def world():
    return World()


@pytest.fixture
def corpus_dir():
    return CORPUS


def gold(label: str) -> BinaryLabel:
    return BinaryLabel(label)
