import io
import json

import httpx
import pytest
from PIL import Image

from conftest import DATA, png, post, scripted_prompter
from mmverify.core import BinaryLabel, DirectResult, QuerySet, has_fake_news_prefix
from mmverify.errors import OfflineViolation, ParseFailure, ProviderUnavailable
from mmverify.retrieval import (
    DuckDuckGoProvider,
    HttpReverseImageProvider,
    SearchProviderConfig,
    StubImageProvider,
    StubSearchProvider,
    ensure_fake_news_prefix,
    generate_queries,
    image_search,
    normalize_url,
    pixel_digest,
    text_search,
)

QS = QuerySet("fake news flood in the old town", ("Did the river flood?", "When was the photo taken?"))


def entries(per_query):
    return [{"query": q, "results": r} for (_, q), r in zip(QS.members(), per_query)]


def hits(prefix, n=3):
    return [{"url": f"https://{prefix}.example.org/{i}", "title": f"{prefix} {i}", "snippet": f"s{i}"} for i in range(n)]


# -- text search --------------------------------------------------------------------


def test_three_queries_three_distinct_hits():
    provider = StubSearchProvider(entries([hits("a"), hits("b"), hits("c")]))
    docs = text_search(QS, provider)
    assert len(docs) == 9 and provider.calls == 3
    assert [d.query_origin for d in docs] == ["title"] * 3 + ["question1"] * 3 + ["question2"] * 3


def test_dedup_keeps_first_snippet():
    first = [{"url": "https://News.example.org/story?utm_source=tw#top", "title": "T", "snippet": "first"}]
    second = [{"url": "https://news.example.org/story", "title": "T", "snippet": "second"}]
    docs = text_search(QS, StubSearchProvider(entries([first, second, []])))
    assert len(docs) == 1 and docs[0].snippet == "first" and docs[0].query_origin == "title"


def test_timeout_on_one_query():
    e = entries([hits("a"), hits("b"), hits("c")])
    e[1] = {"query": e[1]["query"], "error": "timeout"}
    warnings = []
    docs = text_search(QS, StubSearchProvider(e), warnings=warnings)
    assert len(docs) == 6 and len(warnings) == 1 and "question1" in warnings[0]
    assert {d.query_origin for d in docs} == {"title", "question2"}


def test_all_queries_failing():
    e = [{"query": q, "error": "timeout"} for _, q in QS.members()]
    with pytest.raises(ProviderUnavailable):
        text_search(QS, StubSearchProvider(e))


def test_top_k_and_invalid_urls():
    rows = hits("a", 6) + [{"url": "/relative", "title": "x", "snippet": ""}]
    docs = text_search(QS, StubSearchProvider(entries([rows, [], []])), SearchProviderConfig(top_k=2))
    assert len(docs) == 2


def test_normalize_url():
    assert normalize_url("HTTPS://Example.org:443/a?utm_medium=x&id=3#frag") == "https://example.org/a?id=3"
    assert normalize_url("http://example.org") == "http://example.org/"
    assert normalize_url("http://example.org:8080/a") == "http://example.org:8080/a"


# -- query generation ----------------------------------------------------------------

QUERY_OUTPUTS = json.loads((DATA / "query_outputs.json").read_text())


def _generate(entry):
    def answer(r):
        if r.template_id == "format_repair":
            return entry.get("repair", entry["raw"])
        return entry["raw"]

    return generate_queries(scripted_prompter(answer), post(), DirectResult(BinaryLabel.MISINFORMATION, "r"), warnings=[])


@pytest.mark.parametrize("i", range(len(QUERY_OUTPUTS)))
def test_recorded_generations_are_valid(i):
    qs = _generate(QUERY_OUTPUTS[i])
    assert has_fake_news_prefix(qs.title)
    assert len(qs.questions) == 2 and all(q.endswith("?") for q in qs.questions)


def test_three_questions_truncated_with_warning():
    three = next(e for e in QUERY_OUTPUTS if e["raw"].count("?") == 3)
    warnings = []
    p = scripted_prompter(lambda r: three["raw"])
    qs = generate_queries(p, post(), DirectResult(BinaryLabel.MISINFORMATION, "r"), warnings=warnings)
    assert qs.questions == ("Is the clinic offering free vaccines?", "Does the clinic require sharing a post?")
    assert len(warnings) == 1


def test_unusable_generation_fails():
    with pytest.raises(ParseFailure):
        generate_queries(scripted_prompter(lambda r: "nothing"), post(), DirectResult(BinaryLabel.MISINFORMATION, "r"))


def test_prefix_enforced():
    assert ensure_fake_news_prefix("Flood in Rome") == "fake news Flood in Rome"
    assert ensure_fake_news_prefix("Fake News: Flood") == "fake news Flood"
    assert ensure_fake_news_prefix("fake news") == ""


# -- image search --------------------------------------------------------------------


def test_image_search_collapses_case_duplicates():
    img = png(3)
    provider = StubImageProvider(table={pixel_digest(img): {"titles": ["Flood Photos", "flood photos", "Other"]}})
    assert image_search(img, provider).page_titles == ("Flood Photos", "Other")


def test_image_search_fail_open():
    img = png(4)
    provider = StubImageProvider(table={pixel_digest(img): {"error": "503"}})
    warnings = []
    assert image_search(img, provider, warnings=warnings).page_titles == ()
    assert len(warnings) == 1
    with pytest.raises(ProviderUnavailable):
        image_search(img, provider, fail_open=False)


def test_pixel_digest_ignores_lossless_reencoding():
    img = png(5)
    buf = io.BytesIO()
    Image.open(io.BytesIO(img)).save(buf, format="BMP")
    assert pixel_digest(buf.getvalue()) == pixel_digest(img)
    assert pixel_digest(png(6)) != pixel_digest(img)


def test_http_reverse_image_provider():
    seen = {}

    def handler(request):
        seen["ctype"] = request.headers["content-type"]
        return httpx.Response(200, json={"matches": [{"title": "A"}, {"title": "a"}, {"url": "no title"}]})

    provider = HttpReverseImageProvider("https://img.test/search", "key", transport=httpx.MockTransport(handler))
    assert image_search(png(), provider).page_titles == ("A",)
    assert seen["ctype"].startswith("multipart/form-data")
    with pytest.raises(OfflineViolation):
        HttpReverseImageProvider("https://img.test/search", offline=True).search(png())


# -- live text search adapter ---------------------------------------------------------------

DDG_HTML = """
<div class="result results_links"><a class="result__a" href="//duckduckgo.com/l/?uddg=https%3A%2F%2Fa.example.org%2Fx&rut=1">A title</a>
<a class="result__snippet">Snippet A</a></div>
<div class="result result--ad"><a class="result__a" href="https://ads.example.com">Ad</a></div>
<div class="result"><a class="result__a" href="https://b.example.org/y">B title</a></div>
"""


def test_duckduckgo_adapter_parses_results():
    provider = DuckDuckGoProvider(transport=httpx.MockTransport(lambda r: httpx.Response(200, text=DDG_HTML)))
    got = provider.search("fake news x", 5, 1000)
    assert got == [
        {"url": "https://a.example.org/x", "title": "A title", "snippet": "Snippet A"},
        {"url": "https://b.example.org/y", "title": "B title", "snippet": ""},
    ]


def test_duckduckgo_adapter_timeout_and_offline():
    def slow(request):
        raise httpx.ReadTimeout("slow")

    with pytest.raises(ProviderUnavailable):
        DuckDuckGoProvider(transport=httpx.MockTransport(slow)).search("q", 5, 10)
    with pytest.raises(OfflineViolation):
        DuckDuckGoProvider(offline=True).search("q", 5, 10)
