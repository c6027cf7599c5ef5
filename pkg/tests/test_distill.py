import json
import re
from datetime import date

import httpx
import pytest

from conftest import article, post, scripted_prompter
from mmverify.core import QuerySet, WebDocument
from mmverify.distill import (
    Fetcher,
    extract_evidence,
    extract_main_content,
    fetch_content,
    parse_date,
    parse_relevance,
    topic_filter,
    truncate_paragraphs,
)
from mmverify.errors import FetchFailure, OfflineViolation, ParseFailure
from mmverify.fixtures import FixtureStore, url_digest

QS = QuerySet("fake news flood", ("Did it flood?", "When?"))


def docs(n):
    return [WebDocument(f"https://e.org/{i}", f"Title {i}", f"snip {i}", "title") for i in range(1, n + 1)]


def relevance_answer(verdicts_by_url, seen=None):
    def answer(r):
        if seen is not None:
            seen.append(r.template_id)
        urls = re.findall(r"URL: (\S+)", r.rendered_prompt)
        return json.dumps({str(i): verdicts_by_url(u) for i, u in enumerate(urls, 1)})

    return answer


# -- topic filter -----------------------------------------------------------------------


def test_batches_of_four():
    seen = []
    kept = topic_filter(scripted_prompter(relevance_answer(lambda u: True, seen)), docs(7), QS, post(), 4)
    assert seen == ["topic_filter", "topic_filter"] and len(kept) == 7


def test_mixed_verdicts_keep_order():
    flags = {"https://e.org/1": True, "https://e.org/2": False, "https://e.org/3": True}
    kept = topic_filter(scripted_prompter(relevance_answer(flags.get)), docs(3), QS, post())
    assert [d.url for d in kept] == ["https://e.org/1", "https://e.org/3"]


def test_missing_key_retried_then_dropped():
    seen = []

    def answer(r):
        seen.append(r.template_id)
        return '{"1": true, "2": true}'  # never mentions document 3

    warnings = []
    kept = topic_filter(scripted_prompter(answer), docs(3), QS, post(), warnings=warnings)
    assert kept == [] and seen == ["topic_filter", "format_repair"] and len(warnings) == 1


def test_repair_recovers_batch():
    answers = iter(["1 yes 2 no", '{"1": "true", "2": "false"}'])
    kept = topic_filter(scripted_prompter(lambda r: next(answers)), docs(2), QS, post())
    assert [d.url for d in kept] == ["https://e.org/1"]


def test_parse_relevance():
    assert parse_relevance('```json\n{"1": true, "2": "false"}\n```', 2) == [True, False]
    assert parse_relevance('{"1": "maybe"}', 1) is None
    assert parse_relevance("nope", 1) is None


def test_empty_input_makes_no_calls():
    assert topic_filter(scripted_prompter(lambda r: pytest.fail("called")), [], QS, post()) == []


# -- page extraction -------------------------------------------------------------------


def test_article_with_meta_date():
    html = (
        '<html><head><meta property="article:published_time" content="2023-04-05T10:00:00Z"></head><body>'
        "<nav>Home | World</nav><div class='sidebar'>Trending now</div>"
        "<article><h1>Flood hits town</h1><p>The river rose two metres.</p><p>No one was hurt.</p></article>"
        "<footer>(c) daily news</footer><script>var x = '<p>bad</p>';</script></body></html>"
    )
    text, published = extract_main_content(html)
    assert text == "Flood hits town\n\nThe river rose two metres.\n\nNo one was hurt."
    assert published == date(2023, 4, 5)


def test_page_without_date():
    text, published = extract_main_content("<html><body><main><p>Just text here.</p></main></body></html>")
    assert text == "Just text here." and published is None


def test_large_page_truncates_at_paragraph_boundary():
    paragraphs = [f"Paragraph {i} " + "x" * 490 for i in range(400)]  # ~200 KB
    html = "<html><body><article>" + "".join(f"<p>{p}</p>" for p in paragraphs) + "</article></body></html>"
    assert len(html) > 200_000
    text, _ = extract_main_content(html, budget=5000)
    assert len(text) <= 5000
    parts = text.split("\n\n")
    assert parts == paragraphs[: len(parts)] and len(parts) == 9


def test_truncate_single_long_paragraph():
    out = truncate_paragraphs(["word " * 100], 52)
    assert len(out) <= 52 and not out.endswith("wor")


def test_no_markup_leaks():
    html = "<article><p>Safe &lt;script&gt;alert(1)&lt;/script&gt; text</p></article>"
    text, _ = extract_main_content(html)
    assert "<" not in text and "script" not in text.split("alert")[0]


@pytest.mark.parametrize(
    "raw,expected",
    [
        ("2024-01-31", date(2024, 1, 31)),
        ("March 3, 2021", date(2021, 3, 3)),
        ("3rd March 2021", date(2021, 3, 3)),
        ("Sept. 9 2020", date(2020, 9, 9)),
        ("no date", None),
        ("2024-02-31", None),
    ],
)
def test_parse_date(raw, expected):
    assert parse_date(raw) == expected


def test_ld_json_and_byline_dates():
    ld = '<script type="application/ld+json">{"@graph": [{"datePublished": "2022-06-01"}]}</script>'
    assert extract_main_content(f"<html><head>{ld}</head><body><p>x</p></body></html>")[1] == date(2022, 6, 1)
    assert extract_main_content("<body><p>Published on 12 May 2020</p><p>x</p></body>")[1] == date(2020, 5, 12)


# -- fetcher ---------------------------------------------------------------------------


def test_fixture_fetch_and_failures(tmp_path):
    store = FixtureStore(tmp_path)
    good = "https://e.org/1"
    store.save("pages", url_digest(good), {"url": good, "status": 200, "content_type": "text/html",
                                            "body": article("T", ["Body text."], "2020-01-02")})
    store.save("pages", url_digest("https://e.org/2"), {"url": "https://e.org/2", "status": 404,
                                                         "content_type": "text/html", "body": ""})
    store.save("pages", url_digest("https://e.org/3"), {"url": "https://e.org/3", "status": 200,
                                                         "content_type": "application/pdf", "body": "%PDF"})
    f = Fetcher("fixture", store=store)
    d = fetch_content(docs(1)[0], f)
    assert d.fetched_body == "T\n\nBody text." and d.publication_date == date(2020, 1, 2)
    for u in ("https://e.org/2", "https://e.org/3", "https://e.org/4"):
        with pytest.raises(FetchFailure):
            f.get(u, 1000)
    assert f.calls == 4


def test_live_fetch_redirect_record_and_user_agent(tmp_path):
    seen = []

    def handler(request):
        seen.append(request.headers["user-agent"])
        if request.url.path == "/old":
            return httpx.Response(301, headers={"location": "https://e.org/new"})
        return httpx.Response(200, headers={"content-type": "text/html"}, text="<p>Moved here.</p>")

    store = FixtureStore(tmp_path)
    f = Fetcher("live", store=store, record=True, user_agent="tester/1", transport=httpx.MockTransport(handler))
    page = f.get("https://e.org/old", 1000)
    assert "Moved here." in page.body and seen == ["tester/1", "tester/1"]
    assert store.load("pages", url_digest("https://e.org/old"))["status"] == 200


def test_redirect_loop_fails():
    loop = httpx.MockTransport(lambda r: httpx.Response(302, headers={"location": str(r.url)}))
    with pytest.raises(FetchFailure):
        Fetcher("live", transport=loop).get("https://e.org/loop", 1000)


def test_live_fetch_offline():
    with pytest.raises(OfflineViolation):
        Fetcher("live", offline=True).get("https://e.org/", 1000)


# -- evidence extraction --------------------------------------------------------------------

FETCHED = WebDocument("https://e.org/1", "Flood report", "s", "title", "The river rose.", date(2020, 1, 2))


def test_extraction_builds_triplet():
    t = extract_evidence(scripted_prompter(lambda r: '{"segments": ["The river rose."]}'), FETCHED, post())
    assert t.segments == ("The river rose.",) and t.web_title == "Flood report" and t.publication_date == date(2020, 1, 2)


def test_extraction_nothing_relevant():
    assert extract_evidence(scripted_prompter(lambda r: '{"segments": []}'), FETCHED, post()) is None


def test_extraction_overlong_repaired():
    answers = iter(['{"segments": ["' + "x" * 700 + '"]}', '{"segments": ["short"]}'])
    t = extract_evidence(scripted_prompter(lambda r: next(answers)), FETCHED, post())
    assert t.segments == ("short",)


def test_extraction_unparseable_twice():
    with pytest.raises(ParseFailure):
        extract_evidence(scripted_prompter(lambda r: "nothing useful"), FETCHED, post())
