"""Regenerate the bundled replay corpus under ``corpus/``.

Every post has a hand-written scenario: what the model answers at each
stage, which pages the search returns and what those pages say. The
scenarios drive a scripted gateway in record mode, so the fixture store
ends up holding exactly the exchanges a replay run will ask for.

    python3 tools/build_corpus.py [--out corpus]
"""

from __future__ import annotations

import argparse
import io
import json
import re
import shutil
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from PIL import Image, ImageDraw

from mmverify.config import PipelineConfig
from mmverify.evaluation import load_dataset
from mmverify.fixtures import FixtureStore, url_digest
from mmverify.gateway import ModelRequest
from mmverify.pipeline import Pipeline
from mmverify.retrieval import pixel_digest

M, N = "misinformation", "non-misinformation"


@dataclass
class Page:
    title: str
    paragraphs: list[str]
    published: Optional[str] = None
    status: int = 200
    content_type: str = "text/html; charset=utf-8"
    segments: list[str] = field(default_factory=list)


@dataclass
class Scenario:
    id: str
    text: str
    gold: str
    image: Optional[str] = None
    direct: tuple[str, str] = (N, "")
    direct_style: str = "plain"
    gate: bool = True
    queries: Optional[tuple[str, str, str]] = None
    query_raw: Optional[str] = None
    # query -> list of (url, title, snippet), or "timeout"
    search: dict = field(default_factory=dict)
    relevant: set = field(default_factory=set)
    pages: dict = field(default_factory=dict)
    visual: object = ()
    refine: str = ""
    topic_raw: Optional[str] = None
    repairs: dict = field(default_factory=dict)
    extraction_raw: dict = field(default_factory=dict)


def _png(seed: int, size=(96, 64)) -> bytes:
    img = Image.new("RGB", size, ((seed * 67) % 256, (seed * 131) % 256, (seed * 29) % 256))
    draw = ImageDraw.Draw(img)
    for k in range(4):
        x = (seed * 13 + k * 21) % size[0]
        y = (seed * 7 + k * 17) % size[1]
        draw.rectangle([x, y, x + 12, y + 9], fill=((k * 80) % 256, 255 - seed * 9 % 256, 40 * k % 256))
    buf = io.BytesIO()
    img.save(buf, format="PNG", optimize=False)
    return buf.getvalue()


IMAGES = {
    "shark": 1,
    "crowd": 2,
    "bridge": 3,
    "moon": 4,
    "senator": 5,
    "storm": 6,
    "clinic": 7,
    "market": 8,
}


def _hit(url, title, snippet):
    return {"url": url, "title": title, "snippet": snippet}


SCENARIOS = [
    Scenario(
        id="p01",
        text="A shark swimming down the flooded highway in Houston after the hurricane! Stay safe everyone",
        gold=M,
        image="shark",
        direct=(M, "The shark is pasted onto the road: its lighting and water line do not match the flood around it."),
        gate=False,
        refine="Category: 5. Manipulated Content\nReason: The image was edited.",
    ),
    Scenario(
        id="p02",
        text="Sunset over the harbour this evening, the sky was unreal tonight and the boats were all out",
        gold=N,
        direct=(N, "A personal description of a sunset with no factual claim that could be false."),
        direct_style="json",
        gate=False,
    ),
    Scenario(
        id="p03",
        text="Photo shows the crowd at yesterday's climate march in Berlin, over a million people on the streets",
        gold=M,
        image="crowd",
        direct=(N, "The photo shows a large crowd with banners, consistent with a march."),
        direct_style="bold",
        queries=(
            "fake news crowd photo climate march Berlin one million",
            "Was this crowd photo taken at the Berlin climate march?",
            "How many people attended the climate march in Berlin?",
        ),
        search={
            "fake news crowd photo climate march Berlin one million": [
                _hit("https://factcheck.example.org/berlin-march-photo", "Crowd photo is from a 2019 concert, not the march",
                     "The viral picture was taken at a music festival in 2019."),
                _hit("https://news.example.com/berlin-climate-march", "Thousands join climate march in Berlin",
                     "Police estimated 40,000 participants."),
            ],
            "Was this crowd photo taken at the Berlin climate march?": [
                _hit("https://factcheck.example.org/berlin-march-photo?utm_source=x", "Crowd photo is from a 2019 concert, not the march",
                     "Duplicate of the first hit with tracking parameters."),
                _hit("https://travel.example.net/berlin-guide", "Berlin travel guide", "Top sights in Berlin."),
            ],
            "How many people attended the climate march in Berlin?": [
                _hit("https://news.example.com/berlin-climate-march#numbers", "Thousands join climate march in Berlin",
                     "Same article, fragment link."),
            ],
        },
        relevant={"https://factcheck.example.org/berlin-march-photo", "https://news.example.com/berlin-climate-march"},
        pages={
            "https://factcheck.example.org/berlin-march-photo": Page(
                "Crowd photo is from a 2019 concert, not the march",
                [
                    "A photo shared thousands of times claims to show over a million people at the Berlin climate march.",
                    "Reverse image search shows the picture was first published in August 2019 at an open-air concert in Warsaw.",
                    "Organisers of the march reported about 40,000 participants, and police gave a similar figure.",
                ],
                published="2024-09-21",
                segments=[
                    "The picture was first published in August 2019 at an open-air concert in Warsaw.",
                    "Organisers of the march reported about 40,000 participants.",
                ],
            ),
            "https://news.example.com/berlin-climate-march": Page(
                "Thousands join climate march in Berlin",
                [
                    "Thousands of people marched through central Berlin on Friday calling for faster climate action.",
                    "Police estimated the crowd at 40,000.",
                ],
                published="2024-09-20",
                segments=["Police estimated the crowd at 40,000."],
            ),
        },
        visual=["Open air concert Warsaw 2019 gallery", "open air concert warsaw 2019 gallery", "Festival crowds: best photos"],
        refine=(
            "Category: 4. False Connection\n"
            "Reason: The photo comes from a 2019 concert in Warsaw and the march drew about 40,000 people, "
            "so the image and the figure do not belong to the event."
        ),
    ),
    Scenario(
        id="p04",
        text="BREAKING: the new bridge collapsed this morning, dozens feared dead, authorities hiding the truth",
        gold=M,
        image="bridge",
        direct=(M, "Alarmist wording and an appeal to a cover-up; the photo shows an intact bridge under construction."),
        queries=(
            "fake news new bridge collapsed dozens dead cover-up",
            "Did the new bridge collapse this morning?",
            "Were there any casualties at the bridge construction site?",
        ),
        search={
            "fake news new bridge collapsed dozens dead cover-up": [
                _hit("https://city.example.gov/press/bridge-inspection", "Bridge passes load test",
                     "The city confirmed the bridge passed its final load test."),
            ],
            "Did the new bridge collapse this morning?": [
                _hit("https://local.example.com/bridge-scaffold", "Scaffolding section removed from new bridge",
                     "Workers removed a temporary scaffold section on Tuesday."),
            ],
            "Were there any casualties at the bridge construction site?": [],
        },
        relevant={"https://city.example.gov/press/bridge-inspection", "https://local.example.com/bridge-scaffold"},
        pages={
            "https://city.example.gov/press/bridge-inspection": Page(
                "Bridge passes load test",
                ["The new river bridge passed its final load test on Monday.", "No incidents were reported."],
                published="2024-05-13",
                segments=["The new river bridge passed its final load test on Monday. No incidents were reported."],
            ),
            "https://local.example.com/bridge-scaffold": Page(
                "Scaffolding section removed from new bridge",
                [
                    "Workers lowered a temporary scaffold section from the new bridge on Tuesday.",
                    "Videos of the operation circulated online with claims of a collapse.",
                ],
                published="14 May 2024",
                segments=["Videos of a planned scaffold removal circulated online with claims of a collapse."],
            ),
        },
        visual=["River bridge construction progress May 2024"],
        refine=(
            "**Category:** 3. Misleading Content\n"
            "**Reason:** A planned scaffold removal was framed as a deadly collapse; officials report no incident."
        ),
    ),
    Scenario(
        id="p05",
        text="NASA image of the full moon rising over the Atlas mountains, taken from the ISS last week",
        gold=N,
        image="moon",
        direct=(N, "The image looks like an orbital photograph and the caption is plausible."),
        queries=(
            "fake news NASA ISS photo full moon Atlas mountains",
            "Did NASA publish an ISS photo of the moon over the Atlas mountains?",
            "When was the ISS moonrise photo taken?",
        ),
        search={
            "fake news NASA ISS photo full moon Atlas mountains": [
                _hit("https://images.example-space.org/iss-moonrise-atlas", "ISS crew photographs moonrise over the Atlas",
                     "An astronaut photographed the full moon above Morocco."),
            ],
            "Did NASA publish an ISS photo of the moon over the Atlas mountains?": [
                _hit("https://images.example-space.org/iss-moonrise-atlas", "ISS crew photographs moonrise over the Atlas",
                     "Same page."),
                _hit("https://blog.example.net/moon-facts", "Ten facts about the moon", "General trivia."),
            ],
            "When was the ISS moonrise photo taken?": [],
        },
        relevant={"https://images.example-space.org/iss-moonrise-atlas"},
        pages={
            "https://images.example-space.org/iss-moonrise-atlas": Page(
                "ISS crew photographs moonrise over the Atlas",
                [
                    "An Expedition crew member photographed the full moon rising above the Atlas mountains in Morocco.",
                    "The image was released in the agency's Earth observation gallery.",
                ],
                published="2024-03-28",
                segments=["An Expedition crew member photographed the full moon rising above the Atlas mountains in Morocco."],
            ),
        },
        visual=["ISS crew photographs moonrise over the Atlas"],
        refine="Category: 1. True\nReason: The agency's gallery published this photo with the same description.",
    ),
    Scenario(
        id="p06",
        text="Our town library will stay open until 10pm during exam season starting next Monday, says the mayor",
        gold=N,
        direct=(N, "A routine local announcement; nothing suggests fabrication."),
        queries=(
            "fake news town library open until 10pm exam season",
            "Did the mayor announce extended library hours?",
            "When do the extended library hours start?",
        ),
        search={
            "fake news town library open until 10pm exam season": [
                _hit("https://town.example.gov/news/library-hours", "Library extends opening hours for exams",
                     "Open until 10pm from Monday."),
            ],
        },
        relevant={"https://town.example.gov/news/library-hours"},
        pages={
            "https://town.example.gov/news/library-hours": Page(
                "Library extends opening hours for exams",
                ["The central library will open until 10pm on weekdays during exam season, starting Monday."],
                published="2024-01-08",
                segments=["The central library will open until 10pm on weekdays during exam season, starting Monday."],
            ),
        },
        refine="Hmm, this is hard to say.",
        repairs={"refined_prediction": "I am not able to pick one."},
    ),
    Scenario(
        id="p07",
        text="Drinking hot water with lemon every morning cures diabetes within two weeks, doctors stunned",
        gold=M,
        direct=(M, "A miracle cure claim with no source; typical health misinformation."),
        queries=(
            "fake news hot water lemon cures diabetes two weeks",
            "Can lemon water cure diabetes?",
            "Did doctors report a lemon water diabetes cure?",
        ),
        search={
            "fake news hot water lemon cures diabetes two weeks": [
                _hit("https://recipes.example.com/lemon-tea", "Lemon ginger tea recipe", "A warming drink for winter."),
                _hit("https://shop.example.com/lemons", "Buy fresh lemons online", "Free delivery."),
            ],
            "Can lemon water cure diabetes?": [
                _hit("https://travel.example.net/amalfi", "Amalfi coast lemon groves", "Travel tips."),
            ],
        },
        relevant=set(),
        refine="Category: 6. Unverified\nReason: None of the retrieved pages discuss the claim.",
    ),
    Scenario(
        id="p08",
        text="Local man declares war on Mondays, vows to sleep through every one of them until victory is achieved",
        gold=M,
        image="senator",
        direct=(N, "Reads like a light-hearted personal story rather than a false claim."),
        direct_style="prose",
        queries=(
            "fake news local man declares war on Mondays",
            "Which site published the story about the man declaring war on Mondays?",
            "Is the war on Mondays story satire?",
        ),
        search={
            "fake news local man declares war on Mondays": [
                _hit("https://satire.example.com/man-declares-war-on-mondays", "Local Man Declares War On Mondays",
                     "From our humour desk."),
            ],
        },
        relevant={"https://satire.example.com/man-declares-war-on-mondays"},
        pages={
            "https://satire.example.com/man-declares-war-on-mondays": Page(
                "Local Man Declares War On Mondays",
                [
                    "In a move experts called bold, a local man has declared war on Mondays.",
                    "This article is satire and appears in our humour section.",
                ],
                published="2023-11-06",
                segments=["This article is satire and appears in our humour section."],
            ),
        },
        refine="Category: 2. Satire\nReason: The source is a humour site that labels the piece as satire.",
    ),
    Scenario(
        id="p09",
        text="Satellite photo shows the storm eye directly over the capital right now, everyone take shelter",
        gold=M,
        image="storm",
        direct=(M, "The cloud pattern looks digitally added over the city lights."),
        queries=(
            "fake news satellite photo storm eye over capital",
            "Was the storm eye over the capital today?",
            "Is the satellite storm photo edited?",
        ),
        search={
            "fake news satellite photo storm eye over capital": [
                _hit("https://weather.example.org/storm-track", "Storm stays 300 km offshore",
                     "The storm's centre remained far from the coast."),
                _hit("https://gone.example.com/storm-photo", "Viral storm photo explained", "Page removed."),
            ],
            "Was the storm eye over the capital today?": "timeout",
            "Is the satellite storm photo edited?": [
                _hit("https://factcheck.example.org/storm-composite", "Storm photo is a composite",
                     "The image combines two unrelated pictures."),
            ],
        },
        relevant={
            "https://weather.example.org/storm-track",
            "https://gone.example.com/storm-photo",
            "https://factcheck.example.org/storm-composite",
        },
        pages={
            "https://weather.example.org/storm-track": Page(
                "Storm stays 300 km offshore",
                ["The storm's centre remained about 300 km offshore throughout the day."],
                published="2024-08-02",
                segments=["The storm's centre remained about 300 km offshore throughout the day."],
            ),
            "https://gone.example.com/storm-photo": Page("Not found", ["Not found"], status=404),
            "https://factcheck.example.org/storm-composite": Page(
                "Storm photo is a composite",
                [
                    "The viral picture combines a 2017 hurricane image with a night photo of the city.",
                    "Editing traces are visible along the coastline.",
                ],
                published="2024-08-02",
                segments=["The viral picture combines a 2017 hurricane image with a night photo of the city."],
            ),
        },
        refine="Category: 5. Manipulated Content\nReason: The image is a composite of two unrelated photos.",
    ),
    Scenario(
        id="p10",
        text="Great white shark spotted at the aquarium's new open ocean tank, opening to visitors this weekend",
        gold=N,
        image="shark",
        direct=(M, "The same shark image has circulated before with other captions, so this looks recycled."),
        queries=(
            "fake news great white shark aquarium open ocean tank",
            "Does the aquarium have a great white shark in its new tank?",
            "When does the aquarium's open ocean tank open?",
        ),
        search={
            "fake news great white shark aquarium open ocean tank": [
                _hit("https://aquarium.example.org/news/open-ocean", "Open Ocean exhibit opens Saturday",
                     "Meet our sharks in the new tank."),
                _hit("https://factcheck.example.org/highway-shark", "Highway shark photo is fake",
                     "The flooded highway shark is an edit of this aquarium image."),
            ],
        },
        relevant={"https://aquarium.example.org/news/open-ocean", "https://factcheck.example.org/highway-shark"},
        topic_raw="1: relevant\n2: relevant",
        repairs={"topic_filter": '{"1": true, "2": true}'},
        pages={
            "https://aquarium.example.org/news/open-ocean": Page(
                "Open Ocean exhibit opens Saturday",
                [
                    "The aquarium's new Open Ocean tank opens to the public this Saturday.",
                    "The photo of a shark in the tank was taken during the exhibit preview.",
                ],
                published="2024-06-12",
                segments=["The photo of a shark in the tank was taken during the exhibit preview."],
            ),
            "https://factcheck.example.org/highway-shark": Page(
                "Highway shark photo is fake",
                [
                    "The shark in the viral flooded highway photo was cut from an aquarium picture.",
                    "The original picture shows the shark inside the aquarium tank.",
                ],
                published="2024-06-20",
                segments=["The original picture shows the shark inside the aquarium tank."],
            ),
        },
        visual=["Open Ocean exhibit opens Saturday", "Highway shark photo is fake"],
        refine="Category: 1. True\nReason: The aquarium published this exact photo of its new tank.",
    ),
    Scenario(
        id="p11",
        text="The clinic on Elm Street is giving out free vaccines to anyone who shares this post before Friday",
        gold=M,
        image="clinic",
        direct=(M, "Conditioning a medical service on sharing a post is a known engagement-bait pattern."),
        query_raw=json.dumps(
            {
                "title": "fake news Elm Street clinic free vaccines share post",
                "questions": [
                    "Is the Elm Street clinic offering free vaccines?",
                    "Does the clinic require sharing a post?",
                    "Which vaccines does the Elm Street clinic offer?",
                ],
            }
        ),
        search={
            "fake news Elm Street clinic free vaccines share post": [
                _hit("https://health.example.gov/elm-clinic", "Elm Street Clinic vaccination schedule",
                     "Walk-in vaccination on weekdays, by appointment."),
            ],
            "Is the Elm Street clinic offering free vaccines?": [
                _hit("https://health.example.gov/elm-clinic", "Elm Street Clinic vaccination schedule", "Same page."),
            ],
            "Does the clinic require sharing a post?": [],
        },
        relevant={"https://health.example.gov/elm-clinic"},
        pages={
            "https://health.example.gov/elm-clinic": Page(
                "Elm Street Clinic vaccination schedule",
                [
                    "The clinic offers free flu vaccines on weekdays for registered patients.",
                    "The clinic does not run promotions on social media.",
                ],
                published="2024-10-01",
                segments=[
                    "The clinic offers free flu vaccines on weekdays for registered patients.",
                    "The clinic does not run promotions on social media.",
                ],
            ),
        },
        refine="Category: 3. Misleading Content\nReason: Free vaccines exist but are not tied to sharing any post.",
    ),
    Scenario(
        id="p12",
        text="The city council voted last night to rename Central Park after the mayor's late father",
        gold=N,
        direct=(M, "Renaming a major park after a relative of the mayor sounds implausible."),
        gate=False,
    ),
    Scenario(
        id="p14",
        text="Farmers market returns to the old railway station square every Saturday from April to October",
        gold=N,
        image="market",
        direct=(N, "A plain community announcement; the photo shows market stalls."),
        queries=(
            "fake news farmers market railway station square Saturdays",
            "Is there a farmers market at the railway station square?",
            "When does the railway square market run?",
        ),
        search={
            "fake news farmers market railway station square Saturdays": [
                _hit("https://events.example.com/railway-market", "Railway Square Farmers Market",
                     "Every Saturday, April to October."),
                _hit("https://events.example.com/railway-market.pdf", "Market stall map (PDF)", "Download the map."),
            ],
        },
        relevant={"https://events.example.com/railway-market", "https://events.example.com/railway-market.pdf"},
        pages={
            "https://events.example.com/railway-market": Page(
                "Railway Square Farmers Market",
                ["The farmers market runs every Saturday from April to October in the old railway station square."],
                published="2024-03-15",
                segments=["The farmers market runs every Saturday from April to October in the old railway station square."],
            ),
            "https://events.example.com/railway-market.pdf": Page(
                "Market stall map (PDF)", ["%PDF-1.4"], content_type="application/pdf"
            ),
        },
        visual="error",
        refine="Category: 1. True\nReason: The organiser's page lists the same schedule.",
    ),
    Scenario(
        id="p15",
        text="Scientists confirm a second moon has been orbiting Earth unnoticed for the past three years",
        gold=M,
        direct=(N, "Astronomers do find small temporary satellites, so the claim could be accurate."),
        queries=(
            "fake news second moon orbiting Earth three years",
            "Have scientists found a second moon orbiting Earth?",
            "What is a quasi-satellite of Earth?",
        ),
        search={
            "fake news second moon orbiting Earth three years": [
                _hit("https://astro.example.edu/quasi-satellites", "Earth's quasi-satellites explained",
                     "Small asteroids that share Earth's orbit."),
                _hit("https://astro.example.edu/mini-moon-2024", "Mini-moon visits Earth for two months",
                     "A small asteroid was briefly captured."),
            ],
        },
        relevant={"https://astro.example.edu/quasi-satellites", "https://astro.example.edu/mini-moon-2024"},
        pages={
            "https://astro.example.edu/quasi-satellites": Page(
                "Earth's quasi-satellites explained",
                ["Quasi-satellites orbit the Sun, not Earth, although they appear to circle our planet."],
                published="2023-02-01",
                segments=[],
            ),
            "https://astro.example.edu/mini-moon-2024": Page(
                "Mini-moon visits Earth for two months",
                ["A small asteroid was temporarily captured by Earth's gravity for about two months."],
                published="2024-09-30",
            ),
        },
        extraction_raw={"Mini-moon visits Earth for two months": "The page mentions a mini-moon."},
        repairs={"evidence_extraction": "Still no list, sorry."},
        refine="Category: 6. Unverified\nReason: The pages found do not address the claim directly.",
    ),
]

# lines kept in posts.jsonl but rejected at ingestion
REJECTED = [
    {"id": "p13", "text": "so true!!", "label": "non-misinformation"},
    {"id": "p16", "text": "Officials deny reports that the dam spillway failed overnight", "label": "maybe"},
]


def _page_html(page: Page) -> str:
    meta = f'<meta property="article:published_time" content="{page.published}">' if page.published else ""
    paras = "\n".join(f"<p>{p}</p>" for p in page.paragraphs)
    return (
        f"<!doctype html><html><head><title>{page.title}</title>{meta}</head><body>"
        '<nav><a href="/">Home</a> <a href="/about">About</a></nav>'
        f"<article><h1>{page.title}</h1>\n{paras}\n</article>"
        '<div class="cookie-banner">We use cookies.</div>'
        "<script>track()</script><footer>Copyright</footer></body></html>"
    )


# -- scripted responder -----------------------------------------------------------


def _verdict_text(label: str, reason: str, style: str, template_id: str) -> str:
    if template_id == "cot":
        return f"Reason: {reason}\nVerdict: {label}"
    if style == "json":
        return json.dumps({"verdict": label, "reason": reason})
    if style == "bold":
        return f"**Verdict:** {label}\n**Reason:** {reason}"
    if style == "prose":
        word = "is misinformation" if label == M else "is not misinformation"
        return f"{reason} Therefore the post {word}."
    return f"Verdict: {label}\nReason: {reason}"


def _default_queries(s: Scenario) -> tuple[str, str, str]:
    head = " ".join(re.findall(r"[A-Za-z']+", s.text)[:7])
    return (f"fake news {head}", f"Is it true that {head.lower()}?", "Who first reported this claim?")


class Responder:
    def __init__(self, scenarios):
        self.by_id = {s.id: s for s in scenarios}
        self.by_title = {}
        for s in scenarios:
            for page in s.pages.values():
                self.by_title[(s.id, page.title)] = page

    def __call__(self, request: ModelRequest) -> str:
        s = self.by_id[request.metadata["tag"]]
        tid = request.template_id
        prompt = request.rendered_prompt
        if tid in ("direct", "cot", "initial_inference"):
            return _verdict_text(*s.direct, s.direct_style, tid)
        if tid == "external_need":
            return ("External knowledge needed: yes\nThe claim names specific events that need checking."
                    if s.gate else "External knowledge needed: no\nThe post can be judged on its own.")
        if tid == "query_generation":
            if s.query_raw:
                return s.query_raw
            title, q1, q2 = s.queries or _default_queries(s)
            return json.dumps({"title": title, "questions": [q1, q2]})
        if tid == "topic_filter":
            if s.topic_raw:
                return s.topic_raw
            urls = re.findall(r"^\s+URL: (\S+)$", prompt, re.M)
            return json.dumps({str(i): url.split("#")[0].split("?")[0] in s.relevant for i, url in enumerate(urls, 1)})
        if tid == "evidence_extraction":
            title = re.search(r"^Page title: (.*)$", prompt, re.M).group(1)
            if title in s.extraction_raw:
                return s.extraction_raw[title]
            page = self.by_title.get((s.id, title))
            return json.dumps({"segments": list(page.segments) if page else []})
        if tid == "refined_prediction":
            return s.refine or "Category: 6. Unverified\nReason: No outside evidence settles the claim."
        if tid == "format_repair":
            stage = re.search(r'for the "([a-z_]+)" step', prompt).group(1)
            if stage in s.repairs:
                return s.repairs[stage]
            if stage == "query_generation" and s.query_raw:
                return s.query_raw
            return "(no change)"
        raise KeyError(f"no scripted answer for {tid}")


# -- build -------------------------------------------------------------------------


def build(out: Path) -> None:
    if out.exists():
        shutil.rmtree(out)
    (out / "images").mkdir(parents=True)
    store = FixtureStore(out / "fixtures")

    image_bytes = {}
    for name, seed in IMAGES.items():
        data = _png(seed)
        (out / "images" / f"{name}.png").write_bytes(data)
        image_bytes[name] = data

    rows = []
    for s in SCENARIOS:
        row = {"id": s.id, "text": s.text, "label": s.gold, "language": "en"}
        if s.image:
            row["image_path"] = f"images/{s.image}.png"
        rows.append(row)
    rows.extend(REJECTED)
    rows.sort(key=lambda r: r["id"])
    with open(out / "posts.jsonl", "w", encoding="utf-8") as fh:
        for r in rows:
            fh.write(json.dumps(r, ensure_ascii=False) + "\n")

    search = []
    for s in SCENARIOS:
        for query, hits in s.search.items():
            if hits == "timeout":
                search.append({"query": query, "error": "timeout"})
            else:
                search.append({"query": query, "results": hits})
        for url, page in s.pages.items():
            body = "%PDF-1.4 binary" if "pdf" in page.content_type else _page_html(page)
            store.save(
                "pages",
                url_digest(url),
                {"url": url, "status": page.status, "content_type": page.content_type, "body": body},
                url=url,
            )
        if s.image and s.visual:
            entry = {"error": "upstream 503"} if s.visual == "error" else {"titles": list(s.visual)}
            store.save("images", pixel_digest(image_bytes[s.image]), entry, source="reverse_image")
    search.sort(key=lambda e: e["query"])
    (out / "fixtures" / "search.json").write_text(
        json.dumps(search, indent=2, sort_keys=True, ensure_ascii=False) + "\n", encoding="utf-8"
    )

    config = {
        "mode": "replay",
        "fixtures": "fixtures",
        "search_provider": "stub_fixture",
        "image_provider": "stub_fixture",
        "fetch_mode": "fixture",
    }
    (out / "config.yaml").write_text(
        "# offline replay of the bundled corpus\n" + "\n".join(f"{k}: {v}" for k, v in config.items()) + "\n",
        encoding="utf-8",
    )

    loaded = load_dataset(out / "posts.jsonl", "custom_jsonl")
    responder = Responder(SCENARIOS)
    base = PipelineConfig(mode="scripted", record=True, fixtures=str(out / "fixtures"))
    runs = [
        ("lemma", {}),
        ("direct", {}),
        ("cot", {}),
        ("lemma", {"no_initial_stage_infer": True}),
        ("lemma", {"no_visual_retrieval": True}),
    ]
    for method, flags in runs:
        pipeline = Pipeline(base.replace(**flags), script=responder)
        outcomes = pipeline.run_many(loaded.posts, method)
        failed = [o for o in outcomes if not hasattr(o, "category")]
        if failed:
            raise SystemExit(f"{method} {flags}: unexpected failures {failed}")
    store.mark_complete(True)
    print(f"wrote {len(loaded.posts)} posts ({dict(loaded.skipped)} skipped) to {out}")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default=str(Path(__file__).resolve().parent.parent / "corpus"))
    build(Path(ap.parse_args().out))


if __name__ == "__main__":
    main()
