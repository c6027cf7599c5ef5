import json

import pytest

from conftest import DATA, png, post, scripted_prompter
from mmverify.core import BinaryLabel, DirectResult, PromptVariant
from mmverify.errors import ParseFailure
from mmverify.inference import (
    ModelSettings,
    Prompter,
    assess_external_need,
    classify_phrase,
    parse_verdict,
    parse_verdict_once,
    parse_yes_no,
    render_verdict,
    run_direct,
)
from mmverify.gateway import Gateway

M, N = BinaryLabel.MISINFORMATION, BinaryLabel.NON_MISINFORMATION
VERDICTS = json.loads((DATA / "verdict_outputs.json").read_text())


def test_labeled_outputs_agree():
    hits = sum(
        (parse_verdict_once(e["raw"]) or (None,))[0] is BinaryLabel(e["label"]) for e in VERDICTS["labeled"]
    )
    assert hits >= 48


@pytest.mark.parametrize("raw", VERDICTS["unparseable"])
def test_unparseable_outputs_need_repair(raw):
    assert parse_verdict_once(raw) is None
    with pytest.raises(ParseFailure):
        parse_verdict(raw)


def test_repair_called_at_most_once():
    calls = []

    def repair():
        calls.append(1)
        return "Verdict: non-misinformation\nReason: fixed"

    label, why = parse_verdict("no idea", repair=repair)
    assert label is N and why == "fixed" and calls == [1]

    calls.clear()
    with pytest.raises(ParseFailure):
        parse_verdict("no idea", repair=lambda: calls.append(1) or "still no idea")
    assert calls == [1]


def test_repair_not_called_when_parse_succeeds():
    parse_verdict("Verdict: misinformation", repair=lambda: pytest.fail("repair used"))


def test_negation_and_phrases():
    assert classify_phrase("not misinformation") is N
    assert classify_phrase("not real") is M
    assert classify_phrase("fake") is M
    assert classify_phrase("genuine") is N
    assert parse_verdict_once("It is hard to say if it is fake or real.") is None


def test_render_round_trip():
    for label in (M, N):
        assert parse_verdict(render_verdict(label, "why"))[0] is label


def test_run_direct_variants():
    seen = []

    def answer(r):
        seen.append(r)
        return "Reason: x\nVerdict: misinformation" if r.template_id == "cot" else "Verdict: misinformation\nReason: y"

    p = scripted_prompter(answer)
    item = post(image=png())
    d = run_direct(p, item)
    c = run_direct(p, item, PromptVariant.COT)
    i = run_direct(p, item, initial_stage=True)
    assert [r.template_id for r in seen] == ["direct", "cot", "initial_inference"]
    assert d.prediction is M and c.prompt_variant is PromptVariant.COT and i.rationale == "y"
    assert seen[0].image == item.image.data and seen[0].image_media_type == "image/png"
    assert "Let's think step by step." in seen[1].rendered_prompt
    assert "step by step" not in seen[0].rendered_prompt.lower()


def test_run_direct_uses_repair_template_once():
    seen = []

    def answer(r):
        seen.append(r.template_id)
        return "Verdict: non-misinformation\nReason: ok" if r.template_id == "format_repair" else "hmm"

    d = run_direct(scripted_prompter(answer), post())
    assert d.prediction is N and seen == ["direct", "format_repair"]


def test_summarize_mode_sends_no_image():
    seen = []

    def answer(r):
        seen.append(r)
        return "A flooded street." if r.template_id == "image_summary" else "Verdict: misinformation\nReason: r"

    p = Prompter(Gateway("scripted", script=answer), settings=ModelSettings(image_mode="summarize"))
    run_direct(p, post(image=png()))
    assert seen[0].template_id == "image_summary" and seen[0].image is not None
    assert seen[1].image is None and "A flooded street." in seen[1].rendered_prompt


GATES = json.loads((DATA / "gate_outputs.json").read_text())


def test_gate_fixture_agreement():
    agree = 0
    for e in GATES:
        p = scripted_prompter(lambda r, e=e: e["response"])
        d = DirectResult(M, e["rationale"])
        agree += assess_external_need(p, post(), d) == e["needs"]
    assert agree >= 18


def test_gate_parse_and_repair():
    assert parse_yes_no("External knowledge needed: yes") is True
    assert parse_yes_no("maybe") is None
    answers = iter(["perhaps", "External knowledge needed: no"])
    assert assess_external_need(scripted_prompter(lambda r: next(answers)), post(), DirectResult(M, "r")) is False
    with pytest.raises(ParseFailure):
        assess_external_need(scripted_prompter(lambda r: "perhaps"), post(), DirectResult(M, "r"))
