import json
import os
import random

import pytest

from conftest import DATA, png
from mmverify.core import BinaryLabel, DirectResult, FinalVerdict, FineCategory, PostRecord
from mmverify.errors import FileUnreadable, IdSetMismatch, LengthMismatch
from mmverify.evaluation import (
    RunReport,
    compare_runs,
    compute_metrics,
    load_dataset,
    render_agreement,
    render_table,
)
from mmverify.pipeline import FailureRecord

M, N = BinaryLabel.MISINFORMATION, BinaryLabel.NON_MISINFORMATION


def brute_force(pred, gold):
    """Reference metrics straight from the confusion-matrix definitions."""
    out = {"accuracy": sum(p == g for p, g in zip(pred, gold)) / len(gold)}
    for name, pos in (("rumor", M), ("non_rumor", N)):
        tp = sum(1 for p, g in zip(pred, gold) if p == pos and g == pos)
        fp = sum(1 for p, g in zip(pred, gold) if p == pos and g != pos)
        fn = sum(1 for p, g in zip(pred, gold) if p != pos and g == pos)
        prec = tp / (tp + fp) if tp + fp > 0 else 0.0
        rec = tp / (tp + fn) if tp + fn > 0 else 0.0
        out[name] = (prec, rec, 0.0 if prec + rec == 0 else 2 * prec * rec / (prec + rec))
    return out


def assert_matches(m, ref):
    assert m.accuracy == pytest.approx(ref["accuracy"], abs=1e-12)
    for name in ("rumor", "non_rumor"):
        got = getattr(m, name)
        assert (got.precision, got.recall, got.f1) == pytest.approx(ref[name], abs=1e-12)


def test_metrics_against_brute_force():
    rng = random.Random(7)
    for _ in range(1000):
        n = rng.randint(1, 200)
        bias = rng.random()
        gold = [M if rng.random() < bias else N for _ in range(n)]
        pred = [M if rng.random() < rng.random() else N for _ in range(n)]
        assert_matches(compute_metrics(pred, gold), brute_force(pred, gold))


def test_metrics_zero_division():
    m = compute_metrics([N, N], [N, N])
    assert m.rumor.precision == m.rumor.recall == m.rumor.f1 == 0.0
    assert m.non_rumor.f1 == 1.0 and m.accuracy == 1.0
    m = compute_metrics([M], [N])
    assert m.accuracy == 0.0 and m.non_rumor.precision == 0.0


def test_metrics_length_mismatch():
    with pytest.raises(LengthMismatch):
        compute_metrics([M], [M, N])
    with pytest.raises(LengthMismatch):
        compute_metrics([], [])


# -- run reports and agreement -------------------------------------------------------------


def verdict(label):
    return FinalVerdict.resolve(FineCategory.UNVERIFIED, DirectResult(label, "r"), used_external=False)


def report(method, ids, gold, preds):
    outcomes = {i: verdict(p) if p is not None else FailureRecord(i, "refine", "ParseFailure", "x")
                for i, p in zip(ids, preds)}
    return RunReport(method, "d", {}, list(ids), dict(zip(ids, gold)), outcomes)


def constructed_pair():
    ids = [f"p{i:03d}" for i in range(100)]
    gold = [M if i % 2 else N for i in range(100)]
    flip = {M: N, N: M}
    # A: first 10 wrong, rest right
    a = [flip[g] if i < 10 else g for i, g in enumerate(gold)]
    # B: fixes 2 of A's errors, breaks 1 of A's corrects
    b = list(a)
    b[0], b[1] = gold[0], gold[1]
    b[50] = flip[gold[50]]
    return report("A", ids, gold, a), report("B", ids, gold, b)


def test_compare_runs_constructed_pair():
    a, b = constructed_pair()
    s = compare_runs(a, b)
    assert (s.a_correct, s.b_correct, s.retained, s.lost, s.gained) == (90, 91, 89, 1, 2)
    assert s.replication == 89 / 90
    assert s.net_gain == pytest.approx(0.01)
    text = render_agreement(s, "A", "B")
    assert "89 (98.9%)" in text and "Net gain: +1 posts (+1.0%)" in text


def test_compare_runs_id_mismatch():
    a = report("A", ["x", "y"], [M, M], [M, M])
    b = report("B", ["x", "z"], [M, M], [M, M])
    with pytest.raises(IdSetMismatch):
        compare_runs(a, b)


def test_failures_count_as_incorrect():
    a = report("A", ["x", "y"], [M, N], [M, None])
    assert a.correct_ids() == {"x"} and len(a.failures) == 1
    assert a.metrics().total == 1


def test_report_round_trip(tmp_path):
    a, _ = constructed_pair()
    a.stats = {"model_calls_total": 3}
    a.timing = {"wall_clock_s": 1.5}
    paths = a.write(tmp_path, "a")
    again = RunReport.load(paths["json"])
    assert again.to_json() == a.to_json()
    assert "wall_clock_s" not in paths["json"].read_text()
    assert json.loads(paths["timing"].read_text()) == {"wall_clock_s": 1.5}
    assert "0.900" in paths["table"].read_text()


def test_render_table_layout():
    a, b = constructed_pair()
    lines = render_table({"A": a, "B": b}).splitlines()
    assert lines[0] == "Dataset: d"
    assert "Accuracy" in lines[1] and "Rumor P" in lines[1] and "Non-Rumor P" in lines[1]
    assert lines[3].startswith("A ") and lines[4].startswith("B ")


# -- ingestion --------------------------------------------------------------------------------


def test_synthetic_fixture_counts():
    loaded = load_dataset(DATA / "synthetic_posts.jsonl", "custom_jsonl")
    assert len(loaded.posts) == 10
    assert sum(loaded.skipped.values()) == 2 and loaded.skipped["text_too_short"] == 2
    assert loaded.posts[2].image.data is not None and loaded.posts[2].image.media_type == "image/png"


def write(tmp_path, name, rows):
    p = tmp_path / name
    p.write_text("\n".join(r if isinstance(r, str) else json.dumps(r) for r in rows) + "\n")
    return p


def test_skip_reasons(tmp_path):
    p = write(tmp_path, "d.jsonl", [
        {"id": "a", "text": "long enough text for the filter", "label": "fake"},
        {"id": "a", "text": "another long enough text here", "label": "real"},
        "{not json",
        ["a", "list"],
        {"id": "b", "text": "long enough text for the filter", "label": "perhaps"},
        {"id": "c", "text": "long enough text for the filter", "image_path": "missing.png"},
        {"id": "d", "label": "fake"},
    ])
    loaded = load_dataset(p)
    assert [x.id for x in loaded.posts] == ["a"]
    assert dict(loaded.skipped) == {
        "duplicate_id": 1, "malformed_json": 2, "bad_label": 1, "image_unreadable": 1, "missing_text": 1,
    }


def test_require_image(tmp_path):
    (tmp_path / "i.png").write_bytes(png())
    p = write(tmp_path, "d.jsonl", [
        {"id": "a", "text": "long enough text for the filter", "image_path": "i.png"},
        {"id": "b", "text": "long enough text for the filter"},
    ])
    loaded = load_dataset(p, require_image=True)
    assert [x.id for x in loaded.posts] == ["a"] and loaded.skipped["missing_image"] == 1


def test_twitter_and_fakeddit_formats(tmp_path):
    (tmp_path / "images").mkdir()
    (tmp_path / "images" / "sandy_1.jpg").write_bytes(png())
    tw = write(tmp_path, "tw.jsonl", [
        {"post_id": "1", "post_text": "Shark swimming on the highway after Sandy", "image_id": "sandy_1", "label": "fake"},
        {"post_id": "2", "post_text": "Satirical take on the storm coverage today", "image_id": "sandy_1", "label": "humor"},
        {"post_id": "3", "post_text": "Storm damage photo from the boardwalk", "image_id": "nope", "label": "real"},
    ])
    loaded = load_dataset(tw, "twitter_jsonl")
    assert [p.gold_label for p in loaded.posts] == [M, M] and loaded.skipped["image_unreadable"] == 1
    assert loaded.posts[0].source_dataset.value == "twitter"

    fd = write(tmp_path, "fd.jsonl", [
        {"id": "x1", "clean_title": "my cat learned to open the fridge door", "6_way_label": 0, "2_way_label": 0,
         "image_url": "https://i.example/x1.jpg"},
        {"id": "x2", "clean_title": "scientists discover the moon is made of cheese", "2_way_label": 0,
         "image_url": "https://i.example/x2.jpg"},
        {"id": "x3", "clean_title": "city council approves new bike lanes downtown", "2_way_label": 1,
         "image_url": "https://i.example/x3.jpg"},
    ])
    loaded = load_dataset(fd, "fakeddit_jsonl", image_fetcher=lambda url: png())
    assert [p.gold_label for p in loaded.posts] == [N, M, N]
    assert all(p.image.data for p in loaded.posts)


def test_unreadable_file(tmp_path):
    with pytest.raises(FileUnreadable):
        load_dataset(tmp_path / "absent.jsonl")
