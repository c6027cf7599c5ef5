import hashlib
import json
import random

import httpx
import pytest

from mmverify.errors import (
    FixtureMissing,
    GatewayError,
    MalformedResponse,
    OfflineViolation,
    RateLimited,
    TransportError,
)
from mmverify.fixtures import FixtureStore
from mmverify.gateway import ChatCompletionsClient, Gateway, ModelRequest, RetryPolicy, canonical_digest


def req(prompt="Is this post fake?", **kw):
    return ModelRequest("direct", prompt, **kw)


def oracle_digest(template_id, prompt, image, model, max_tokens, temperature):
    # written independently of the library: hand-ordered keys, no json.dumps(sort_keys)
    img = '{"present":false}' if image is None else '{"present":true,"sha256":"%s"}' % hashlib.sha256(image).hexdigest()
    blob = (
        '{"image":' + img
        + ',"max_tokens":' + str(max_tokens)
        + ',"model_hint":' + json.dumps(model)
        + ',"rendered_prompt":' + json.dumps(prompt, ensure_ascii=False)
        + ',"temperature":' + repr(float(temperature))
        + ',"template_id":' + json.dumps(template_id) + "}"
    )
    return hashlib.sha256(blob.encode()).hexdigest()


# -- digest -------------------------------------------------------------------------


def test_digest_matches_independent_oracle():
    for image in (None, b"", b"\x89PNG..."):
        r = req("Post text: café ☕", image=image, max_tokens=77, temperature=0.5)
        assert canonical_digest(r) == oracle_digest("direct", "Post text: café ☕", image, r.model_hint, 77, 0.5)


def test_digest_ignores_metadata_order():
    a = req(metadata={"tag": "p1", "stage": "x"})
    b = req(metadata={"stage": "x", "tag": "p1"})
    assert canonical_digest(a) == canonical_digest(b)
    assert canonical_digest(a) == canonical_digest(req())


def test_digest_sensitivity():
    assert canonical_digest(req("abc")) == canonical_digest(req("abc"))
    assert canonical_digest(req("abc")) != canonical_digest(req("abd"))
    assert canonical_digest(req(image=None)) != canonical_digest(req(image=b""))
    assert canonical_digest(req(temperature=0.0)) != canonical_digest(req(temperature=0.1))


def test_request_validation():
    with pytest.raises(ValueError):
        ModelRequest("nope", "x")
    with pytest.raises(ValueError):
        ModelRequest("direct", "")
    with pytest.raises(ValueError):
        ModelRequest("direct", "x", temperature=2.5)


# -- replay / record -----------------------------------------------------------------


def test_record_then_replay_is_identity(tmp_path):
    store = FixtureStore(tmp_path)
    rec = Gateway("scripted", store=store, record=True, script=lambda r: "Verdict: misinformation\nReason: x")
    first = rec.complete(req())
    replay = Gateway("replay", store=store)
    again = replay.complete(req())
    assert again.text == first.text
    assert again.request_digest == canonical_digest(req())


def test_replay_unknown_digest(tmp_path):
    with pytest.raises(FixtureMissing):
        Gateway("replay", store=FixtureStore(tmp_path)).complete(req("never recorded"))


def test_record_is_idempotent(tmp_path):
    store = FixtureStore(tmp_path)
    answers = iter(["first", "second"])
    gw = Gateway("scripted", store=store, record=True, script=lambda r: next(answers))
    gw.complete(req())
    gw.complete(req())
    files = list((tmp_path / "model").glob("*.json"))
    assert len(files) == 1
    assert json.loads(files[0].read_text())["response"]["text"] == "first"
    assert len(store.entries()) == 1


def test_calls_are_counted_per_template(tmp_path):
    gw = Gateway("scripted", script=lambda r: "ok")
    gw.complete(req())
    gw.complete(ModelRequest("cot", "x"))
    gw.complete(req("y"))
    assert gw.calls == {"direct": 2, "cot": 1}
    assert gw.total_calls == 3


# -- live client ---------------------------------------------------------------------


def ok_body(text="Verdict: misinformation", finish="stop"):
    return {"choices": [{"message": {"content": text}, "finish_reason": finish}]}


def client(handler, attempts=5):
    sleeps = []
    policy = RetryPolicy(max_attempts=attempts, sleep=sleeps.append, rng=random.Random(0))
    c = ChatCompletionsClient("https://llm.test/v1", "k", retry=policy, transport=httpx.MockTransport(handler))
    return c, sleeps


def test_live_success_and_payload():
    seen = {}

    def handler(request):
        seen["body"] = json.loads(request.content)
        seen["auth"] = request.headers["authorization"]
        return httpx.Response(200, json=ok_body(finish="length"))

    c, _ = client(handler)
    text, finish, raw = c.send(req(image=b"img", image_media_type="image/png"))
    assert text == "Verdict: misinformation" and finish == "truncated"
    content = seen["body"]["messages"][0]["content"]
    assert content[1]["image_url"]["url"].startswith("data:image/png;base64,")
    assert seen["auth"] == "Bearer k"


def test_rate_limit_retried_with_backoff():
    hits = []

    def handler(request):
        hits.append(1)
        return httpx.Response(429) if len(hits) < 3 else httpx.Response(200, json=ok_body())

    c, sleeps = client(handler)
    assert c.send(req())[0] == "Verdict: misinformation"
    assert len(hits) == 3 and c.retries == 2
    assert 0.8 <= sleeps[0] <= 1.2 and 1.6 <= sleeps[1] <= 2.4


def test_rate_limit_budget_exhausted():
    c, sleeps = client(lambda r: httpx.Response(429), attempts=5)
    with pytest.raises(RateLimited):
        c.send(req())
    assert len(sleeps) == 4


def test_transport_errors_retried():
    def handler(request):
        raise httpx.ConnectError("down")

    c, sleeps = client(handler, attempts=3)
    with pytest.raises(TransportError):
        c.send(req())
    assert len(sleeps) == 2


def test_malformed_response_never_retried():
    hits = []

    def handler(request):
        hits.append(1)
        return httpx.Response(200, content=b"<html>oops</html>")

    c, sleeps = client(handler)
    with pytest.raises(MalformedResponse):
        c.send(req())
    assert hits == [1] and sleeps == []

    c2, sleeps2 = client(lambda r: httpx.Response(200, json={"choices": []}))
    with pytest.raises(MalformedResponse):
        c2.send(req())
    assert sleeps2 == []


def test_client_error_not_retried():
    c, sleeps = client(lambda r: httpx.Response(400, text="bad"))
    with pytest.raises(GatewayError):
        c.send(req())
    assert sleeps == []


def test_offline_client_refuses():
    def handler(request):  # pragma: no cover - must not be reached
        raise AssertionError("network used")

    c = ChatCompletionsClient("https://llm.test/v1", "k", transport=httpx.MockTransport(handler), offline=True)
    with pytest.raises(OfflineViolation):
        Gateway("live", client=c).complete(req())


def test_live_record_writes_raw_payload(tmp_path):
    c, _ = client(lambda r: httpx.Response(200, json=ok_body("hello")))
    store = FixtureStore(tmp_path)
    Gateway("live", client=c, store=store, record=True).complete(req())
    d = store.load("model", canonical_digest(req()))
    assert d["response"]["text"] == "hello" and d["raw"]["choices"][0]["message"]["content"] == "hello"
