"""Direct/CoT prompting, initial-stage inference and the external-knowledge gate."""

from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass, field
from typing import Callable, Optional

from .core import BinaryLabel, DirectResult, ImageRef, PostRecord, PromptVariant
from .errors import ParseFailure
from .gateway import (
    DEFAULT_MAX_TOKENS,
    DEFAULT_MODEL_HINT,
    DEFAULT_TEMPERATURE,
    Gateway,
    ModelRequest,
)
from .prompts import TemplateRegistry

logger = logging.getLogger(__name__)

COT_TRIGGER = "Let's think step by step"
NEGATION_WINDOW = 4

VERDICT_FORMAT = "Verdict: <misinformation or non-misinformation>\nReason: <one short paragraph>"
GATE_FORMAT = "External knowledge needed: <yes or no>"


@dataclass
class ModelSettings:
    model_hint: str = DEFAULT_MODEL_HINT
    max_tokens: int = DEFAULT_MAX_TOKENS
    temperature: float = DEFAULT_TEMPERATURE
    # "attach" sends the image to the model; "summarize" replaces it with a
    # text description for text-only models.
    image_mode: str = "attach"


@dataclass(frozen=True)
class PostContext:
    """Per-post view handed to every prompt: the image payload and its note."""

    post: PostRecord
    image: Optional[bytes]
    media_type: Optional[str]
    image_note: str


class Prompter:
    """Renders templates and sends them through the gateway."""

    def __init__(
        self,
        gateway: Gateway,
        registry: Optional[TemplateRegistry] = None,
        settings: Optional[ModelSettings] = None,
    ):
        self.gateway = gateway
        self.registry = registry or TemplateRegistry()
        self.settings = settings or ModelSettings()

    def ask(
        self,
        template_id: str,
        *,
        image: Optional[bytes] = None,
        media_type: Optional[str] = None,
        tag: str = "",
        **values,
    ) -> str:
        prompt = self.registry.render(template_id, **values)
        request = ModelRequest(
            template_id=template_id,
            rendered_prompt=prompt,
            image=image,
            image_media_type=media_type if image is not None else None,
            model_hint=self.settings.model_hint,
            max_tokens=self.settings.max_tokens,
            temperature=self.settings.temperature,
            metadata={"tag": tag} if tag else {},
        )
        return self.gateway.complete(request).text

    def repair(self, stage: str, previous: str, format_rules: str, tag: str = "") -> str:
        return self.ask(
            "format_repair",
            stage=stage,
            previous_output=previous,
            format_rules=format_rules,
            tag=tag,
        )

    def context_for(self, post: PostRecord) -> PostContext:
        img: Optional[ImageRef] = post.image
        if img is None or img.data is None:
            return PostContext(post, None, None, "The post has no image.")
        if self.settings.image_mode == "summarize":
            summary = summarize_image(self, img.data, img.media_type, tag=post.id)
            return PostContext(post, None, None, f"Image description: {summary}")
        return PostContext(post, img.data, img.media_type or "image/png", "The image of the post is attached.")


# -- verdict parsing ----------------------------------------------------------

_KEY_LINE = re.compile(
    r"^[\s*#>\-]*(?:final\s+)?(verdict|prediction|label|classification|answer|conclusion|judgement|judgment)"
    r"[\s*]*[:=]\s*(.+)$",
    re.I | re.M,
)
_REASON_KEY = re.compile(r"^[\s*#>\-]*(reason|reasoning|rationale|explanation)[\s*]*[:=]\s*", re.I | re.M)
_INLINE_REASON = re.compile(r"[,;]\s*(reason|reasoning|rationale|because)\b[\s:=]*", re.I)
_TOKEN = re.compile(r"[a-z0-9]+(?:['’\-][a-z0-9]+)*")
_SENTENCE = re.compile(r"(?<=[.!?])\s+|\n+")

_MISINFO_WORDS = {"misinformation", "fake", "rumor", "rumour", "hoax", "misinformative", "disinformation"}
_NON_WORDS = {
    "non-misinformation",
    "nonmisinformation",
    "non-rumor",
    "non-rumour",
    "real",
    "genuine",
    "authentic",
    "legitimate",
}
_NEGATORS = {"not", "no", "never", "without", "nor", "neither", "non", "hardly", "lacks", "lack", "free"}
_CUES = (
    "therefore",
    "thus",
    "hence",
    "overall",
    "in conclusion",
    "conclusion",
    "to conclude",
    "final",
    "verdict",
    "in summary",
    "so the post",
    "so this",
    "i conclude",
    "consequently",
    "my answer",
)
_HEDGES = (
    "cannot determine",
    "can't determine",
    "cannot be determined",
    "unable to determine",
    "not possible to determine",
    "impossible to determine",
    "cannot tell",
    "can't tell",
    "hard to say",
    "may or may not",
    "unclear whether",
    "not sure",
    "cannot say",
    "can't say",
    "insufficient information",
    "cannot conclude",
    "can't conclude",
    "unable to conclude",
    "cannot verify",
    "unable to verify",
)


def _is_negator(tok: str) -> bool:
    return tok in _NEGATORS or tok.endswith("n't") or tok.endswith("n’t") or tok == "cannot"


def _signals(text: str) -> list[BinaryLabel]:
    toks = _TOKEN.findall(text.lower())
    out = []
    for i, tok in enumerate(toks):
        if tok in _MISINFO_WORDS:
            label = BinaryLabel.MISINFORMATION
        elif tok in _NON_WORDS:
            label = BinaryLabel.NON_MISINFORMATION
        else:
            continue
        if any(_is_negator(t) for t in toks[max(0, i - NEGATION_WINDOW):i]):
            label = BinaryLabel.NON_MISINFORMATION if label.is_misinformation else BinaryLabel.MISINFORMATION
        out.append(label)
    return out


def _unanimous(labels: list[BinaryLabel]) -> Optional[BinaryLabel]:
    return labels[0] if labels and all(lab is labels[0] for lab in labels) else None


def classify_phrase(text: str) -> Optional[BinaryLabel]:
    """Label a short verdict phrase, or None when it is empty or contradictory."""
    return _unanimous(_signals(text))


def _keyword_scan(raw: str) -> Optional[BinaryLabel]:
    sentences = [s for s in _SENTENCE.split(raw) if s.strip()]
    lowered = raw.lower()
    cue_sentences = [s for s in sentences if any(c in s.lower() for c in _CUES) and _signals(s)]
    if cue_sentences:
        return classify_phrase(cue_sentences[-1])
    if any(h in lowered for h in _HEDGES):
        return None
    label = _unanimous(_signals(raw))
    if label is not None:
        return label
    for s in sentences:
        if _signals(s):
            return classify_phrase(s)
    return None


def _strict_scan(raw: str) -> Optional[tuple[BinaryLabel, str]]:
    obj = _json_object(raw)
    if obj is not None:
        for key in ("verdict", "prediction", "label", "answer"):
            if isinstance(obj.get(key), str):
                label = classify_phrase(obj[key])
                if label is not None:
                    reason = next(
                        (str(obj[k]) for k in ("reason", "reasoning", "rationale", "explanation") if obj.get(k)),
                        "",
                    )
                    return label, reason.strip()
    matches = list(_KEY_LINE.finditer(raw))
    for m in reversed(matches):
        value = m.group(2)
        inline = _INLINE_REASON.search(value)
        head = value[: inline.start()] if inline else value
        head = re.split(r"[.;(]", head, maxsplit=1)[0]
        label = classify_phrase(head)
        if label is None:
            continue
        rest = (value[inline.end():] if inline else "").strip()
        outside = (raw[: m.start()] + "\n" + rest + "\n" + raw[m.end():]).strip()
        return label, _clean_rationale(outside)
    return None


def _clean_rationale(text: str) -> str:
    text = _REASON_KEY.sub("", text)
    return "\n".join(line.strip() for line in text.splitlines() if line.strip())


def _json_object(raw: str) -> Optional[dict]:
    text = raw.strip()
    fence = re.search(r"```(?:json)?\s*(.*?)```", text, re.S)
    if fence:
        text = fence.group(1).strip()
    start, end = text.find("{"), text.rfind("}")
    if start < 0 or end <= start:
        return None
    try:
        obj = json.loads(text[start:end + 1])
    except ValueError:
        return None
    return obj if isinstance(obj, dict) else None


def parse_verdict_once(raw: str) -> Optional[tuple[BinaryLabel, str]]:
    """Strict scan, then keyword fallback; None when neither yields a label."""
    strict = _strict_scan(raw)
    if strict is not None:
        return strict
    label = _keyword_scan(raw)
    if label is None:
        return None
    return label, _clean_rationale(raw)


def parse_verdict(raw: str, repair: Optional[Callable[[], str]] = None) -> tuple[BinaryLabel, str]:
    """Extract (label, rationale) from free-text model output.

    ``repair`` is called at most once, when neither scan finds a label, and
    should return the model's restatement in the strict format.
    """
    if not raw or not raw.strip():
        if repair is None:
            raise ParseFailure("empty model output")
    else:
        parsed = parse_verdict_once(raw)
        if parsed is not None:
            return parsed
    if repair is None:
        raise ParseFailure(f"no verdict found in {raw[:80]!r}")
    repaired = repair()
    parsed = parse_verdict_once(repaired or "")
    if parsed is None:
        raise ParseFailure(f"no verdict found after repair in {repaired[:80]!r}")
    label, rationale = parsed
    return label, rationale or _clean_rationale(raw)


def render_verdict(label: BinaryLabel, rationale: str) -> str:
    """Strict textual form understood by :func:`parse_verdict`."""
    word = "misinformation" if label.is_misinformation else "non-misinformation"
    return f"Verdict: {word}\nReason: {rationale}"


# -- stages -------------------------------------------------------------------

def run_direct(
    prompter: Prompter,
    post: PostRecord,
    variant: PromptVariant = PromptVariant.DIRECT,
    *,
    initial_stage: bool = False,
    ctx: Optional[PostContext] = None,
) -> DirectResult:
    """One-call classification with the Direct or CoT prompt.

    ``initial_stage`` selects the pipeline's first-stage prompt, which asks
    for a consistency assessment that later stages build on.
    """
    ctx = ctx or prompter.context_for(post)
    if initial_stage:
        template_id = "initial_inference"
    else:
        template_id = "cot" if variant is PromptVariant.COT else "direct"
    raw = prompter.ask(
        template_id,
        image=ctx.image,
        media_type=ctx.media_type,
        tag=post.id,
        text=post.text,
        image_note=ctx.image_note,
    )
    label, rationale = parse_verdict(
        raw, repair=lambda: prompter.repair(template_id, raw, VERDICT_FORMAT, tag=post.id)
    )
    return DirectResult(
        prediction=label,
        rationale=rationale or raw.strip(),
        needs_external=False,
        prompt_variant=variant,
    )


_YES_NO_LINE = re.compile(r"^[\s*#>\-]*([a-z][a-z \-_]*?)[\s*]*[:=]\s*\**\s*(yes|no|true|false)\b", re.I | re.M)
_LEADING = re.compile(r"^[\s*\"'`]*(yes|no)\b", re.I)


def parse_yes_no(raw: str) -> Optional[bool]:
    obj = _json_object(raw)
    if obj is not None:
        for v in obj.values():
            if isinstance(v, bool):
                return v
            if isinstance(v, str) and v.strip().lower() in ("yes", "no", "true", "false"):
                return v.strip().lower() in ("yes", "true")
    lines = list(_YES_NO_LINE.finditer(raw))
    if lines:
        preferred = [m for m in lines if re.search(r"need|external|answer|knowledge|required", m.group(1), re.I)]
        m = (preferred or lines)[-1]
        return m.group(2).lower() in ("yes", "true")
    m = _LEADING.match(raw)
    if m:
        return m.group(1).lower() == "yes"
    return None


def assess_external_need(
    prompter: Prompter, post: PostRecord, direct: DirectResult, *, tag: str = ""
) -> bool:
    """Ask the model whether the first-stage reasoning needs outside evidence."""
    raw = prompter.ask(
        "external_need",
        tag=tag or post.id,
        text=post.text,
        prediction=_label_word(direct.prediction),
        reasoning=direct.rationale,
    )
    answer = parse_yes_no(raw)
    if answer is None:
        repaired = prompter.repair("external_need", raw, GATE_FORMAT, tag=tag or post.id)
        answer = parse_yes_no(repaired)
        if answer is None:
            raise ParseFailure(f"gate answer is not yes/no: {raw[:80]!r}")
    return answer


def summarize_image(prompter: Prompter, image: bytes, media_type: Optional[str] = None, *, tag: str = "") -> str:
    text = prompter.ask("image_summary", image=image, media_type=media_type or "image/png", tag=tag).strip()
    if not text:
        raise ParseFailure("empty image summary")
    return text


def _label_word(label: BinaryLabel) -> str:
    return "misinformation" if label.is_misinformation else "non-misinformation"
