"""Dataset ingestion, metrics in the per-class Rumor/Non-Rumor layout, run reports."""

from __future__ import annotations

import json
import logging
import os
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Optional, Union

from .core import (
    BinaryLabel,
    FinalVerdict,
    ImageRef,
    PostRecord,
    SourceDataset,
    sniff_media_type,
    validate_post,
)
from .errors import FileUnreadable, IdSetMismatch, LengthMismatch, MalformedRecord
from .pipeline import FailureRecord

logger = logging.getLogger(__name__)

FORMATS = ("twitter_jsonl", "fakeddit_jsonl", "custom_jsonl")

_LABELS = {
    "misinformation": BinaryLabel.MISINFORMATION,
    "fake": BinaryLabel.MISINFORMATION,
    "rumor": BinaryLabel.MISINFORMATION,
    "rumour": BinaryLabel.MISINFORMATION,
    "false": BinaryLabel.MISINFORMATION,
    "humor": BinaryLabel.MISINFORMATION,
    "non_misinformation": BinaryLabel.NON_MISINFORMATION,
    "non-misinformation": BinaryLabel.NON_MISINFORMATION,
    "nonmisinformation": BinaryLabel.NON_MISINFORMATION,
    "real": BinaryLabel.NON_MISINFORMATION,
    "true": BinaryLabel.NON_MISINFORMATION,
    "non-rumor": BinaryLabel.NON_MISINFORMATION,
    "non_rumor": BinaryLabel.NON_MISINFORMATION,
    "nonrumor": BinaryLabel.NON_MISINFORMATION,
}


def parse_label(value) -> BinaryLabel:
    if isinstance(value, BinaryLabel):
        return value
    try:
        return _LABELS[str(value).strip().lower()]
    except KeyError:
        raise MalformedRecord("bad_label", f"unknown label {value!r}") from None


# -- ingestion ------------------------------------------------------------------------

@dataclass
class DatasetLoad:
    posts: list[PostRecord]
    skipped: Counter = field(default_factory=Counter)
    skip_records: list[tuple[int, str]] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.posts)

    def __iter__(self):
        return iter(self.posts)


def _find_image(base: Path, stem: str) -> Optional[Path]:
    for sub in ("images", "."):
        d = base / sub
        for ext in (".jpg", ".jpeg", ".png", ".gif", ".webp"):
            p = d / f"{stem}{ext}"
            if p.exists():
                return p
    return None


def _image_from(row: dict, base: Path, stem_key: Optional[str], url_keys=("image_url",)) -> Optional[ImageRef]:
    path = row.get("image_path")
    if path is None and stem_key and row.get(stem_key):
        stem = str(row[stem_key]).split(",")[0].strip()
        found = _find_image(base, stem)
        path = str(found) if found else None
        if path is None:
            raise MalformedRecord("image_unreadable")
    if path is not None:
        p = Path(path)
        if not p.is_absolute():
            p = base / p
        try:
            data = p.read_bytes()
        except OSError:
            raise MalformedRecord("image_unreadable") from None
        mime = sniff_media_type(data)
        if mime is None:
            raise MalformedRecord("undecodable_image")
        return ImageRef(data=data, media_type=mime, path=str(path))
    for key in url_keys:
        if row.get(key):
            return ImageRef(url=str(row[key]))
    return None


def _row_to_post(row: dict, fmt: str, base: Path, fakeddit_true_value: int) -> PostRecord:
    if fmt == "custom_jsonl":
        pid, text = row.get("id"), row.get("text")
        label = row.get("label")
        image = _image_from(row, base, None)
        source = SourceDataset(row.get("source_dataset", "custom"))
    elif fmt == "twitter_jsonl":
        pid = row.get("post_id", row.get("id"))
        text = row.get("post_text", row.get("text"))
        label = row.get("label")
        image = _image_from(row, base, "image_id")
        source = SourceDataset.TWITTER
    else:
        pid = row.get("id")
        text = row.get("clean_title", row.get("title", row.get("text")))
        if "6_way_label" in row:
            label = BinaryLabel.NON_MISINFORMATION if int(row["6_way_label"]) == 0 else BinaryLabel.MISINFORMATION
        elif "2_way_label" in row:
            true_value = int(row["2_way_label"]) == fakeddit_true_value
            label = BinaryLabel.NON_MISINFORMATION if true_value else BinaryLabel.MISINFORMATION
        else:
            label = row.get("label")
        image = _image_from(row, base, "id" if "image_url" not in row else None)
        source = SourceDataset.FAKEDDIT
    if pid is None or str(pid) == "":
        raise MalformedRecord("missing_id")
    if not isinstance(text, str) or not text.strip():
        raise MalformedRecord("missing_text")
    return PostRecord(
        id=str(pid),
        text=text,
        image=image,
        gold_label=parse_label(label) if label is not None else None,
        language=row.get("language", row.get("lang")),
        source_dataset=source,
    )


def load_dataset(
    path: Union[str, os.PathLike],
    format: str = "custom_jsonl",
    min_text_len: int = 20,
    *,
    require_image: bool = False,
    fakeddit_true_value: int = 1,
    image_fetcher: Optional[Callable[[str], bytes]] = None,
) -> DatasetLoad:
    """One post per JSONL line, filtered by :func:`validate_post`.

    Bad lines are skipped and counted by reason; an unreadable file raises
    FileUnreadable. ``image_fetcher`` resolves ``image_url`` references.
    """
    if format not in FORMATS:
        raise ValueError(f"unknown dataset format {format!r}")
    p = Path(path)
    try:
        lines = p.read_text(encoding="utf-8").splitlines()
    except (OSError, UnicodeDecodeError) as exc:
        raise FileUnreadable(f"cannot read dataset {p}: {exc}") from exc
    out = DatasetLoad([])

    def skip(lineno: int, reason: str):
        out.skipped[reason] += 1
        out.skip_records.append((lineno, reason))
        logger.debug("%s:%d skipped (%s)", p, lineno, reason)

    seen: set[str] = set()
    for lineno, line in enumerate(lines, 1):
        if not line.strip():
            continue
        try:
            row = json.loads(line)
            if not isinstance(row, dict):
                raise MalformedRecord("malformed_json")
            post = _row_to_post(row, format, p.parent, fakeddit_true_value)
        except ValueError as exc:
            skip(lineno, "malformed_json" if isinstance(exc, json.JSONDecodeError) else "invalid_record")
            continue
        except MalformedRecord as exc:
            skip(lineno, exc.reason)
            continue
        if post.image is not None and post.image.data is None and image_fetcher is not None:
            try:
                data = image_fetcher(post.image.url)
            except Exception:
                skip(lineno, "image_unreadable")
                continue
            mime = sniff_media_type(data)
            if mime is None:
                skip(lineno, "undecodable_image")
                continue
            post = PostRecord(
                post.id,
                post.text,
                ImageRef(data=data, media_type=mime, url=post.image.url),
                post.gold_label,
                post.language,
                post.source_dataset,
            )
        check = validate_post(post, min_text_len, require_image)
        if not check:
            skip(lineno, check.reason)
            continue
        if require_image and post.image is not None and post.image.data is None:
            skip(lineno, "missing_image")
            continue
        if post.id in seen:
            skip(lineno, "duplicate_id")
            continue
        seen.add(post.id)
        out.posts.append(post)
    return out


# -- metrics ----------------------------------------------------------------------------

@dataclass(frozen=True)
class ClassScores:
    precision: float
    recall: float
    f1: float

    def to_dict(self) -> dict:
        return {"precision": self.precision, "recall": self.recall, "f1": self.f1}


def _ratio(num: int, den: int) -> float:
    return num / den if den else 0.0


def _scores(tp: int, fp: int, fn: int) -> ClassScores:
    p = _ratio(tp, tp + fp)
    r = _ratio(tp, tp + fn)
    f1 = 2 * p * r / (p + r) if p + r else 0.0
    return ClassScores(p, r, f1)


@dataclass(frozen=True)
class MetricsTable:
    accuracy: float
    rumor: ClassScores
    non_rumor: ClassScores
    # confusion counts with the Rumor class as positive
    tp: int
    fp: int
    fn: int
    tn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    @property
    def per_class(self) -> dict:
        return {"Rumor": self.rumor, "NonRumor": self.non_rumor}

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "per_class": {"rumor": self.rumor.to_dict(), "non_rumor": self.non_rumor.to_dict()},
            "counts": {"tp": self.tp, "fp": self.fp, "fn": self.fn, "tn": self.tn},
        }


def compute_metrics(
    predictions: Iterable[BinaryLabel],
    gold: Iterable[BinaryLabel],
    rumor_label: BinaryLabel = BinaryLabel.MISINFORMATION,
) -> MetricsTable:
    """Accuracy plus precision/recall/F1 for the Rumor and Non-Rumor blocks.

    ``rumor_label`` is the positive class of the Rumor block; zero
    denominators give 0.
    """
    predictions, gold = list(predictions), list(gold)
    if len(predictions) != len(gold):
        raise LengthMismatch(f"{len(predictions)} predictions vs {len(gold)} gold labels")
    if not predictions:
        raise LengthMismatch("need at least one prediction")
    tp = fp = fn = tn = 0
    for pred, true in zip(predictions, gold):
        pos_pred = pred is rumor_label
        pos_true = true is rumor_label
        if pos_pred and pos_true:
            tp += 1
        elif pos_pred:
            fp += 1
        elif pos_true:
            fn += 1
        else:
            tn += 1
    return MetricsTable(
        accuracy=(tp + tn) / len(predictions),
        rumor=_scores(tp, fp, fn),
        non_rumor=_scores(tn, fn, fp),
        tp=tp,
        fp=fp,
        fn=fn,
        tn=tn,
    )


# -- run reports ---------------------------------------------------------------------------

Outcome = Union[FinalVerdict, FailureRecord]


@dataclass
class RunReport:
    method: str
    dataset: str
    config: dict
    post_ids: list[str]
    gold: dict[str, Optional[BinaryLabel]]
    outcomes: dict[str, Outcome]
    stats: dict = field(default_factory=dict)
    skipped: dict = field(default_factory=dict)
    # nondeterministic numbers; written to a sidecar, never to the main report
    timing: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(set(self.post_ids)) != len(self.post_ids) or set(self.post_ids) != set(self.outcomes):
            raise ValueError("every input post must appear exactly once")

    @classmethod
    def build(cls, method, dataset, config, posts, outcomes, **kw) -> "RunReport":
        return cls(
            method=method,
            dataset=dataset,
            config=config,
            post_ids=[p.id for p in posts],
            gold={p.id: p.gold_label for p in posts},
            outcomes={p.id: o for p, o in zip(posts, outcomes)},
            **kw,
        )

    @property
    def verdicts(self) -> dict[str, FinalVerdict]:
        return {k: v for k, v in self.outcomes.items() if isinstance(v, FinalVerdict)}

    @property
    def failures(self) -> list[FailureRecord]:
        return [self.outcomes[i] for i in self.post_ids if isinstance(self.outcomes[i], FailureRecord)]

    def correct_ids(self) -> set[str]:
        return {
            i
            for i, v in self.verdicts.items()
            if self.gold.get(i) is not None and v.binary is self.gold[i]
        }

    def metrics(self) -> Optional[MetricsTable]:
        scored = [i for i in self.post_ids if i in self.verdicts and self.gold.get(i) is not None]
        if not scored:
            return None
        return compute_metrics([self.verdicts[i].binary for i in scored], [self.gold[i] for i in scored])

    def to_dict(self) -> dict:
        m = self.metrics()
        posts = []
        for i in self.post_ids:
            o = self.outcomes[i]
            g = self.gold.get(i)
            entry = {"post_id": i, "gold": g.value if g else None}
            if isinstance(o, FinalVerdict):
                entry["verdict"] = o.to_dict()
            else:
                entry["failure"] = o.to_dict()
            posts.append(entry)
        return {
            "method": self.method,
            "dataset": self.dataset,
            "config": self.config,
            "posts": posts,
            "metrics": m.to_dict() if m else None,
            "totals": {
                "input": len(self.post_ids),
                "verdicts": len(self.verdicts),
                "failures": len(self.failures),
            },
            "stats": self.stats,
            "skipped": dict(sorted(self.skipped.items())),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RunReport":
        outcomes: dict[str, Outcome] = {}
        gold = {}
        ids = []
        for e in d["posts"]:
            ids.append(e["post_id"])
            gold[e["post_id"]] = BinaryLabel(e["gold"]) if e.get("gold") else None
            if "verdict" in e:
                outcomes[e["post_id"]] = FinalVerdict.from_dict(e["verdict"])
            else:
                outcomes[e["post_id"]] = FailureRecord.from_dict(e["failure"])
        return cls(d["method"], d["dataset"], d["config"], ids, gold, outcomes, d.get("stats", {}), d.get("skipped", {}))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True, ensure_ascii=False) + "\n"

    @classmethod
    def load(cls, path: Union[str, os.PathLike]) -> "RunReport":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def write(self, out_dir: Union[str, os.PathLike], stem: str = "run_report") -> dict[str, Path]:
        """Write the report JSON, its rendered table and the timing sidecar."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {
            "json": out / f"{stem}.json",
            "table": out / f"{stem}.txt",
            "timing": out / f"{stem}.timing.json",
        }
        paths["json"].write_text(self.to_json(), encoding="utf-8")
        paths["table"].write_text(render_table({self.method: self}), encoding="utf-8")
        paths["timing"].write_text(json.dumps(self.timing, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return paths


def render_table(reports: dict[str, "RunReport"], dataset: Optional[str] = None) -> str:
    """Plain-text table: Accuracy, then P/R/F1 for Rumor and Non-Rumor."""
    header = (
        f"{'Method':<28} {'Accuracy':>8} | {'Rumor P':>7} {'R':>6} {'F1':>6} | {'Non-Rumor P':>11} {'R':>6} {'F1':>6}"
    )
    lines = []
    if dataset or reports:
        lines.append(f"Dataset: {dataset or next(iter(reports.values())).dataset}")
    lines += [header, "-" * len(header)]
    for name, report in reports.items():
        m = report.metrics()
        if m is None:
            lines.append(f"{name:<28} {'n/a':>8}")
            continue
        r, n = m.rumor, m.non_rumor
        lines.append(
            f"{name:<28} {m.accuracy:>8.3f} | {r.precision:>7.3f} {r.recall:>6.3f} {r.f1:>6.3f} | "
            f"{n.precision:>11.3f} {n.recall:>6.3f} {n.f1:>6.3f}"
        )
    for name, report in reports.items():
        m = report.metrics()
        lines.append(
            f"{name}: {len(report.post_ids)} posts, {len(report.verdicts)} verdicts, "
            f"{len(report.failures)} failures"
            + (f", confusion tp={m.tp} fp={m.fp} fn={m.fn} tn={m.tn}" if m else "")
        )
    return "\n".join(lines) + "\n"


# -- agreement -----------------------------------------------------------------------------

@dataclass(frozen=True)
class AgreementStats:
    total: int
    a_correct: int
    b_correct: int
    retained: int
    lost: int
    gained: int

    @property
    def replication(self) -> float:
        """Share of A's correct posts that B also gets right (1.0 when A has none)."""
        return self.retained / self.a_correct if self.a_correct else 1.0

    @property
    def gain(self) -> float:
        """Posts only B gets right, as a share of all posts."""
        return self.gained / self.total if self.total else 0.0

    @property
    def net_gain(self) -> float:
        return (self.gained - self.lost) / self.total if self.total else 0.0

    def to_dict(self) -> dict:
        return {
            "total": self.total,
            "a_correct": self.a_correct,
            "b_correct": self.b_correct,
            "retained": self.retained,
            "lost": self.lost,
            "gained": self.gained,
            "replication": self.replication,
            "gain": self.gain,
            "net_gain": self.net_gain,
        }


def compare_runs(run_a: RunReport, run_b: RunReport) -> AgreementStats:
    if set(run_a.post_ids) != set(run_b.post_ids):
        raise IdSetMismatch("runs cover different post ids")
    a, b = run_a.correct_ids(), run_b.correct_ids()
    return AgreementStats(
        total=len(run_a.post_ids),
        a_correct=len(a),
        b_correct=len(b),
        retained=len(a & b),
        lost=len(a - b),
        gained=len(b - a),
    )


def render_agreement(stats: AgreementStats, a_name: str = "A", b_name: str = "B") -> str:
    """Two-ring summary: the inner ring is A's correct set, the outer ring B's."""
    pct = lambda x: f"{100 * x:.1f}%"  # noqa: E731
    lost_share = stats.lost / stats.a_correct if stats.a_correct else 0.0
    return "\n".join(
        [
            f"{a_name} correct: {stats.a_correct} of {stats.total}",
            f"  also correct in {b_name}: {stats.retained} ({pct(stats.replication)})",
            f"  lost by {b_name}: {stats.lost} ({pct(lost_share)})",
            f"{b_name} correct: {stats.b_correct} of {stats.total}",
            f"  gained over {a_name}: {stats.gained} ({pct(stats.gain)} of all posts)",
            f"Net gain: {stats.gained - stats.lost:+d} posts ({'+' if stats.net_gain >= 0 else ''}{pct(stats.net_gain)})",
        ]
    ) + "\n"

