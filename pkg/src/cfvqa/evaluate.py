"""Accuracy reports: overall and per question type, for biased and debiased
prediction modes, plus the prior-only yardstick and per-sample score
decompositions."""

from __future__ import annotations

import json
from collections import Counter, defaultdict
from dataclasses import dataclass, field

import numpy as np

from .data import KEY_EXACT_QUESTION, KEY_QUESTION_TYPE, QASample
from .encoders import ImageProvider
from .model import MODE_BIASED, MODE_DEBIASED, Model, causal_scores

# Canonical per-type report rows for SLAKE-style data; extra types follow,
# "Other" (used for unmapped types) always last.
CANONICAL_TYPES = ["Abnormal", "Color", "Modality", "Organ", "Plane", "Position", "Size"]
OTHER_TYPE = "Other"


@dataclass
class EvalReport:
    mode: str
    dataset_tag: str
    overall: float
    per_type: dict[str, float]
    counts: dict[str, int]
    total: int
    correct: int

    def row_order(self) -> list[str]:
        known = [t for t in CANONICAL_TYPES if t in self.per_type]
        extra = sorted(t for t in self.per_type if t not in CANONICAL_TYPES and t != OTHER_TYPE)
        tail = [OTHER_TYPE] if OTHER_TYPE in self.per_type else []
        return known + extra + tail

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "dataset": self.dataset_tag,
            "overall": self.overall,
            "per_type": {t: self.per_type[t] for t in self.row_order()},
            "counts": {t: self.counts[t] for t in self.row_order()},
            "total": self.total,
            "correct": self.correct,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        return cls(mode=d["mode"], dataset_tag=d.get("dataset", ""),
                   overall=d["overall"], per_type=dict(d["per_type"]),
                   counts=dict(d["counts"]), total=d["total"], correct=d["correct"])


def _finish(mode: str, tag: str, correct_by_type: dict, count_by_type: dict) -> EvalReport:
    total = sum(count_by_type.values())
    correct = sum(correct_by_type.values())
    per_type = {t: correct_by_type[t] / count_by_type[t] for t in count_by_type}
    return EvalReport(mode=mode, dataset_tag=tag,
                      overall=correct / total if total else 0.0,
                      per_type=per_type, counts=dict(count_by_type),
                      total=total, correct=correct)


def _apply_type_map(qtype: str, type_map: dict[str, str] | None) -> str:
    if type_map is None:
        return qtype
    return type_map.get(qtype, OTHER_TYPE)


def evaluate(model: Model, samples: list[QASample], provider: ImageProvider,
             mode: str = MODE_DEBIASED, type_map: dict[str, str] | None = None,
             dataset_tag: str = "") -> EvalReport:
    """Exact-match accuracy of the checkpoint on normalized answer strings."""
    if mode not in (MODE_BIASED, MODE_DEBIASED):
        raise ValueError(f"unknown mode {mode!r}")
    correct_by_type: dict[str, int] = defaultdict(int)
    count_by_type: dict[str, int] = defaultdict(int)
    for s in samples:
        scores = causal_scores(model, s, provider.get(s.image_ref))
        z = scores.te.data if mode == MODE_BIASED else scores.tie.data
        pred = model.a_vocab.index_to_token[int(np.argmax(z))]
        qtype = _apply_type_map(s.question_type, type_map)
        count_by_type[qtype] += 1
        correct_by_type[qtype] += int(pred == s.answer)
    return _finish(mode, dataset_tag, correct_by_type, count_by_type)


@dataclass
class PriorOnlyPredictor:
    """Train-majority answer per exact question, falling back to the majority
    per question type, then to the global majority."""

    by_question: dict[str, str]
    by_type: dict[str, str]
    global_majority: str
    seen_questions: set[str] = field(default_factory=set)

    @classmethod
    def fit(cls, train_samples: list[QASample]) -> "PriorOnlyPredictor":
        q_counts: dict[str, Counter] = defaultdict(Counter)
        t_counts: dict[str, Counter] = defaultdict(Counter)
        g_counts: Counter = Counter()
        for s in train_samples:
            q_counts[s.question_key][s.answer] += 1
            t_counts[s.question_type][s.answer] += 1
            g_counts[s.answer] += 1
        majority = lambda c: max(c.items(), key=lambda kv: (kv[1], kv[0]))[0]
        return cls(
            by_question={q: majority(c) for q, c in q_counts.items()},
            by_type={t: majority(c) for t, c in t_counts.items()},
            global_majority=majority(g_counts) if g_counts else "",
            seen_questions=set(q_counts),
        )

    def predict(self, sample: QASample) -> str:
        if sample.question_key in self.by_question:
            return self.by_question[sample.question_key]
        if sample.question_type in self.by_type:
            return self.by_type[sample.question_type]
        return self.global_majority


def prior_only_baseline(train_samples: list[QASample], test_samples: list[QASample],
                        key_mode: str = KEY_EXACT_QUESTION,
                        type_map: dict[str, str] | None = None,
                        dataset_tag: str = "") -> EvalReport:
    """How far pure prior-following gets: predict the train-majority answer
    for each test question key. With key_mode=question_type the exact-question
    table is skipped entirely."""
    predictor = PriorOnlyPredictor.fit(train_samples)
    if key_mode == KEY_QUESTION_TYPE:
        predictor.by_question = {}
        predictor.seen_questions = set()
    elif key_mode != KEY_EXACT_QUESTION:
        raise ValueError(f"unknown key_mode {key_mode!r}")
    correct_by_type: dict[str, int] = defaultdict(int)
    count_by_type: dict[str, int] = defaultdict(int)
    for s in test_samples:
        qtype = _apply_type_map(s.question_type, type_map)
        count_by_type[qtype] += 1
        correct_by_type[qtype] += int(predictor.predict(s) == s.answer)
    return _finish("prior_only", dataset_tag, correct_by_type, count_by_type)


def compare(report_biased: EvalReport, report_debiased: EvalReport) -> list[dict]:
    """Side-by-side rows with deltas and a winner mark per row."""
    rows = []
    types = ["Overall"] + sorted(set(report_biased.per_type) | set(report_debiased.per_type),
                                 key=lambda t: (t not in CANONICAL_TYPES, t == OTHER_TYPE,
                                                CANONICAL_TYPES.index(t) if t in CANONICAL_TYPES else 0, t))
    for t in types:
        if t == "Overall":
            a, b = report_biased.overall, report_debiased.overall
        else:
            a = report_biased.per_type.get(t, float("nan"))
            b = report_debiased.per_type.get(t, float("nan"))
        winner = ""
        if not (np.isnan(a) or np.isnan(b)):
            winner = "debiased" if b > a else ("biased" if a > b else "tie")
        rows.append({"row": t, "biased": a, "debiased": b, "delta": b - a, "winner": winner})
    return rows


def write_compare_csv(rows: list[dict], path) -> None:
    import csv
    import io

    from .config import atomic_write_text

    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(["row", "biased", "debiased", "delta", "winner"])
    for r in rows:
        w.writerow([r["row"], f"{r['biased']:.3f}", f"{r['debiased']:.3f}",
                    f"{r['delta']:+.3f}", r["winner"]])
    atomic_write_text(path, buf.getvalue())


def format_compare_markdown(rows: list[dict]) -> str:
    """Markdown table; the winning cell per row is bold."""
    lines = ["| | biased | debiased | delta |", "|---|---|---|---|"]
    for r in rows:
        a = f"{r['biased']:.3f}"
        b = f"{r['debiased']:.3f}"
        if r["winner"] == "biased":
            a = f"**{a}**"
        elif r["winner"] == "debiased":
            b = f"**{b}**"
        elif r["winner"] == "tie":
            a, b = f"**{a}**", f"**{b}**"
        lines.append(f"| {r['row']} | {a} | {b} | {r['delta']:+.3f} |")
    return "\n".join(lines) + "\n"


def explain(model: Model, sample: QASample, image_vec, top_k: int = 5) -> dict:
    """Per-sample decomposition: top answers under the biased scores, the
    bias estimate, and the debiased scores."""
    scores = causal_scores(model, sample, image_vec)

    def top(z: np.ndarray) -> list[list]:
        idx = np.argsort(-z, kind="stable")[:top_k]
        return [[model.a_vocab.index_to_token[int(i)], float(z[int(i)])] for i in idx]

    return {
        "id": sample.id,
        "question": sample.question_raw,
        "ground_truth": sample.answer,
        "biased_prediction": model.a_vocab.index_to_token[int(np.argmax(scores.te.data))],
        "debiased_prediction": model.a_vocab.index_to_token[int(np.argmax(scores.tie.data))],
        "biased_top": top(scores.te.data),
        "bias_top": top(scores.nde.data),
        "debiased_top": top(scores.tie.data),
    }


def write_report_json(report: EvalReport, path) -> None:
    from .config import atomic_write_text

    atomic_write_text(path, json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n")
