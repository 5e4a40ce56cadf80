"""Greedy re-splitting: build train/test splits whose per-question answer
priors differ, while the training set keeps full word coverage of the test set.

Groups of samples sharing one (normalized question, answer) pair are the
atomic unit; a group never straddles the split, so for any exact question the
train and test answer supports are disjoint.

Selection rules (the greedy loop needs two argmax choices; these are the
documented tie-breaks, applied in order):
  test pick:   maximize |concepts(group) - C_test|,
               then larger member count, then lexicographically smaller key.
  train pick:  maximize |concepts(group) & (C_test - C_train)|,
               then larger member count, then lexicographically smaller key.
Keys are unique per group, so the lexicographic stage is total and the
seeded PRNG tie-break never actually fires; the seed is kept for
reproducibility bookkeeping.

The loop alternates test pick / train pick until the test set holds at least
test_fraction of all samples, then assigns every remaining group to train,
then repairs word coverage by moving uncovered test groups to train.
"""

from __future__ import annotations

import json
from collections import defaultdict
from dataclasses import dataclass
from pathlib import Path

from .data import QASample, SPLIT_TEST, SPLIT_TRAIN, with_split
from .rng import Splitmix64


class InfeasibleSplitError(RuntimeError):
    pass


@dataclass(frozen=True)
class QAGroup:
    """All samples sharing one (normalized question, normalized answer) pair."""

    key: tuple[str, str]
    member_ids: tuple[str, ...]
    concept_set: frozenset[str]

    @property
    def size(self) -> int:
        return len(self.member_ids)


def concepts(question_key: str, answer: str) -> frozenset[str]:
    """Word set of a group: question tokens plus answer tokens."""
    return frozenset(question_key.split()) | frozenset(answer.split())


def group_samples(samples) -> list[QAGroup]:
    """Partition samples into (question, answer) groups, sorted by key."""
    members: dict[tuple[str, str], list[str]] = defaultdict(list)
    for s in samples:
        members[(s.question_key, s.answer)].append(s.id)
    groups = []
    for key in sorted(members):
        ids = tuple(sorted(members[key]))
        groups.append(QAGroup(key=key, member_ids=ids, concept_set=concepts(*key)))
    return groups


@dataclass
class SplitResult:
    train_ids: tuple[str, ...]
    test_ids: tuple[str, ...]
    stats: dict


def _pick(candidates: list[QAGroup], score) -> QAGroup:
    best = None
    best_rank = None
    for g in candidates:
        rank = (-score(g), -g.size, g.key)
        if best_rank is None or rank < best_rank:
            best_rank = rank
            best = g
    return best


def greedy_resplit(groups: list[QAGroup], test_fraction: float = 0.3, seed: int = 0) -> SplitResult:
    """Run the greedy loop over groups and return the repaired assignment."""
    if not 0.0 < test_fraction < 1.0:
        raise ValueError(f"test_fraction must be in (0, 1), got {test_fraction}")
    if len(groups) < 2:
        raise InfeasibleSplitError(
            f"need at least 2 (question, answer) groups to split, got {len(groups)}: "
            + ", ".join(str(g.key) for g in groups))

    _ = Splitmix64(seed)  # reserved final tie-break; unreachable (keys are unique)
    total = sum(g.size for g in groups)
    target = test_fraction * total

    remaining = list(groups)
    train: list[QAGroup] = []
    test: list[QAGroup] = []
    c_train: set[str] = set()
    c_test: set[str] = set()
    test_count = 0

    while test_count < target and remaining:
        g_test = _pick(remaining, lambda g: len(g.concept_set - c_test))
        test.append(g_test)
        c_test |= g_test.concept_set
        remaining.remove(g_test)
        test_count += g_test.size
        if not remaining:
            break
        wanted = c_test - c_train
        g_train = _pick(remaining, lambda g: len(g.concept_set & wanted))
        train.append(g_train)
        c_train |= g_train.concept_set
        remaining.remove(g_train)

    train.extend(remaining)
    for g in remaining:
        c_train |= g.concept_set

    train, test, repaired = coverage_repair(train, test)

    if not test:
        raise InfeasibleSplitError(
            "coverage repair emptied the test set; blocking groups: "
            + ", ".join(str(g.key) for g in repaired))

    test_count = sum(g.size for g in test)
    achieved = test_count / total
    train_words = set().union(*(g.concept_set for g in train)) if train else set()
    test_words = set().union(*(g.concept_set for g in test)) if test else set()
    last_test_size = test[-1].size if test else 0
    within = abs(achieved - test_fraction) <= 0.05
    stats = {
        "test_fraction_target": test_fraction,
        "test_fraction_achieved": achieved,
        "fraction_within_tolerance": within,
        "fraction_short_due_to_repair": (not within) and achieved < test_fraction and len(repaired) > 0,
        "fraction_over_due_to_group_size": (not within) and achieved > test_fraction
                                            and last_test_size > 0.05 * total,
        "word_coverage_ok": test_words <= train_words,
        "repaired_group_count": len(repaired),
        "group_count": len(groups),
        "train_groups": len(train),
        "test_groups": len(test),
        "total_samples": total,
    }
    train_ids = tuple(sid for g in train for sid in g.member_ids)
    test_ids = tuple(sid for g in test for sid in g.member_ids)
    return SplitResult(train_ids=train_ids, test_ids=test_ids, stats=stats)


def coverage_repair(train: list[QAGroup], test: list[QAGroup]):
    """Move test groups whose words are not covered by train into train.

    Repeats to fixpoint; never moves train -> test. Returns
    (train, test, moved_groups).
    """
    train = list(train)
    test = list(test)
    c_train: set[str] = set()
    for g in train:
        c_train |= g.concept_set
    moved: list[QAGroup] = []
    changed = True
    while changed:
        changed = False
        still_test = []
        for g in test:
            if g.concept_set <= c_train:
                still_test.append(g)
            else:
                train.append(g)
                c_train |= g.concept_set
                moved.append(g)
                changed = True
        test = still_test
    return train, test, moved


def apply_split(samples, result: SplitResult) -> tuple[list[QASample], list[QASample]]:
    """Materialize a SplitResult into tagged train/test sample lists."""
    by_id = {s.id: s for s in samples}
    train = with_split([by_id[i] for i in result.train_ids], SPLIT_TRAIN)
    test = with_split([by_id[i] for i in result.test_ids], SPLIT_TEST)
    return train, test


def resplit_dataset(samples, test_fraction: float = 0.3, seed: int = 0):
    """Group, split, and report in one call.

    Returns (train_samples, test_samples, SplitResult) with the per-type
    divergence table attached to the stats.
    """
    groups = group_samples(samples)
    result = greedy_resplit(groups, test_fraction=test_fraction, seed=seed)
    train, test = apply_split(samples, result)
    report = split_report(train, test)
    result.stats["per_type_divergence"] = {t: row["tv_distance"] for t, row in report.items()}
    return train, test, result


def _proportions(samples) -> dict[str, float]:
    counts: dict[str, int] = defaultdict(int)
    for s in samples:
        counts[s.answer] += 1
    n = sum(counts.values())
    return {a: c / n for a, c in counts.items()} if n else {}


def split_report(train_samples, test_samples) -> dict:
    """Per question-type answer proportions for each split, plus their
    total-variation distance."""
    by_type: dict[str, dict[str, list]] = defaultdict(lambda: {"train": [], "test": []})
    for s in train_samples:
        by_type[s.question_type]["train"].append(s)
    for s in test_samples:
        by_type[s.question_type]["test"].append(s)

    report = {}
    for qtype in sorted(by_type):
        p_train = _proportions(by_type[qtype]["train"])
        p_test = _proportions(by_type[qtype]["test"])
        answers = set(p_train) | set(p_test)
        tv = 0.5 * sum(abs(p_train.get(a, 0.0) - p_test.get(a, 0.0)) for a in answers)
        report[qtype] = {
            "train": p_train,
            "test": p_test,
            "train_count": len(by_type[qtype]["train"]),
            "test_count": len(by_type[qtype]["test"]),
            "tv_distance": tv,
        }
    return report


def write_report_csv(report: dict, path) -> None:
    import csv
    import io

    from .config import atomic_write_text

    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(["question_type", "split", "answer", "proportion", "tv_distance"])
    for qtype, row in report.items():
        for split_name in ("train", "test"):
            props = row[split_name]
            for answer in sorted(props, key=lambda a: (-props[a], a)):
                w.writerow([qtype, split_name, answer,
                            f"{props[answer]:.6f}", f"{row['tv_distance']:.6f}"])
    atomic_write_text(path, buf.getvalue())


_PALETTE = ["#4e79a7", "#f28e2b", "#e15759", "#76b7b2", "#59a14f",
            "#edc948", "#b07aa1", "#ff9da7", "#9c755f", "#bab0ac"]


def _esc(text: str) -> str:
    return text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def write_report_svg(report: dict, path) -> None:
    """Grouped stacked-bar chart: per question type, one train and one test
    bar stacked by answer proportion, annotated with the TV distance."""
    types = list(report.keys())
    answers = sorted({a for row in report.values()
                      for split in ("train", "test") for a in row[split]})
    color = {a: _PALETTE[i % len(_PALETTE)] for i, a in enumerate(answers)}

    bar_w, gap, group_gap, h, margin_top, margin_bottom, margin_left = 28, 6, 30, 220, 30, 70, 40
    group_w = 2 * bar_w + gap
    width = margin_left + len(types) * (group_w + group_gap) + 200

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
             f'height="{h + margin_top + margin_bottom + 18 * min(len(answers), 12)}" '
             f'font-family="sans-serif" font-size="11">']
    parts.append(f'<text x="{margin_left}" y="16" font-size="13">answer proportions per question type '
                 '(left bar: train, right bar: test)</text>')
    for ti, qtype in enumerate(types):
        x0 = margin_left + ti * (group_w + group_gap)
        row = report[qtype]
        for si, split_name in enumerate(("train", "test")):
            x = x0 + si * (bar_w + gap)
            y = margin_top + h
            props = row[split_name]
            for a in sorted(props, key=lambda a: (-props[a], a)):
                seg = props[a] * h
                y -= seg
                parts.append(f'<rect x="{x}" y="{y:.1f}" width="{bar_w}" height="{seg:.1f}" '
                             f'fill="{color[a]}"><title>{_esc(qtype)}/{split_name}: {_esc(a)} {props[a]:.2f}</title></rect>')
        parts.append(f'<text x="{x0}" y="{margin_top + h + 14}">{_esc(qtype)}</text>')
        parts.append(f'<text x="{x0}" y="{margin_top + h + 28}" fill="#555">TV={row["tv_distance"]:.2f}</text>')
    for i, a in enumerate(answers[:12]):
        y = margin_top + h + 46 + 18 * i
        parts.append(f'<rect x="{margin_left}" y="{y - 9}" width="12" height="12" fill="{color[a]}"/>')
        parts.append(f'<text x="{margin_left + 18}" y="{y}">{_esc(a)}</text>')
    if len(answers) > 12:
        y = margin_top + h + 46 + 18 * 12
        parts.append(f'<text x="{margin_left}" y="{y}">... {len(answers) - 12} more answers</text>')
    parts.append("</svg>")
    from .config import atomic_write_text
    atomic_write_text(path, "\n".join(parts))


def write_stats_json(result: SplitResult, path) -> None:
    from .config import atomic_write_text
    atomic_write_text(path, json.dumps(result.stats, indent=2, sort_keys=True) + "\n")
