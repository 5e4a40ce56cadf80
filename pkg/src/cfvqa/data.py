"""QA record ingestion, vocabularies, and question->answer prior audits.

Canonical on-disk form is JSONL with fields
{id, image_ref, question, answer, question_type}; source-specific key names
come in via a field map so upstream datasets can be adapted without code
changes.
"""

from __future__ import annotations

import json
import logging
import re
from collections import Counter, defaultdict
from dataclasses import dataclass, field, replace
from pathlib import Path

log = logging.getLogger(__name__)

UNK_TOKEN = "<unk>"
SPLIT_TRAIN = "train"
SPLIT_TEST = "test"
SPLIT_UNASSIGNED = "unassigned"

_PUNCT_RE = re.compile(r"[^a-z0-9\s-]+")


class EmptyDatasetError(ValueError):
    pass


def normalize(text: str) -> list[str]:
    """Lowercase, drop punctuation except intra-word hyphens, split on whitespace."""
    cleaned = _PUNCT_RE.sub(" ", text.lower())
    tokens = []
    for tok in cleaned.split():
        tok = tok.strip("-")
        if tok:
            tokens.append(tok)
    return tokens


def normalize_answer(text: str) -> str:
    return " ".join(normalize(text))


@dataclass
class QASample:
    id: str
    image_ref: str
    question_raw: str
    question_tokens: tuple[str, ...]
    answer: str  # normalized
    question_type: str
    split: str = SPLIT_UNASSIGNED

    @property
    def question_key(self) -> str:
        return " ".join(self.question_tokens)


def make_sample(id: str, image_ref: str, question: str, answer: str,
                question_type: str = "", split: str = SPLIT_UNASSIGNED) -> QASample:
    """Build a QASample, enforcing non-empty tokens and answer.

    Raises ValueError when normalization leaves nothing usable.
    """
    tokens = tuple(normalize(question))
    norm_answer = normalize_answer(answer)
    if not tokens:
        raise ValueError(f"sample {id!r}: question is empty after normalization")
    if not norm_answer:
        raise ValueError(f"sample {id!r}: answer is empty after normalization")
    qtype = question_type.strip() or tokens[0].capitalize()
    return QASample(id=id, image_ref=image_ref, question_raw=question,
                    question_tokens=tokens, answer=norm_answer,
                    question_type=qtype, split=split)


@dataclass
class Vocab:
    """Bijective token<->index map; index 0 is reserved for unknown tokens."""

    token_to_index: dict[str, int]
    index_to_token: list[str]

    @classmethod
    def build(cls, tokens) -> "Vocab":
        # sorted assignment keeps vocabularies independent of sample order
        uniq = sorted(set(tokens) - {UNK_TOKEN})
        index_to_token = [UNK_TOKEN] + uniq
        return cls({t: i for i, t in enumerate(index_to_token)}, index_to_token)

    def index(self, token: str) -> int:
        return self.token_to_index.get(token, 0)

    def __len__(self) -> int:
        return len(self.index_to_token)

    def __contains__(self, token: str) -> bool:
        return token in self.token_to_index


def build_vocabs(samples) -> tuple[Vocab, Vocab]:
    """Question vocab over tokens; answer vocab over whole normalized answers."""
    q_tokens = (tok for s in samples for tok in s.question_tokens)
    q_vocab = Vocab.build(q_tokens)
    a_vocab = Vocab.build(s.answer for s in samples)
    return q_vocab, a_vocab


DEFAULT_FIELD_MAP = {
    "id": "qid",
    "image": "img_name",
    "question": "question",
    "answer": "answer",
    "type": "content_type",
    "language": "q_lang",
    "language_keep": "en",
}


@dataclass
class LoadReport:
    samples: list[QASample] = field(default_factory=list)
    skipped: int = 0
    skip_reasons: Counter = field(default_factory=Counter)


def _iter_records(path: Path):
    text = path.read_text(encoding="utf-8")
    stripped = text.lstrip()
    if stripped.startswith("["):
        yield from json.loads(text)
    else:
        for line in text.splitlines():
            line = line.strip()
            if line:
                yield json.loads(line)


def load_dataset(path, field_map: dict | None = None, split: str = SPLIT_UNASSIGNED) -> LoadReport:
    """Read a source JSON/JSONL file into canonical samples.

    Records that fail normalization (missing/empty question or answer) are
    skipped with a logged reason and counted. Raises EmptyDatasetError when
    nothing usable remains.
    """
    path = Path(path)
    if not path.exists():
        raise OSError(f"dataset file not found: {path}")
    fmap = dict(DEFAULT_FIELD_MAP)
    if field_map:
        fmap.update(field_map)

    report = LoadReport()
    lang_key = fmap.get("language") or ""
    lang_keep = fmap.get("language_keep") or ""
    for i, rec in enumerate(_iter_records(path)):
        if not isinstance(rec, dict):
            report.skipped += 1
            report.skip_reasons["not an object"] += 1
            continue
        if lang_key and lang_keep and lang_key in rec and str(rec[lang_key]).lower() != lang_keep:
            report.skipped += 1
            report.skip_reasons["language filtered"] += 1
            continue
        question = rec.get(fmap["question"])
        answer = rec.get(fmap["answer"])
        image = rec.get(fmap["image"])
        if question is None or answer is None or image is None:
            report.skipped += 1
            report.skip_reasons["missing field"] += 1
            continue
        sid = str(rec.get(fmap.get("id", ""), f"{path.stem}-{i:06d}"))
        qtype = str(rec.get(fmap.get("type", ""), "") or "")
        try:
            sample = make_sample(sid, str(image), str(question), str(answer), qtype, split)
        except ValueError as e:
            report.skipped += 1
            report.skip_reasons["normalization failed"] += 1
            log.info("skipping record %d: %s", i, e)
            continue
        report.samples.append(sample)

    if report.skipped:
        log.info("loaded %d samples from %s (%d skipped: %s)",
                 len(report.samples), path, report.skipped, dict(report.skip_reasons))
    if not report.samples:
        raise EmptyDatasetError(f"no usable records in {path} ({report.skipped} skipped)")
    return report


def write_canonical(samples, path) -> None:
    """Canonical JSONL; round-trips exactly through read_canonical."""
    from .config import atomic_write_text

    lines = []
    for s in samples:
        lines.append(json.dumps({
            "id": s.id,
            "image_ref": s.image_ref,
            "question": s.question_raw,
            "answer": s.answer,
            "question_type": s.question_type,
        }, ensure_ascii=False))
    atomic_write_text(path, "\n".join(lines) + ("\n" if lines else ""))


def read_canonical(path, split: str = SPLIT_UNASSIGNED) -> list[QASample]:
    samples = []
    path = Path(path)
    if not path.exists():
        raise OSError(f"dataset file not found: {path}")
    for line in path.read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line:
            continue
        rec = json.loads(line)
        samples.append(make_sample(rec["id"], rec["image_ref"], rec["question"],
                                   rec["answer"], rec.get("question_type", ""), split))
    if not samples:
        raise EmptyDatasetError(f"no records in {path}")
    return samples


def with_split(samples, split: str) -> list[QASample]:
    return [replace(s, split=split) for s in samples]


KEY_EXACT_QUESTION = "exact_question"
KEY_QUESTION_TYPE = "question_type"


def _key_of(sample: QASample, key_mode: str) -> str:
    if key_mode == KEY_EXACT_QUESTION:
        return sample.question_key
    if key_mode == KEY_QUESTION_TYPE:
        return sample.question_type
    raise ValueError(f"unknown key_mode {key_mode!r}")


@dataclass
class PriorTable:
    """Per-key answer histograms, kept separately per split."""

    key_mode: str
    counts: dict  # key -> split -> Counter(answer -> count)

    def dominance(self, key: str, split: str) -> tuple[str, int, int]:
        """(top answer, its count, count of everything else) for one key+split."""
        hist = self.counts.get(key, {}).get(split)
        if not hist:
            return ("", 0, 0)
        top_answer, top_count = max(hist.items(), key=lambda kv: (kv[1], kv[0]))
        rest = sum(hist.values()) - top_count
        return (top_answer, top_count, rest)

    def split_total(self, split: str) -> int:
        return sum(sum(h.values()) for per_split in self.counts.values()
                   for sp, h in per_split.items() if sp == split)

    def rows(self):
        """CSV-ready rows: (key, split, answer, count, 'top:rest')."""
        out = []
        for key in sorted(self.counts):
            for split in sorted(self.counts[key]):
                _, top, rest = self.dominance(key, split)
                ratio = f"{top}:{rest}"
                hist = self.counts[key][split]
                for answer in sorted(hist, key=lambda a: (-hist[a], a)):
                    out.append((key, split, answer, hist[answer], ratio))
        return out


def prior_table(samples, key_mode: str = KEY_EXACT_QUESTION) -> PriorTable:
    counts: dict = defaultdict(lambda: defaultdict(Counter))
    for s in samples:
        counts[_key_of(s, key_mode)][s.split][s.answer] += 1
    return PriorTable(key_mode, {k: dict(v) for k, v in counts.items()})


def write_prior_csv(table: PriorTable, path) -> None:
    import csv
    import io

    from .config import atomic_write_text

    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(["key", "split", "answer", "count", "ratio"])
    for row in table.rows():
        w.writerow(row)
    atomic_write_text(path, buf.getvalue())
