"""Synthetic VQA corpora with controllable question->answer prior skew.

Each question template carries its own answer set; a sample's true answer is
drawn from the template's prior (probability rho for the preferred answer in
train; 1-rho in test when inversion is on) and is then encoded into the image
feature as a per-answer prototype plus unit spherical noise. Prototypes of
one template sit at exact pairwise distance snr, so with two answers the
Bayes-optimal image-only accuracy is Phi(snr / 2) and is identical in both
splits.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import QASample, SPLIT_TEST, SPLIT_TRAIN, make_sample
from .encoders import write_features
from .data import write_canonical
from .rng import Splitmix64

# default snr = 2 * Phi^-1(0.9): Bayes accuracy ~0.9 for two answers
DEFAULT_SNR = 2.5631031310892007

_TEMPLATE_FORMS = [
    ("Abnormal", "are there abnormalities near the {noun}"),
    ("Color", "what color is the {noun} area"),
    ("Modality", "what modality captured the {noun} view"),
    ("Organ", "which organ appears beside the {noun}"),
    ("Plane", "which plane shows the {noun} best"),
    ("Position", "where is the lesion relative to the {noun}"),
    ("Size", "how large is the {noun} shadow"),
]

_NOUNS = ["sternum", "clavicle", "pelvis", "orbit", "trachea", "scapula",
          "vertebra", "mandible", "femur", "humerus", "patella", "radius"]

_ANSWER_PAIRS = [("yes", "no"), ("gray", "white"), ("mri", "ct"),
                 ("liver", "lung"), ("axial", "coronal"), ("left", "right"),
                 ("small", "large"), ("heart", "kidney"), ("upper", "lower"),
                 ("solid", "cystic"), ("acute", "chronic"), ("dense", "faint")]


@dataclass
class SynthConfig:
    n_templates: int = 8
    answers_per_template: int = 2
    feature_dim: int = 64
    snr: float = DEFAULT_SNR
    rho: float = 0.9           # train-split probability of the preferred answer
    invert_test: bool = True   # test uses 1 - rho for the preferred answer
    n_train: int = 2000
    n_test: int = 500
    seed: int = 0

    def validate(self) -> None:
        if not 0.5 <= self.rho <= 1.0:
            raise ValueError(f"rho must be in [0.5, 1.0], got {self.rho}")
        for name in ("n_templates", "answers_per_template", "feature_dim", "n_train", "n_test"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.answers_per_template < 2:
            raise ValueError("answers_per_template must be >= 2")
        if self.snr <= 0:
            raise ValueError(f"snr must be positive, got {self.snr}")

    @property
    def bayes_accuracy(self) -> float:
        """Optimal image-only accuracy between any two answers of a template."""
        return 0.5 * (1.0 + math.erf(self.snr / (2.0 * math.sqrt(2.0))))


@dataclass
class Template:
    index: int
    question: str
    question_type: str
    answers: list[str]  # answers[0] is the preferred one

    @property
    def preferred(self) -> str:
        return self.answers[0]


@dataclass
class SynthData:
    train: list[QASample]
    test: list[QASample]
    features: dict[str, np.ndarray]
    templates: list[Template]
    config: SynthConfig


def _make_templates(cfg: SynthConfig) -> list[Template]:
    templates = []
    for i in range(cfg.n_templates):
        qtype, form = _TEMPLATE_FORMS[i % len(_TEMPLATE_FORMS)]
        noun = _NOUNS[i % len(_NOUNS)]
        if i >= len(_NOUNS):
            noun = f"{noun}{i // len(_NOUNS)}"
        if i < len(_ANSWER_PAIRS):
            answers = list(_ANSWER_PAIRS[i])
        else:
            answers = [f"alpha{i}", f"beta{i}"]
        while len(answers) < cfg.answers_per_template:
            answers.append(f"option{i}x{len(answers)}")
        templates.append(Template(index=i, question=form.format(noun=noun),
                                  question_type=qtype,
                                  answers=answers[:cfg.answers_per_template]))
    return templates


def _orthonormal(rng: Splitmix64, dim: int, count: int) -> np.ndarray:
    """Gram-Schmidt over random normals; rows are orthonormal."""
    if count > dim:
        raise ValueError(f"cannot place {count} orthonormal directions in {dim} dims")
    basis = np.zeros((count, dim), dtype=np.float64)
    made = 0
    while made < count:
        v = rng.normal(dim).astype(np.float64)
        for b in basis[:made]:
            v -= (v @ b) * b
        norm = np.linalg.norm(v)
        if norm > 1e-6:
            basis[made] = v / norm
            made += 1
    return basis


def _prototypes(cfg: SynthConfig, rng: Splitmix64) -> np.ndarray:
    """(templates, answers, dim): pairwise distance within a template is snr."""
    protos = np.zeros((cfg.n_templates, cfg.answers_per_template, cfg.feature_dim),
                      dtype=np.float32)
    radius = cfg.snr / math.sqrt(2.0)
    for t in range(cfg.n_templates):
        base = rng.normal(cfg.feature_dim).astype(np.float64) * 2.0
        dirs = _orthonormal(rng, cfg.feature_dim, cfg.answers_per_template)
        for a in range(cfg.answers_per_template):
            protos[t, a] = (base + radius * dirs[a]).astype(np.float32)
    return protos


def generate(cfg: SynthConfig) -> SynthData:
    """Deterministic corpus: identical seeds give identical samples/features.

    The train stream is drawn before the test stream, so two configs that
    differ only in invert_test share the exact same train split.
    """
    cfg.validate()
    templates = _make_templates(cfg)
    rng = Splitmix64(cfg.seed)
    protos = _prototypes(cfg, rng.derive(1))
    train_rng = rng.derive(2)
    test_rng = rng.derive(3)

    features: dict[str, np.ndarray] = {}

    def draw(split: str, n: int, pref_prob: float, stream: Splitmix64) -> list[QASample]:
        out = []
        for j in range(n):
            t = templates[stream.randint(cfg.n_templates)]
            if stream.random() < pref_prob:
                a_idx = 0
            else:
                a_idx = 1 + stream.randint(cfg.answers_per_template - 1)
            ref = f"synth/{split}/{j:06d}"
            features[ref] = (protos[t.index, a_idx]
                             + stream.normal(cfg.feature_dim)).astype(np.float32)
            out.append(make_sample(
                id=f"{split}-{j:06d}", image_ref=ref, question=t.question,
                answer=t.answers[a_idx], question_type=t.question_type, split=split))
        return out

    train = draw(SPLIT_TRAIN, cfg.n_train, cfg.rho, train_rng)
    test_pref = (1.0 - cfg.rho) if cfg.invert_test else cfg.rho
    test = draw(SPLIT_TEST, cfg.n_test, test_pref, test_rng)
    return SynthData(train=train, test=test, features=features,
                     templates=templates, config=cfg)


def write_synth(data: SynthData, out_dir) -> dict[str, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {
        "train": out_dir / "train.jsonl",
        "test": out_dir / "test.jsonl",
        "features": out_dir / "features.jsonl",
    }
    write_canonical(data.train, paths["train"])
    write_canonical(data.test, paths["test"])
    write_features(data.features, paths["features"])
    return paths
