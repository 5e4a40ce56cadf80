"""Training loop: the model deliberately absorbs the question->answer prior
during training (per-branch losses make the bias explicit and learnable), so
the counterfactual branch can subtract it at inference.

Loss per sample:
    lambda_k * CE(TE, a) + lambda_q * CE(z_q, a) + lambda_v * CE(z_v, a)
  + lambda_cf * CE(NDE, a)
where the counterfactual term updates only q_star / v_star (all other
parameters are stop-gradient constants inside that term).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .data import QASample, Vocab, build_vocabs
from .encoders import EncoderDims, ImageProvider
from .model import (BIAS_QUESTION, FUSION_SUM, Model, counterfactual_scores,
                    factual_scores, init_model)
from .rng import Splitmix64

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 32
    lr: float = 1e-3
    optimizer: str = "adam"  # adam | sgd
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    lambda_k: float = 1.0
    lambda_q: float = 1.0
    lambda_v: float = 1.0
    lambda_cf: float = 1.0
    fusion: str = FUSION_SUM
    bias_mode: str = BIAS_QUESTION
    seed: int = 0
    dims: EncoderDims = field(default_factory=EncoderDims)

    def validate(self) -> None:
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        for name in ("lambda_k", "lambda_q", "lambda_v", "lambda_cf"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0, got {getattr(self, name)}")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"optimizer must be adam or sgd, got {self.optimizer!r}")


def sample_loss(model: Model, sample: QASample, image_vec, target: int,
                cfg: TrainConfig) -> T.Tensor:
    """Weighted multi-branch objective for one sample."""
    te, branches = factual_scores(model, sample, image_vec)
    loss = T.scale(T.cross_entropy(te, target), cfg.lambda_k)
    if cfg.lambda_q:
        loss = T.add(loss, T.scale(T.cross_entropy(branches.z_q, target), cfg.lambda_q))
    if cfg.lambda_v:
        loss = T.add(loss, T.scale(T.cross_entropy(branches.z_v, target), cfg.lambda_v))
    if cfg.lambda_cf:
        nde = counterfactual_scores(model, branches, stop_gradient=True)
        loss = T.add(loss, T.scale(T.cross_entropy(nde, target), cfg.lambda_cf))
    return loss


@dataclass
class TrainResult:
    model: Model
    metrics: list[dict]  # one row per epoch: epoch, loss, acc_biased


def _biased_accuracy(model: Model, samples, vectors) -> float:
    correct = 0
    for s, vec in zip(samples, vectors):
        te, _ = factual_scores(model, s, vec)
        pred = model.a_vocab.index_to_token[int(np.argmax(te.data))]
        correct += int(pred == s.answer)
    return correct / len(samples)


def train(samples: list[QASample], provider: ImageProvider, cfg: TrainConfig) -> TrainResult:
    """Deterministic given cfg.seed; vocabularies come from the train split only."""
    cfg.validate()
    if not samples:
        raise ValueError("train split is empty")

    q_vocab, a_vocab = build_vocabs(samples)
    dims = cfg.dims
    if dims.image_input_dim <= 0:
        dims.image_input_dim = int(provider.get(samples[0].image_ref).size)
    model = init_model(q_vocab, a_vocab, dims, seed=cfg.seed,
                       fusion=cfg.fusion, bias_mode=cfg.bias_mode)
    params = model.params.named()
    if cfg.optimizer == "adam":
        opt = T.Adam(params, lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.eps)
    else:
        opt = T.SGD(params, lr=cfg.lr)

    vectors = [provider.get(s.image_ref) for s in samples]
    targets = [a_vocab.index(s.answer) for s in samples]
    order = list(range(len(samples)))
    shuffle_rng = Splitmix64(cfg.seed).derive(1)

    metrics: list[dict] = []
    for epoch in range(1, cfg.epochs + 1):
        shuffle_rng.shuffle(order)
        epoch_loss = 0.0
        for start in range(0, len(order), cfg.batch_size):
            batch = order[start:start + cfg.batch_size]
            opt.zero_grad()
            batch_loss = 0.0
            for idx in batch:
                with T.Tape() as tape:
                    loss = sample_loss(model, samples[idx], vectors[idx], targets[idx], cfg)
                    tape.backward(loss)
                value = loss.item()
                if not np.isfinite(value):
                    raise T.TrainingError(
                        f"non-finite loss at epoch {epoch}, batch starting {start}, sample {samples[idx].id}")
                batch_loss += value
            inv = np.float32(1.0 / len(batch))
            for p in params.values():
                if p.grad is not None:
                    p.grad *= inv
            opt.step()
            epoch_loss += batch_loss
        acc = _biased_accuracy(model, samples, vectors)
        row = {"epoch": epoch, "loss": epoch_loss / len(order), "acc_biased": acc}
        metrics.append(row)
        log.info("epoch %d: loss %.4f, train acc (biased) %.3f", epoch, row["loss"], acc)
    return TrainResult(model=model, metrics=metrics)


def write_metrics_csv(metrics: list[dict], path) -> None:
    import csv
    import io

    from .config import atomic_write_text

    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(["epoch", "loss", "acc_biased"])
    for row in metrics:
        w.writerow([row["epoch"], f"{row['loss']:.6f}", f"{row['acc_biased']:.6f}"])
    atomic_write_text(path, buf.getvalue())
