"""Three-branch causal answer model with counterfactual bias subtraction.

Factual path: question and image encodings q, v are fused into knowledge k;
three single-layer heads score every answer from q, v, and k, and a fusion
rule combines the branch scores into the biased prediction TE.

Counterfactual path: the question branch stays factual while the image and
knowledge inputs are replaced by learnable stand-in vectors (v_star, and
k_star fused from q_star and v_star); fusing those branch scores gives the
bias estimate NDE, which is constant across samples that share a question.

Debiased prediction: TIE = TE - NDE.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .data import QASample, Vocab
from .encoders import (EncoderDims, EncoderParams, ImageProvider, encode_image,
                       encode_question, fuse, init_encoder_params, linear_init,
                       tokens_to_ids)
from .rng import Splitmix64

FUSION_SUM = "sum"
FUSION_HM = "hm"
BIAS_QUESTION = "question"
BIAS_VISION = "vision"


@dataclass
class BranchLogits:
    z_q: T.Tensor
    z_v: T.Tensor
    z_k: T.Tensor


@dataclass
class CausalScores:
    te: T.Tensor   # factual fused scores (biased prediction)
    nde: T.Tensor  # counterfactual fused scores (the bias)
    tie: T.Tensor  # te - nde (debiased prediction)


@dataclass
class ModelParams:
    enc: EncoderParams
    w_hq: T.Tensor
    b_hq: T.Tensor
    w_hv: T.Tensor
    b_hv: T.Tensor
    w_hk: T.Tensor
    b_hk: T.Tensor
    q_star: T.Tensor
    v_star: T.Tensor

    def named(self) -> dict[str, T.Tensor]:
        out = dict(self.enc.named())
        out.update({
            "head_q.w": self.w_hq, "head_q.b": self.b_hq,
            "head_v.w": self.w_hv, "head_v.b": self.b_hv,
            "head_k.w": self.w_hk, "head_k.b": self.b_hk,
            "q_star": self.q_star, "v_star": self.v_star,
        })
        return out


@dataclass
class Model:
    """Everything a checkpoint holds: parameters, vocabularies, and wiring."""

    params: ModelParams
    q_vocab: Vocab
    a_vocab: Vocab
    fusion: str = FUSION_SUM
    bias_mode: str = BIAS_QUESTION

    @property
    def dims(self) -> EncoderDims:
        return self.params.enc.dims

    @property
    def n_answers(self) -> int:
        return len(self.a_vocab)


def init_model(q_vocab: Vocab, a_vocab: Vocab, dims: EncoderDims, seed: int,
               fusion: str = FUSION_SUM, bias_mode: str = BIAS_QUESTION) -> Model:
    rng = Splitmix64(seed)
    enc = init_encoder_params(len(q_vocab), dims, rng)
    n = len(a_vocab)
    w_hq, b_hq = linear_init(rng, n, dims.d_q, "head_q")
    w_hv, b_hv = linear_init(rng, n, dims.d_v, "head_v")
    w_hk, b_hk = linear_init(rng, n, dims.d_k, "head_k")
    q_star = T.Tensor(rng.uniform(-1.0 / np.sqrt(dims.d_q), 1.0 / np.sqrt(dims.d_q), dims.d_q),
                      requires_grad=True, name="q_star")
    v_star = T.Tensor(rng.uniform(-1.0 / np.sqrt(dims.d_v), 1.0 / np.sqrt(dims.d_v), dims.d_v),
                      requires_grad=True, name="v_star")
    params = ModelParams(enc, w_hq, b_hq, w_hv, b_hv, w_hk, b_hk, q_star, v_star)
    return Model(params=params, q_vocab=q_vocab, a_vocab=a_vocab,
                 fusion=fusion, bias_mode=bias_mode)


def branch_logits(q: T.Tensor, v: T.Tensor, k: T.Tensor, p: ModelParams) -> BranchLogits:
    """Single linear head per branch; heads are independent of each other."""
    return BranchLogits(
        z_q=T.add(T.matmul(p.w_hq, q), p.b_hq),
        z_v=T.add(T.matmul(p.w_hv, v), p.b_hv),
        z_k=T.add(T.matmul(p.w_hk, k), p.b_hk),
    )


def fuse_logits(b: BranchLogits, strategy: str = FUSION_SUM) -> T.Tensor:
    """Combine branch scores: SUM adds them; HM takes log of the product of
    sigmoids (the tensor-core log clamp keeps it finite)."""
    if strategy == FUSION_SUM:
        return T.add(T.add(b.z_k, b.z_q), b.z_v)
    if strategy == FUSION_HM:
        prod = T.mul(T.mul(T.sigmoid(b.z_k), T.sigmoid(b.z_q)), T.sigmoid(b.z_v))
        return T.log(prod)
    raise ValueError(f"unknown fusion strategy {strategy!r}")


def encode_sample(model: Model, sample: QASample, image_vec) -> tuple[T.Tensor, T.Tensor, T.Tensor]:
    ids = tokens_to_ids(sample.question_tokens, model.q_vocab)
    q = encode_question(ids, model.params.enc)
    v = encode_image(image_vec, model.params.enc)
    k = fuse(q, v, model.params.enc)
    return q, v, k


def factual_scores(model: Model, sample: QASample, image_vec) -> tuple[T.Tensor, BranchLogits]:
    """TE: fused scores with every branch on its factual input."""
    q, v, k = encode_sample(model, sample, image_vec)
    branches = branch_logits(q, v, k, model.params)
    return fuse_logits(branches, model.fusion), branches


def _cf_params(p: ModelParams, stop_gradient: bool) -> ModelParams:
    """Counterfactual weight view: with stop_gradient, every weight except
    q_star / v_star is detached so the counterfactual loss trains only the
    stand-in vectors."""
    if not stop_gradient:
        return p
    enc = p.enc
    enc_d = EncoderParams(enc.embedding.detach(), enc.w_q.detach(), enc.b_q.detach(),
                          enc.w_v.detach(), enc.b_v.detach(), enc.w_f.detach(),
                          enc.b_f.detach(), enc.dims)
    return ModelParams(enc_d, p.w_hq.detach(), p.b_hq.detach(), p.w_hv.detach(),
                       p.b_hv.detach(), p.w_hk.detach(), p.b_hk.detach(),
                       p.q_star, p.v_star)


def counterfactual_scores(model: Model, branches: BranchLogits,
                          stop_gradient: bool = False) -> T.Tensor:
    """NDE: fused scores for the counterfactual scenario.

    With the default question-bias mode the factual z_q is kept while the
    image branch reads v_star and the knowledge branch reads
    k_star = fuse(q_star, v_star); both stand-in branches are constant per
    checkpoint. The vision-bias mode mirrors this, keeping z_v factual.
    """
    p = _cf_params(model.params, stop_gradient)
    k_star = fuse(p.q_star, p.v_star, p.enc)
    z_k_star = T.add(T.matmul(p.w_hk, k_star), p.b_hk)
    if model.bias_mode == BIAS_QUESTION:
        z_q = branches.z_q.detach() if stop_gradient else branches.z_q
        z_v_star = T.add(T.matmul(p.w_hv, p.v_star), p.b_hv)
        cf = BranchLogits(z_q=z_q, z_v=z_v_star, z_k=z_k_star)
    elif model.bias_mode == BIAS_VISION:
        z_v = branches.z_v.detach() if stop_gradient else branches.z_v
        z_q_star = T.add(T.matmul(p.w_hq, p.q_star), p.b_hq)
        cf = BranchLogits(z_q=z_q_star, z_v=z_v, z_k=z_k_star)
    else:
        raise ValueError(f"unknown bias mode {model.bias_mode!r}")
    return fuse_logits(cf, model.fusion)


def debias(te: T.Tensor, nde: T.Tensor) -> T.Tensor:
    """TIE = TE - NDE, elementwise."""
    return T.sub(te, nde)


def causal_scores(model: Model, sample: QASample, image_vec) -> CausalScores:
    te, branches = factual_scores(model, sample, image_vec)
    nde = counterfactual_scores(model, branches)
    return CausalScores(te=te, nde=nde, tie=debias(te, nde))


MODE_BIASED = "biased"
MODE_DEBIASED = "debiased"


def predict(model: Model, sample: QASample, image_vec, mode: str = MODE_DEBIASED) -> int:
    """Answer index: argmax of TE (biased) or TIE (debiased); ties go to the
    lowest index."""
    scores = causal_scores(model, sample, image_vec)
    if mode == MODE_BIASED:
        return int(np.argmax(scores.te.data))
    if mode == MODE_DEBIASED:
        return int(np.argmax(scores.tie.data))
    raise ValueError(f"unknown prediction mode {mode!r}")


def predict_answer(model: Model, sample: QASample, provider: ImageProvider,
                   mode: str = MODE_DEBIASED) -> str:
    idx = predict(model, sample, provider.get(sample.image_ref), mode)
    return model.a_vocab.index_to_token[idx]
