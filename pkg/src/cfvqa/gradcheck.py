"""Finite-difference validation of the tape gradients over random small
networks shaped like the real model.

Central differences are meaningless within eps of a relu kink or a log-clamp
boundary, so candidate networks whose preactivations sit inside a safety
margin are resampled before checking.

The counterfactual loss term is stop-gradient by contract (it trains only
q_star / v_star), so the analytic gradient of the other parameters is checked
against the factual-only loss, and q_star / v_star against the full loss;
both comparisons are exact statements about the gradients training actually
uses.
"""

from __future__ import annotations

import time

import numpy as np

from . import tensor as T
from .data import Vocab, make_sample
from .encoders import EncoderDims
from .model import FUSION_HM, FUSION_SUM, Model, init_model
from .rng import Splitmix64
from .train import TrainConfig, sample_loss

KINK_MARGIN = 0.02  # min |relu preactivation| for a case to be checkable
HM_PROD_FLOOR = 1e-10  # min sigmoid product, keeps clear of the log clamp


def _random_model_case(rng: Splitmix64):
    n_tokens = 6 + rng.randint(4)
    n_answers = 3 + rng.randint(3)
    dims = EncoderDims(d_e=3 + rng.randint(3), d_q=4 + rng.randint(3),
                       d_v=4 + rng.randint(3), d_k=4 + rng.randint(3),
                       image_input_dim=4 + rng.randint(4))
    tokens = [f"w{i}" for i in range(n_tokens)]
    answers = [f"a{i}" for i in range(n_answers)]
    q_vocab = Vocab.build(tokens)
    a_vocab = Vocab.build(answers)
    fusion = FUSION_SUM if rng.randint(2) == 0 else FUSION_HM
    model = init_model(q_vocab, a_vocab, dims, seed=rng.next_u64() & 0x7FFFFFFF, fusion=fusion)
    # widen parameter scales so gradients are not uniformly tiny
    for p in model.params.named().values():
        p.data *= np.float32(1.5)
    n_q = 2 + rng.randint(3)
    question = " ".join(tokens[rng.randint(n_tokens)] for _ in range(n_q))
    sample = make_sample("case", "img", question, answers[rng.randint(n_answers)])
    vec = rng.uniform(-2.0, 2.0, dims.image_input_dim)
    target = rng.randint(len(a_vocab))
    return model, sample, vec, target


def _model_margins_ok(model: Model, sample, vec) -> bool:
    p = model.params
    e = p.enc
    ids = [model.q_vocab.index(t) for t in sample.question_tokens]
    pooled = e.embedding.data[ids].mean(axis=0)
    z_q = e.w_q.data @ pooled + e.b_q.data
    q = np.maximum(z_q, 0)
    z_v = e.w_v.data @ vec + e.b_v.data
    v = np.maximum(z_v, 0)
    z_f = e.w_f.data @ np.concatenate([q, v]) + e.b_f.data
    z_fs = e.w_f.data @ np.concatenate([p.q_star.data, p.v_star.data]) + e.b_f.data
    for pre in (z_q, z_v, z_f, z_fs):
        if np.abs(pre).min() < KINK_MARGIN:
            return False
    if model.fusion == FUSION_HM:
        k = np.maximum(z_f, 0)
        k_star = np.maximum(z_fs, 0)
        logits = [p.w_hq.data @ q + p.b_hq.data,
                  p.w_hv.data @ v + p.b_hv.data,
                  p.w_hk.data @ k + p.b_hk.data,
                  p.w_hv.data @ p.v_star.data + p.b_hv.data,
                  p.w_hk.data @ k_star + p.b_hk.data]
        sig = [1.0 / (1.0 + np.exp(-z.astype(np.float64))) for z in logits]
        if (sig[0] * sig[1] * sig[2]).min() < HM_PROD_FLOOR:
            return False
        if (sig[0] * sig[3] * sig[4]).min() < HM_PROD_FLOOR:
            return False
    return True


def _check_params(f, params: dict[str, T.Tensor], eps: float, tol: float) -> list[dict]:
    out = []
    for name, p in params.items():
        rep = T.grad_check(f, p, eps=eps, tol=tol)
        rep["param"] = name
        out.append(rep)
    return out


def check_model_case(seed: int, eps: float = 1e-3, tol: float = 1e-3) -> list[dict]:
    """One random model: factual params against the factual loss, stand-in
    vectors against the full loss."""
    rng = Splitmix64(seed)
    for _ in range(50):
        model, sample, vec, target = _random_model_case(rng)
        if _model_margins_ok(model, sample, vec):
            break
    else:
        raise RuntimeError(f"could not sample a kink-safe network for seed {seed}")

    factual_cfg = TrainConfig(lambda_cf=0.0, fusion=model.fusion)
    full_cfg = TrainConfig(fusion=model.fusion)
    named = model.params.named()
    factual_params = {k: v for k, v in named.items() if k not in ("q_star", "v_star")}
    star_params = {k: v for k, v in named.items() if k in ("q_star", "v_star")}

    def f_factual(_x):
        return sample_loss(model, sample, vec, target, factual_cfg)

    def f_full(_x):
        return sample_loss(model, sample, vec, target, full_cfg)

    reports = _check_params(f_factual, factual_params, eps, tol)
    reports += _check_params(f_full, star_params, eps, tol)
    return reports


def check_chain_case(seed: int, eps: float = 1e-3, tol: float = 1e-3) -> list[dict]:
    """Free-form primitive chains covering softmax, exp, sub, scale, mul,
    sigmoid, log outside the model wiring."""
    rng = Splitmix64(seed)
    n_in = 4 + rng.randint(3)
    n_h = 4 + rng.randint(3)
    n_out = 3 + rng.randint(3)
    target = rng.randint(n_out)
    for _ in range(50):
        w1 = T.Tensor(rng.uniform(-1.2, 1.2, n_h * n_in).reshape(n_h, n_in), requires_grad=True, name="w1")
        w2 = T.Tensor(rng.uniform(-1.2, 1.2, n_out * n_h).reshape(n_out, n_h), requires_grad=True, name="w2")
        w3 = T.Tensor(rng.uniform(-1.2, 1.2, n_out * n_h).reshape(n_out, n_h), requires_grad=True, name="w3")
        x = T.Tensor(rng.uniform(-2.0, 2.0, n_in), requires_grad=True, name="x")
        if np.abs(w1.data @ x.data).min() >= KINK_MARGIN:
            break
    else:
        raise RuntimeError(f"could not sample a kink-safe chain for seed {seed}")

    def f(_x):
        h = T.relu(T.matmul(w1, x))
        s = T.softmax(T.matmul(w2, h))
        gate = T.sigmoid(T.matmul(w3, h))
        # the +0.05 keeps log curvature mild enough for float32 differences
        mixed = T.mul(T.log(T.add(s, T.Tensor(0.05))), gate)
        bias_like = T.exp(T.scale(T.matmul(w2, h), 0.25))
        return T.cross_entropy(T.sub(mixed, bias_like), target)

    return _check_params(f, {"w1": w1, "w2": w2, "w3": w3, "x": x}, eps, tol)


def run_suite(seed: int = 1, count: int = 100, eps: float = 1e-3, tol: float = 1e-3) -> dict:
    """Finite-difference suite over `count` random networks (3 model cases to
    every chain case). Returns the worst relative error seen and timing."""
    t0 = time.time()
    worst = 0.0
    worst_where = ""
    n_params = 0
    for i in range(count):
        case_seed = seed * 1_000_003 + i
        if i % 4 == 3:
            reports = check_chain_case(case_seed, eps, tol)
            kind = "chain"
        else:
            reports = check_model_case(case_seed, eps, tol)
            kind = "model"
        for rep in reports:
            n_params += 1
            if rep["max_rel_err"] > worst:
                worst = rep["max_rel_err"]
                worst_where = f"{kind} case {i}, param {rep['param']}"
    return {
        "count": count,
        "params_checked": n_params,
        "max_rel_err": worst,
        "worst_case": worst_where,
        "ok": worst <= tol,
        "seconds": time.time() - t0,
    }
