"""Counterfactual VQA at desk scale.

Three pieces: a greedy re-splitter that inverts question->answer priors
between train and test, a three-branch causal answer model that deliberately
absorbs the question prior during training, and counterfactual subtraction
that removes it at inference (debiased = biased - bias).
"""

__version__ = "0.1.0"

from .data import QASample, Vocab, build_vocabs, normalize, prior_table
from .model import CausalScores, Model, causal_scores, debias, predict
from .resplit import QAGroup, greedy_resplit, group_samples, resplit_dataset
from .synth import SynthConfig, generate
from .tensor import Adam, Tape, Tensor, grad_check
from .train import TrainConfig, train

__all__ = [
    "QASample", "Vocab", "build_vocabs", "normalize", "prior_table",
    "CausalScores", "Model", "causal_scores", "debias", "predict",
    "QAGroup", "greedy_resplit", "group_samples", "resplit_dataset",
    "SynthConfig", "generate",
    "Adam", "Tape", "Tensor", "grad_check",
    "TrainConfig", "train",
    "__version__",
]
