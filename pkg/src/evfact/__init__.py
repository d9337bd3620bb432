"""Event factuality prediction: biLSTM regressors over chains and trees.

Modules by concern: ``autodiff`` (reverse-mode engine and Adam),
``embeddings`` (frozen word vectors), ``corpus`` (treebanks and
annotation aggregation), ``lexfeats`` (signature and mined features),
``models`` (the encoders and regression head), ``training`` (regimes and
the epoch loop), ``calibration`` (isotonic maps), ``evaluation``
(metrics and breakdowns), and ``cli`` (batch commands). The hot numeric
kernels live in ``kernels`` with a numba fast path and a numpy fallback.
"""

__version__ = "0.1.0"

from .autodiff import AdamState, Tape, Tensor, adam_step, backward, grad_check
from .corpus import AnnotatedPredicate, RawAnnotation, Sentence
from .embeddings import EmbeddingTable, load_table
from .models import ModelBundle, ModelConfig, init_model
from .training import Regime, TrainerConfig, train

__all__ = [
    "__version__",
    "AdamState",
    "Tape",
    "Tensor",
    "adam_step",
    "backward",
    "grad_check",
    "AnnotatedPredicate",
    "RawAnnotation",
    "Sentence",
    "EmbeddingTable",
    "load_table",
    "ModelBundle",
    "ModelConfig",
    "init_model",
    "Regime",
    "TrainerConfig",
    "train",
]
