"""Long-document Persian abstractive summarization, end to end.

Text cleanup, corpus assembly with deterministic splits, subword
tokenization, a windowed-attention encoder-decoder trained with Adafactor
and gradient checkpointing, beam-search generation, and embedding-based
summary scoring — all on plain numpy, with a CLI tying the stages together.
"""

__version__ = "0.1.0"

from .corpus import CorpusRecord, SplitRatios, assign_split, read_corpus, write_corpus
from .decoding import GenConfig, beam_search, greedy_decode
from .model import ModelConfig, init_parameters, load_checkpoint, save_checkpoint
from .optim import OptimConfig, adafactor_step, init_state
from .scoring import EmbeddingTable, ScoreReport, cosine, f1, score_corpus, score_pair
from .textnorm import NormalizationRules, RawDocument, Rejection, normalize_document
from .tokenizer import Encoding, TokenizerModel, decode, encode, train_bpe
from .training import TrainingConfig, evaluate_validation, should_stop, train

__all__ = [
    "CorpusRecord", "SplitRatios", "assign_split", "read_corpus", "write_corpus",
    "GenConfig", "beam_search", "greedy_decode",
    "ModelConfig", "init_parameters", "load_checkpoint", "save_checkpoint",
    "OptimConfig", "adafactor_step", "init_state",
    "EmbeddingTable", "ScoreReport", "cosine", "f1", "score_corpus", "score_pair",
    "NormalizationRules", "RawDocument", "Rejection", "normalize_document",
    "Encoding", "TokenizerModel", "decode", "encode", "train_bpe",
    "TrainingConfig", "evaluate_validation", "should_stop", "train",
    "__version__",
]
