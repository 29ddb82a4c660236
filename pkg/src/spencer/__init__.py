"""Two-stage code search: dual-encoder recall, cross-encoder re-ranking and query-encoder distillation."""
__version__ = "0.1.0"

from .encoder import EncoderModel, Vocabulary, compress, encode, init_encoder, tokenize
from .retrieval import VectorIndex, build_index, dual_search, recall_topk, spencer_search

__all__ = [
    "EncoderModel", "Vocabulary", "VectorIndex", "build_index", "compress", "dual_search", "encode",
    "init_encoder", "recall_topk", "spencer_search", "tokenize",
]
