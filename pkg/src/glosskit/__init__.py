"""Morpheme glossing for interlinear glossed text with a from-scratch numpy transformer."""

from .errors import ConfigError, DataError, GlosskitError, RuntimeFailure
from .igt_data import IgtSentence, ToySpec, Vocabulary, build_vocab, encode_corpus, generate_toy_corpus, parse_corpus
from .threads import set_threads, threads_from_env

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "DataError", "GlosskitError", "IgtSentence", "RuntimeFailure", "ToySpec", "Vocabulary",
    "build_vocab", "encode_corpus", "generate_toy_corpus", "parse_corpus", "set_threads", "threads_from_env",
]
