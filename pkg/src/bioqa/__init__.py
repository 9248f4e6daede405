"""Extractive biomedical question answering for BioASQ factoid, list and yes/no questions."""

__version__ = "0.1.0"

from .estimators import FeatureBatch, LogitsReplayReader, QAFeaturizer, QAReader  # noqa: E402

__all__ = ["FeatureBatch", "LogitsReplayReader", "QAFeaturizer", "QAReader", "__version__"]
