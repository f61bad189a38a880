"""Sparse coding, dictionary learning and sparse-code MLP classification."""

from .core import (
    DataError,
    Dataset,
    DegenerateDictionaryError,
    Dictionary,
    FormatError,
    NumericalError,
    RunConfig,
    SparseCodes,
    SparseDLError,
    load_model,
    save_model,
)

__version__ = "0.1.0"

__all__ = [
    "DataError",
    "Dataset",
    "DegenerateDictionaryError",
    "Dictionary",
    "FormatError",
    "NumericalError",
    "RunConfig",
    "SparseCodes",
    "SparseDLError",
    "load_model",
    "save_model",
]
