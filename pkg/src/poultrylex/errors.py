"""Exception types shared across the pipeline.

The CLI maps these onto exit codes: usage/input problems exit 2,
numerical failures exit 3.
"""


class PoultryLexError(Exception):
    """Base class for all pipeline errors."""


class ConfigError(PoultryLexError):
    """Invalid run configuration (bad ratios, dims, flags, ...)."""


class CorpusError(PoultryLexError):
    """Corpus file unreadable or semantically invalid (dup ids, bad labels)."""


class DataFormatError(PoultryLexError):
    """Malformed auxiliary data file (emoji map, lexicon, stopwords)."""


class ShapeError(PoultryLexError):
    """Tensor shape mismatch; message names the op and both shapes."""


class NumericalError(PoultryLexError):
    """Non-finite values where the contract forbids them (NaN loss etc.)."""
