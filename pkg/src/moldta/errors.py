"""Error types shared across the package.

The CLI maps these onto exit codes: DataError -> 2, NumericalError -> 3.
"""


class DataError(ValueError):
    """Malformed or unusable input data (files, sequences, vocab misses)."""


class NumericalError(ArithmeticError):
    """Non-finite values or other numerical contract violations."""
