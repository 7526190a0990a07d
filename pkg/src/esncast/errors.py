"""Exception hierarchy shared across the package.

Kept deliberately small: callers branch on three things only -- bad input
data or files, transport failures, and numerical degeneracy.  Argument
misuse raises plain ValueError.
"""

from __future__ import annotations


class DataError(Exception):
    """Malformed, missing, or inconsistent market data."""


class FetchError(DataError):
    """HTTP transport failure that survived the retry budget."""


class NumericError(Exception):
    """A computation is undefined or degenerate for the given input."""


class EsnError(NumericError):
    """Reservoir construction or readout fit cannot proceed."""


class ChaosError(NumericError):
    """Lyapunov estimation is undefined for the given segment."""
