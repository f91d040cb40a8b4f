"""Shared exception types.

The CLI maps these onto exit codes: usage/config problems exit 1, data
problems (parse/codec/missing files) exit 2, numeric failures exit 3.
"""


class ContractError(ValueError):
    """An operation was called outside its documented contract."""


class ParseError(ValueError):
    """Malformed dataset input; the message names the offending record."""


class CodecError(ValueError):
    """Corrupt feature or checkpoint file; the message carries a byte offset."""


class DivergenceError(RuntimeError):
    """Training produced a NaN loss or gradient."""
