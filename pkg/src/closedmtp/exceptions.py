"""Exception types shared across the package.

The split matters to the command-line layer: InputError maps to exit
code 2 (bad input), NumericError to exit code 1 (computation failed).
"""


class InputError(ValueError):
    """User-supplied data violates a documented precondition."""


class NumericError(RuntimeError):
    """A numeric routine could not produce a trustworthy result."""


class BracketError(NumericError):
    """A root-finding bracket does not straddle the target value."""
