"""Exception hierarchy shared by every module.

The CLI maps these onto exit codes: input/config/build problems exit 2,
invariant violations exit 3.
"""


class SpecVocError(Exception):
    """Base class for all package errors."""


class InputError(SpecVocError, ValueError):
    """A caller supplied malformed or out-of-range input."""


class BuildError(SpecVocError, ValueError):
    """An offline structure (vocab, index, graph) could not be built."""


class ConfigError(SpecVocError, ValueError):
    """A configuration key or value is invalid."""


class InvariantViolation(SpecVocError, RuntimeError):
    """A runtime invariant that must always hold was broken."""
