"""Package exception types, mapped to CLI exit codes in :mod:`rldispatch.cli`."""


class RldError(Exception):
    """Base class for package errors."""


class ConfigError(RldError):
    """Run configuration is malformed or inconsistent (CLI exit code 3)."""


class DataError(RldError):
    """Input data failed validation; messages carry line numbers where known (exit code 4)."""


class SolverFailure(RldError):
    """The embedded solver did not return a usable optimum (exit code 5)."""


class NoRootError(RldError):
    """A root-finding mode found no sign change over its bracket."""


class BudgetExceededError(RldError):
    """A dynamic program would exceed the configured state budget."""
