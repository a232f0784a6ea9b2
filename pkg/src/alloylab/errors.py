"""Exception hierarchy.

Every error carries an ``exit_code`` so the command line front end can map a
failure category to a process status without inspecting messages.
"""


class AlloyLabError(Exception):
    exit_code = 1


class ConfigError(AlloyLabError, ValueError):
    """Malformed or incomplete configuration."""

    exit_code = 2


class PreconditionError(AlloyLabError, ValueError):
    """An operation was called outside its stated domain."""

    exit_code = 3


class AdmissibilityError(PreconditionError):
    """Convolution vector violates ``a_0 = 1`` or ``a* < 1``."""


class ArgumentError(PreconditionError):
    pass


class DomainError(PreconditionError):
    pass


class UnsupportedError(PreconditionError):
    pass


class ContractError(PreconditionError):
    """Input matrix lacks the cone-triangular structure."""


class ScheduleError(PreconditionError):
    pass


class NumericalError(AlloyLabError, ArithmeticError):
    exit_code = 4


class ResourceError(AlloyLabError, MemoryError):
    exit_code = 5
