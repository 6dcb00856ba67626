"""Exception hierarchy shared by all modules."""


class CwienerError(Exception):
    """Base class for every error raised by this package."""


class InvalidSpecError(CwienerError, ValueError):
    """A physical or numerical parameter violates its type invariant."""


class NumericalGuardError(CwienerError, RuntimeError):
    """A stability or well-posedness guard refused to run a computation.

    ``guard`` names the violated condition so that callers (the CLI in
    particular) can report it without parsing the message.
    """

    def __init__(self, message, guard="numerical"):
        super().__init__(message)
        self.guard = guard


class IllPosedError(NumericalGuardError):
    """Integration requested in the ill-posed time direction of a dissipative branch."""

    def __init__(self, message, well_posed_direction):
        super().__init__(message, guard="well-posed-direction")
        self.well_posed_direction = well_posed_direction


class BoundViolationError(CwienerError, AssertionError):
    """An asserted inequality (e.g. the quantum uncertainty bound) failed."""


class ConfigError(CwienerError, ValueError):
    """Scenario configuration failed schema validation."""

    def __init__(self, message, key_path=None, line=None):
        super().__init__(message)
        self.key_path = key_path
        self.line = line
