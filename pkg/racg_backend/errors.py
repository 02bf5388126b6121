from typing import Optional


class RacgError(Exception):
    """Base class for all errors raised by the engine."""


class IngestError(RacgError):
    def __init__(self, message: str, path: Optional[str] = None):
        super().__init__(message)
        self.path = path


class ContractViolation(RacgError, ValueError):
    """A caller broke an operation's precondition."""


class ConfigError(RacgError):
    pass


class DuplicateItemError(RacgError):
    pass


class RetrievalError(RacgError):
    pass


class GatewayError(RacgError):
    """Persistent transport failure after all retry attempts."""

    def __init__(self, message: str, role: Optional[str] = None, attempts: int = 0):
        super().__init__(message)
        self.role = role
        self.attempts = attempts


class PreflightError(RacgError):
    """Prompt would overflow the model's context window; no call was issued."""


class TemplateError(RacgError):
    pass


class ToolchainMissingError(RacgError):
    """Compiler/interpreter binary not found on the host (environment error, not a program failure)."""


class InputError(RacgError, ValueError):
    pass


class MutationError(RacgError):
    pass
