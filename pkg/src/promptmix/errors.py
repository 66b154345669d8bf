"""Exception hierarchy shared by every pipeline stage."""


class PromptMixError(Exception):
    """Base class for all toolkit errors."""


class FormatError(PromptMixError):
    """A file or wire payload does not follow its declared format."""


class ContractError(PromptMixError):
    """A function was called with arguments violating its preconditions."""


class ConfigError(PromptMixError):
    """Invalid configuration, decisions file or stage lineage."""

    def __init__(self, message, field=None):
        if field:
            message = f"{field}: {message}"
        super().__init__(message)
        self.field = field


class BackendError(PromptMixError):
    """An external worker failed, timed out or replied with garbage.

    ``cause`` is one of ``"timeout"``, ``"exit"``, ``"reply"``, ``"worker"``
    or ``"input"``.
    """

    def __init__(self, message, cause="worker"):
        super().__init__(message)
        self.cause = cause
