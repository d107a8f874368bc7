"""Exception hierarchy shared across the package."""


class SelfPlayError(Exception):
    """Base class for all package errors."""


class ConfigError(SelfPlayError, ValueError):
    pass


class GenerationExhausted(SelfPlayError):
    """No valid instance could be generated within the retry budget."""


class SteppedTerminal(SelfPlayError):
    pass


class BudgetExceeded(SelfPlayError):
    """A search ran out of its node budget before finishing."""


class ParseFailure(SelfPlayError):
    """Agent output lacks the mandatory think/answer structure.

    The ``verdict`` attribute carries the :class:`FormatVerdict` that
    explains what was missing.
    """

    def __init__(self, verdict, message=None):
        self.verdict = verdict
        super().__init__(message or "unparseable agent output: " + ", ".join(verdict.violations))


class EndpointError(SelfPlayError):
    """HTTP or network failure talking to a language-model endpoint."""


class EndpointTimeout(EndpointError):
    pass


class ProviderError(SelfPlayError):
    pass


class SourceExhausted(SelfPlayError):
    """The seed budget could not yield the requested number of records."""


class DomainError(SelfPlayError, ValueError):
    pass


class EmptyInput(SelfPlayError, ValueError):
    pass


class EmptyHeldout(EmptyInput):
    pass
