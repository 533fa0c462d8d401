"""Exception hierarchy shared by every module.

Each domain error carries a short ``tag`` the CLI prints on stderr so scripts
can match failures without parsing prose.
"""


class ElweError(Exception):
    tag = "domain-error"


class DomainError(ElweError, ValueError):
    tag = "domain-error"


class ConfigurationError(ElweError, ValueError):
    tag = "config-invalid"


class ParamsInvalid(ConfigurationError):
    tag = "params-invalid"


class GenerationExhausted(ElweError, RuntimeError):
    tag = "generation-exhausted"


class DegenerateRandomness(ElweError, RuntimeError):
    tag = "degenerate-randomness"


class FormatError(ElweError, ValueError):
    tag = "format-invalid"


class MorphismInvalid(ElweError, ValueError):
    tag = "morphism-invalid"

    def __init__(self, condition: str, message: str):
        super().__init__(message)
        self.condition = condition


class UnknownScheme(ElweError, KeyError):
    tag = "unknown-scheme"

    def __str__(self) -> str:
        return str(self.args[0]) if self.args else "unknown scheme"


class TransitionFailed(ElweError, RuntimeError):
    tag = "transition-failed"

    def __init__(self, index: int, message: str):
        super().__init__(message)
        self.index = index


class TransportFailure(ElweError, ConnectionError):
    """Terminal client-side failure after retries were exhausted."""

    tag = "transport-failed"

    def __init__(self, message: str, attempts: list):
        super().__init__(message)
        self.attempts = attempts
