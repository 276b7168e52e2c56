"""Exception hierarchy shared across the package."""

from __future__ import annotations


class HwTuneError(Exception):
    """Base class for every error raised by this package."""


# space
class SchemaError(HwTuneError):
    """A space/profile/kernel/manifest document is structurally malformed."""


class InvariantError(HwTuneError):
    def __init__(self, param: str, message: str):
        super().__init__(f"{param}: {message}")
        self.param = param


class UnclampableError(HwTuneError):
    pass


# hardware
class EmptyCandidateError(HwTuneError):
    pass


class MissingEntryError(HwTuneError):
    def __init__(self, model: str, scheme: str):
        super().__init__(f"no throughput entry for ({model!r}, {scheme})")
        self.model = model
        self.scheme = scheme


# kerneltune
class InvalidConfigError(HwTuneError):
    pass


# prompt
class StaticTooLargeError(HwTuneError):
    pass


# agent
class TransportError(HwTuneError):
    """Network or timeout failure talking to a chat backend (retryable)."""


class CapacityError(HwTuneError):
    """The prompt exceeds the backend's input window (not retryable)."""


class ProposalExhaustedError(HwTuneError):
    def __init__(self, failures, partial_trace=None):
        kinds = ", ".join(f.kind.value for f in failures)
        super().__init__(f"no valid proposal after {len(failures)} attempts ({kinds})")
        self.failures = list(failures)
        self.partial_trace = partial_trace or []


# optimizers
class SingularModelError(HwTuneError):
    pass


class BudgetTooSmallError(HwTuneError):
    pass


class UnknownObjectiveError(HwTuneError):
    pass


# harness
class EvaluatorError(HwTuneError):
    pass


class EvaluatorTimeout(EvaluatorError):
    pass


class NonzeroExit(EvaluatorError):
    def __init__(self, code: int, stderr_tail: str):
        super().__init__(f"evaluator command exited with status {code}: {stderr_tail}")
        self.code = code
        self.stderr_tail = stderr_tail


class MetricsParseError(EvaluatorError):
    def __init__(self, field: str, message: str):
        super().__init__(f"metrics field {field!r}: {message}")
        self.field = field


class DimensionMismatchError(HwTuneError):
    pass
