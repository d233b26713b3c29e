"""Exception types shared across the engine."""


class BMLMCError(Exception):
    """Base class for all engine errors."""


class StructuralError(BMLMCError, ValueError):
    """Objects living on different grids/levels were combined."""


class InsufficientSamplesError(BMLMCError, ValueError):
    """A statistic was requested that needs more samples than available."""


class UnsupportedTransferError(BMLMCError, TypeError):
    """A level transfer was requested for a storage kind that has none."""


class SolverError(BMLMCError, RuntimeError):
    """A linear solve failed to converge.

    Carries the stage name and the last relative residual so callers can
    report which part of the sample chain broke.
    """

    def __init__(self, message, *, stage=None, residual=None, level=None, sample=None):
        super().__init__(message)
        self.message = message
        self.stage = stage
        self.residual = residual
        self.level = level
        self.sample = sample

    def __str__(self):
        # context is often attached after construction, so render lazily
        parts = [self.message]
        for name in ("stage", "level", "sample"):
            value = getattr(self, name)
            if value is not None:
                parts.append(f"{name}={value}")
        if self.residual is not None:
            parts.append(f"residual={self.residual:.3e}")
        return " ".join(parts)


class TaskError(BMLMCError, RuntimeError):
    """A sample task raised something other than a solver failure."""

    def __init__(self, level: int, sample: int, cause: BaseException):
        self.level = level
        self.sample = sample
        super().__init__(f"sample task failed at level={level} sample={sample}: {cause!r}")


class DomainError(BMLMCError, ValueError):
    """Input outside the mathematical domain of an operator."""


class AccountingError(BMLMCError, RuntimeError):
    """Memory ledger bookkeeping violated (e.g. releasing more than recorded)."""


class ConfigError(BMLMCError, ValueError):
    """Configuration rejected; ``problems`` lists every violated rule."""

    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("invalid configuration:\n  - " + "\n  - ".join(self.problems))


class MemoryExhaustedError(BMLMCError):
    """No further sample fits into the memory budget; the run must stop."""
