"""Exception types shared across the toolkit."""


class DecisionUQError(Exception):
    """Base class for all toolkit errors."""


class BackendError(DecisionUQError):
    """A generator backend failed to produce samples."""


class BackendUnreachable(BackendError):
    pass


class RateLimited(BackendError):
    pass


class CacheMiss(BackendError):
    def __init__(self, digest, draw_index=None):
        self.digest = digest
        self.draw_index = draw_index
        where = f" (draw {draw_index})" if draw_index is not None else ""
        super().__init__(f"no cached samples for request digest {digest}{where}")


class MissingPlaceholder(DecisionUQError, KeyError):
    def __init__(self, name):
        self.name = name
        super().__init__(f"template placeholder {{{name}}} has no value in the query context")

    def __str__(self):
        return self.args[0]


class UnparseableResponse(DecisionUQError):
    """A judge or confidence reply could not be parsed after all retries."""

    def __init__(self, message, raw):
        self.raw = raw
        super().__init__(f"{message}; last raw response: {raw!r}")


class JudgeUnreachable(DecisionUQError):
    def __init__(self, message, raw=None):
        self.raw = raw
        super().__init__(message)


class PairwiseError(DecisionUQError):
    """Wraps an error raised while filling one cell of a utility matrix."""

    def __init__(self, i, j, cause):
        self.position = (i, j)
        self.cause = cause
        super().__init__(f"utility evaluation failed at ({i}, {j}): {cause}")


class PoolTooSmall(DecisionUQError, ValueError):
    pass


class DimensionMismatch(DecisionUQError, ValueError):
    pass


class NoRecords(DecisionUQError, ValueError):
    pass


class LengthMismatch(DecisionUQError, ValueError):
    pass


class InsufficientVariants(DecisionUQError):
    def __init__(self, wanted, got, raw):
        self.raw = raw
        super().__init__(f"rewriter returned {got} variants, {wanted} requested")


class DegenerateActionSpace(DecisionUQError):
    pass


class ChainError(DecisionUQError):
    def __init__(self, chain, step, cause):
        self.chain = chain
        self.step = step
        self.cause = cause
        super().__init__(f"chain {chain}, step {step}: {cause}")


class UnknownInput(DecisionUQError, KeyError):
    def __str__(self):
        return self.args[0]


class DemoOutsideAlphabet(DecisionUQError, ValueError):
    pass


class DatasetError(DecisionUQError, ValueError):
    def __init__(self, message, line=None):
        self.line = line
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(prefix + message)


class ConfigError(DecisionUQError, ValueError):
    pass


class RunFailed(DecisionUQError):
    """Too many per-query failures; ``failures`` lists (query_id, stage, message)."""

    def __init__(self, message, failures=()):
        self.failures = list(failures)
        super().__init__(message)
