"""Exception types shared across modules."""


class ShapeMismatchError(ValueError):
    """Parameter or embedding shapes do not compose."""


class DegenerateEmbeddingError(ValueError):
    """A vector that must be normalized is exactly zero."""


class NonFiniteGradientError(RuntimeError):
    """An optimizer step received NaN or infinite gradients."""


class ZeroVarianceError(ValueError):
    """Correlation is undefined because one input has zero variance."""


class JudgeTransportError(RuntimeError):
    """Judge endpoint unreachable after retries."""


class JudgeProtocolError(RuntimeError):
    """Judge endpoint answered with a malformed or unknown grade."""
