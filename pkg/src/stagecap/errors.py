"""Exception hierarchy. CLI maps StagecapError subclasses to exit code 2."""


class StagecapError(Exception):
    """Base class for data/model errors raised by this package."""


class ShapeError(StagecapError):
    """An array op received non-conforming shapes."""


class GraphError(StagecapError):
    """Ill-formed computation graph (e.g. non-scalar loss for backward)."""


class DivergenceError(StagecapError):
    """Training produced NaN/Inf; carries the offending step index."""

    def __init__(self, message: str, step: int):
        super().__init__(message)
        self.step = step


class GrammarError(StagecapError):
    """Invalid grammar configuration (unknown word class in a template)."""


class CorpusError(StagecapError):
    """Invalid scene/vocabulary content."""


class FormatError(StagecapError):
    """Malformed input file; carries a 1-based line number when known."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class StagingError(StagecapError):
    """Invalid stage plan or masking input."""


class CheckpointError(StagecapError):
    """Checkpoint refused (corrupt blob, hash mismatch, wrong kind/version)."""


class ConfigError(StagecapError):
    """Invalid run configuration (unknown keys, out-of-range values)."""
