"""Exception taxonomy shared across the package.

Every hard error carries a short machine-readable ``code`` so the CLI and the
HTTP service can emit single-line diagnostics without matching message text.
"""

from __future__ import annotations


class MhelError(Exception):
    """Base class for all hard errors raised by this package."""

    code = "error"

    def __init__(self, message: str, **context):
        super().__init__(message)
        self.context = context

    def one_line(self) -> str:
        """Single-line machine-parsable rendering: ``error: <code>: <message>``."""
        message = " ".join(str(self).split())
        return f"error: {self.code}: {message}"


class FormatError(MhelError):
    """Malformed or invalid input file; messages name the offending line/offset."""

    code = "format"


class KbImportError(FormatError):
    code = "kb-import"


class VectorFileError(FormatError):
    code = "vector-file"


class CorpusError(FormatError):
    code = "corpus"


class DimensionError(MhelError):
    code = "dim-mismatch"


class BackendError(MhelError):
    """A remote backend failed after the retry budget was spent."""

    code = "backend"


class EncoderBackendError(BackendError):
    code = "encoder-backend"


class ChatBackendError(BackendError):
    code = "chat-backend"


class RemoteKbError(BackendError):
    code = "kb-remote"


class PromptError(MhelError):
    code = "prompt"


class PipelineError(MhelError):
    code = "pipeline"


class CalibrationError(MhelError):
    code = "calibration"


class MetricError(MhelError):
    code = "metric"


class ConfigError(MhelError):
    code = "config"


class SelfTestError(MhelError):
    """The exact-search self-test found a disagreement with the oracle."""

    code = "self-test"
