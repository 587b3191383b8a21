"""Exception types shared across the pipeline.

The CLI maps these onto exit codes: config errors exit 2, backend errors
exit 3, validation errors exit 4.
"""

from __future__ import annotations


class PipelineError(Exception):
    """Base class for all viewforge errors."""


class ConfigError(PipelineError):
    """Invalid or incomplete pipeline configuration.

    Carries the full list of problems so a bad config is reported in one
    shot, before any backend call is made.
    """

    def __init__(self, problems):
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class BackendError(PipelineError):
    """A model backend failed to serve a request."""

    def __init__(self, message, *, kind=None, retry_meta=None):
        super().__init__(message)
        self.kind = kind
        self.retry_meta = retry_meta or {}


class BackendUnavailableError(BackendError):
    """The backend endpoint could not be reached at all."""


class BackendTimeoutError(BackendError):
    """The backend did not answer within its configured timeout."""


class ValidationError(PipelineError):
    """Input data failed validation (bad bundle, missing files, ...)."""


class DegenerateGeometryError(ValueError):
    """Camera geometry cannot be constructed (zero baseline, parallel up)."""


class ManifestWriteError(PipelineError):
    """Render manifest could not be written to disk."""


class EmptyAnswerError(PipelineError):
    """The VQA backend returned an empty answer for a description query."""


class IncompleteInstanceError(PipelineError):
    """A dataset instance is missing rendered views or has corrupt files."""

    def __init__(self, instance_id, missing):
        self.instance_id = instance_id
        self.missing = list(missing)
        super().__init__(
            f"instance {instance_id!r} incomplete: {', '.join(self.missing)}"
        )


class TrainingFailedError(PipelineError):
    """An expert fine-tune job failed."""

    def __init__(self, message, *, job_log=None):
        super().__init__(message)
        self.job_log = job_log


class GenerationError(PipelineError):
    """A generation stage failed; ``stage`` names the failing stage."""

    def __init__(self, message, *, stage, failed_indices=None):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage
        self.failed_indices = list(failed_indices or [])


class ExportError(PipelineError):
    """Asset bundle or report could not be written to disk."""


class NumericalFailureError(PipelineError):
    """A metric computation produced a non-finite result."""
