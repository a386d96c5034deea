"""Exception hierarchy shared across the package."""


class StascError(Exception):
    """Base class for all package errors."""


class ConfigurationError(StascError):
    """Invalid configuration, CLI arguments, or unknown registry keys."""


class TemplateError(ConfigurationError):
    """Prompt template fails validation (missing/duplicated placeholders, bad header)."""


class DatasetError(ConfigurationError):
    """QA dataset file fails validation."""


class StateIntegrityError(StascError):
    """Persisted run state is inconsistent (missing predecessor model, bad record)."""


class TransportError(StascError):
    """A single request attempt failed at the transport level (retryable)."""


class GenerationError(StascError):
    """Sampling failed after all retries, or the response was malformed."""


class UnknownModelError(ConfigurationError):
    """The backend does not serve the requested model id; fatal, never retried."""


class TrainingError(StascError):
    """The trainer reported failure or the job could not be tracked."""


class EmptyFilterHalt(StascError):
    """Raised when the filter produced no trajectories and policy is 'halt'."""
