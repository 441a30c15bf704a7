class DataError(ValueError):
    """Malformed or inconsistent input data (shapes, labels, manifests)."""


class ConfigError(ValueError):
    """Invalid run configuration."""


class TrainingError(RuntimeError):
    """Optimization diverged or could not proceed."""
