"""
Exception taxonomy shared by the library and the command line.

Each class carries the process exit code the CLI reports for it.
"""


class DataError(ValueError):
    """Malformed, missing or misaligned data (files, masks, imputations)."""
    exit_code = 2


class NumericalError(RuntimeError):
    """Divergent training or non-finite estimator output."""
    exit_code = 3


class MissingArtifactError(FileNotFoundError):
    """
    An upstream artifact needed by a command does not exist.

    Args:
        artifact: Path or description of the missing artifact
        producer: Name of the command that produces it
    """
    exit_code = 2

    def __init__(self, artifact: str, producer: str):
        self.artifact = artifact
        self.producer = producer
        super().__init__(f"missing artifact {artifact}; run `{producer}` first")


class ConfigError(ValueError):
    """Invalid configuration file or command-line override."""
    exit_code = 1
