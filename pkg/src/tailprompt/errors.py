"""Error types shared across the package.

Two families matter operationally: ConfigError covers anything a user can fix
by editing a config, dataset, or flag (CLI exit code 1); NumericsError covers
degenerate or non-finite computations discovered at run time (CLI exit code 2).
"""


class TailPromptError(Exception):
    """Base class for all package errors."""


class ConfigError(TailPromptError, ValueError):
    """Invalid configuration, labels, counts, shapes, or CLI arguments."""


class NumericsError(TailPromptError, ArithmeticError):
    """Degenerate embeddings, infinite biases, or non-finite losses/gradients."""
