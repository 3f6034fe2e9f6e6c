"""Exception hierarchy shared by all braintraj modules.

Every documented failure path raises one of these classes; nothing in the
package is expected to crash with a bare built-in exception. The CLI maps
them to process exit codes (see ``cli.EXIT_CODES``).
"""


class BrainTrajError(Exception):
    """Base class for all package errors."""


class ValidationError(BrainTrajError):
    """Input or on-disk data violates a documented invariant."""


class ConfigurationError(BrainTrajError):
    """A configuration value or combination makes the request unrunnable."""


class StratificationError(ConfigurationError):
    """A class is too small to be stratified into the requested folds."""


class LoadError(BrainTrajError):
    """A persisted artifact is missing, truncated or otherwise corrupt."""


class StateError(BrainTrajError):
    """Operation requires a trained model and got an untrained one."""


class DependencyError(BrainTrajError):
    """A pipeline stage was invoked before its upstream artifact exists."""


class NumericalError(BrainTrajError):
    """Training or inference produced NaN/Inf or diverged."""


class UnsupportedQueryError(BrainTrajError):
    """Ground-truth query against data that carries no planted truth."""
