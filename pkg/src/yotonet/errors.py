"""Error taxonomy shared by every module.

Four buckets, mapped one-to-one onto CLI exit codes: bad configuration
(2), unreadable or malformed data (3), violated evaluation protocol (4),
and broken internal contracts (also 2, since they are almost always a
caller error such as backpropagating from a non-scalar).
"""


class YotoError(Exception):
    """Base class for everything raised on purpose by this package."""


class ConfigError(YotoError):
    """Invalid configuration value, e.g. an even kernel size or k > n."""


class ShapeError(YotoError):
    """Operands with incompatible shapes fed to a tensor op."""


class DataError(YotoError):
    """Unreadable, malformed, or internally inconsistent data files."""


class ProtocolError(YotoError):
    """Evaluation protocol violation, e.g. a train/test domain overlap."""


class ContractError(YotoError):
    """Violated internal API contract, e.g. backward from a non-scalar."""
