"""Exception hierarchy shared by all modules."""


class ClusterLCLTError(Exception):
    """Base class for every error raised by the package."""


class SizeError(ClusterLCLTError, ValueError):
    """A configured cap (sites, support size, terms, tensor size) was exceeded."""


class DivergenceError(ClusterLCLTError, ValueError):
    """A lattice sum that must be finite diverges (e.g. power law with s <= d)."""


class DomainError(ClusterLCLTError, ValueError):
    """A spin value lies outside the single-site support."""


class TemperednessError(ClusterLCLTError, ValueError):
    """A boundary condition is not strongly tempered."""


class DegeneracyError(ClusterLCLTError, ValueError):
    """A variance (or variance proxy) vanishes."""


class BranchError(ClusterLCLTError, ArithmeticError):
    """A principal-branch logarithm was requested too close to its branch point."""


class UnsupportedError(ClusterLCLTError, ValueError):
    """The operation does not apply to this kind of model (e.g. densities of discrete spins)."""


class ScalingError(ClusterLCLTError, ArithmeticError):
    """A normalization constant underflowed; shift F by a constant."""


class VacuousBoundError(ClusterLCLTError, ValueError):
    """A bound degenerates to a trivial statement (e.g. zero mass of the medium-band set)."""


class NoCertificateError(ClusterLCLTError, RuntimeError):
    """A dilution or temperature scan ran out of range without a passing certificate."""


class ConfigError(ClusterLCLTError, ValueError):
    """Malformed experiment or model configuration."""
