"""Exact Gibbs computations, cluster expansions and frequency-band bounds for long-range lattice spin systems."""

__version__ = "0.1.0"
