"""qdpair: simulation and characterization of quantum-dot photon-pair sources."""

__version__ = "0.1.0"
