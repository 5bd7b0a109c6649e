"""Averaging of fast Hamiltonian advection onto the Reeb graph of the Hamiltonian."""

__version__ = "0.1.0"
