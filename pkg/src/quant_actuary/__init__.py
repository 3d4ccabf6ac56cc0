"""Quantum algorithms for excess evaluation, reinsurance allocation and Lee-Carter fitting on a statevector simulator."""

__version__ = "0.1.0"
