"""Bubbling approximate solutions of asymmetric mean field equations on
compact surfaces: vortex Hamiltonian, admissibility constants, bubble ansatz,
Lyapunov-Schmidt reduction and full spectral PDE solves."""

__version__ = "0.1.0"
