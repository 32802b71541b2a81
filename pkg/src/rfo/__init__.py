"""Random-field O(n) spin models on hypercubic lattices.

Sampling, zero-temperature relaxation, lattice Green fields, the
renormalized angular Hamiltonian and Peierls-contour analysis for the
RFO(n;k) family, with executable cross-checks against exact references.
"""

__version__ = "0.1.0"
