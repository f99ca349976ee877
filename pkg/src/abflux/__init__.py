"""Simulations of charged particles moving past magnetic flux lines and walls.

Classical trajectories, lattice quantum dynamics with Peierls phases, sparse
eigenspectra, diffraction from flux-line lattices, and the emergence of the
Lorentz force from many Aharonov-Bohm kicks.
"""
__version__ = "0.1.0"
