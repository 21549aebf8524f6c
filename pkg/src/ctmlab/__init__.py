"""Desk-scale chemical-transport laboratory for adjoint source reconstruction."""

__version__ = "0.1.0"
