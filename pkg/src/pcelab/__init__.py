"""Desk-scale laboratory for position-domain channel extrapolation in
cell-free massive MIMO."""

__version__ = "0.1.0"
