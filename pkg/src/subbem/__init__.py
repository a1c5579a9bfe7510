"""Isogeometric boundary element solver for 2D plane-strain elastostatics
with independent field approximations and hierarchical matrices."""

__version__ = "0.1.0"
