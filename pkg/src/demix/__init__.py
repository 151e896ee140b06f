"""Demixing of block-sparse components from nonlinear observations."""
__version__ = "0.1.0"
