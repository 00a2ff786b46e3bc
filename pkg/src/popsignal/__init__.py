"""Manufacture the POP exogenous series for new products and evaluate it."""
__version__ = "0.1.0"
