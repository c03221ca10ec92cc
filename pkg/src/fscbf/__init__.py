"""Feasible-space volume monitoring and control for multi-CBF QP safety filters."""

__version__ = "0.1.0"
