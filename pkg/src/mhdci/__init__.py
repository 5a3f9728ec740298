"""Numerical convex-integration toolkit for the ideal-MHD differential inclusion."""

__version__ = "0.1.0"
