"""Numerical verification that maps between higher tangent bundles descend to
base maps, with spray and isometry variants."""

__version__ = "0.1.0"
