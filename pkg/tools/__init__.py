"""
Newton-Imbedding Tools - numerical tools for semilinear elliptic problems.

Each tool is organized in its own subdirectory with its own functionality.

Available tools:
- newtonImbed: Newton-imbedding solver for -Delta u = f(u) plus composition-map probes
"""

__version__ = "0.1.0"
__all__ = ["__version__"]
