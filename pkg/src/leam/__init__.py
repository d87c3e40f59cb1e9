"""Layer embedding activation maps for face-embedding networks.

Subpackages are imported lazily by callers; the top level only exposes the
version string.
"""
__version__ = "0.1.0"
