"""Disentangled invariant-representation learning on a synthetic SCM testbed."""

__version__ = "0.1.0"
