"""Quantum simulation of a cantilever tip coupled to a single spin under OSCAR MRFM."""

from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("artifact")
except PackageNotFoundError:  # running from a source tree
    __version__ = "0.0.0+unknown"
