"""Unbalanced optimal transport co-training on a synthetic two-domain reach task."""
from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("artifact")
except PackageNotFoundError:  # running from a source tree
    __version__ = "0.1.0"

from ._kernels import BACKEND  # "cython" or "python"
