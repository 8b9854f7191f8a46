"""Exact and Monte Carlo potential theory for two-dimensional lattice walks
killed on a finite set."""
from importlib.metadata import PackageNotFoundError, version

try:
    __version__ = version("artifact")
except PackageNotFoundError:  # running from a source tree
    __version__ = "0.1.0"

from .errors import *  # noqa: F401,F403
from .model import (  # noqa: F401
    BUILTIN_LAWS,
    LatticePoint,
    StepLaw,
    build_step_law,
    builtin_law,
    characteristic_fn,
    load_law,
)
