"""Conditioned rectified flow for desk-scale image enhancement."""

import importlib

__version__ = "0.1.0"

_SUBMODULES = ("autodiff", "checkpoint", "cli", "data", "degrade", "errors",
               "flow", "metrics", "nn", "optim", "pipeline")


def __getattr__(name):
    # lazy so the CLI can pin thread env vars before numpy loads
    if name in _SUBMODULES:
        return importlib.import_module(f".{name}", __name__)
    raise AttributeError(f"module 'rectiflow' has no attribute {name!r}")


def __dir__():
    return sorted(list(_SUBMODULES) + ["__version__"])
