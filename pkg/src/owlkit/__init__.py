"""owlkit: one-shot pruning toolkit with outlier-weighed layerwise sparsity.

Submodules are imported lazily so the CLI can configure thread environment
variables before numpy loads.
"""

__version__ = "0.1.0"

_SUBMODULES = (
    "numkernel",
    "model",
    "calib",
    "outlier",
    "alloc",
    "prune",
    "compress",
    "evaluate",
    "pipeline",
    "plots",
    "cli",
)


def __getattr__(name):
    if name in _SUBMODULES:
        import importlib

        return importlib.import_module(f".{name}", __name__)
    raise AttributeError(f"module 'owlkit' has no attribute {name!r}")
