"""Training kernel backends.

The training hot loop (per-tuple forward/backward over mini-batches) has
two implementations with identical semantics: a Cython extension built at
install time and a pure-numpy fallback.  The compiled one is picked
automatically when importable; set ``PHRASECOMP_BACKEND=numpy`` (or pass
``backend="numpy"``) to force the fallback, e.g. for debugging.
"""

import os

from ..errors import ConfigError
from . import numpy_backend

try:
    from . import _ctrain as c_backend

    HAVE_COMPILED = True
except ImportError:
    c_backend = None
    HAVE_COMPILED = False


def available_backends() -> list[str]:
    return ["c", "numpy"] if HAVE_COMPILED else ["numpy"]


def select_backend(name: str | None = None):
    """Resolve a backend module by name ('auto', 'c', 'numpy')."""
    if name is None or name == "auto":
        name = os.environ.get("PHRASECOMP_BACKEND", "auto")
    if name == "auto":
        return c_backend if HAVE_COMPILED else numpy_backend
    if name == "numpy":
        return numpy_backend
    if name == "c":
        if not HAVE_COMPILED:
            raise ConfigError("compiled backend requested but the extension is not built")
        return c_backend
    raise ConfigError(f"unknown backend {name!r} (expected auto, c, or numpy)")
