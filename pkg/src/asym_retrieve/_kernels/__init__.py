"""Kernel backend selection.

Two interchangeable implementations of the encoder hot loops live here: the
compiled Cython extension ``_core`` and the numpy fallback ``pykernels``.
The compiled one is picked at import time when it built successfully; the
choice can be forced with :func:`set_backend` or the ``ASYM_RETRIEVE_BACKEND``
environment variable ("compiled", "python", or "auto").

Within one backend every operation is deterministic. Across backends the two
implementations agree to float64 roundoff (order of elementary operations
differs), so checkpoints are reproducible per backend, not across backends.
"""

import os

from . import pykernels

try:
    from . import _core
except ImportError:
    _core = None

_BACKENDS = {"python": pykernels}
if _core is not None:
    _BACKENDS["compiled"] = _core


def compiled_available() -> bool:
    return _core is not None


def available_backends() -> list[str]:
    return sorted(_BACKENDS)


def resolve(name: str):
    """Map a backend name ("auto" allowed) to a kernel module."""
    if name == "auto":
        return _core if _core is not None else pykernels
    try:
        return _BACKENDS[name]
    except KeyError:
        raise ValueError(
            f"unknown backend {name!r}; choose from {available_backends() + ['auto']}"
        ) from None


_active = resolve(os.environ.get("ASYM_RETRIEVE_BACKEND", "auto"))


def set_backend(name: str) -> None:
    global _active
    _active = resolve(name)


def get_backend():
    """The active kernel module (use ``.NAME`` for its name)."""
    return _active
