"""Kernel backend selection.

The hot Householder/WY inner loops exist twice: a Cython extension
(`_core`, built at install time) and a pure-numpy fallback (`_fallback`).
The extension is picked automatically when importable; `set_backend` swaps
them at runtime, which the kernel benchmark uses to compare the two.
"""

from . import _fallback

try:  # pragma: no cover - exercised only when the extension is built
    from . import _core

    _HAVE_CORE = True
except ImportError:  # pragma: no cover
    _core = None
    _HAVE_CORE = False

_BACKENDS = {"fallback": _fallback}
if _HAVE_CORE:
    _BACKENDS["compiled"] = _core

_active = _BACKENDS.get("compiled", _fallback)

_KERNEL_NAMES = (
    "qr_inplace",
    "larft",
    "apply_wy_qt",
    "apply_wy_q",
    "apply_reflectors_qt",
    "apply_reflectors_q",
    "solve_triu",
    "batched_qr",
    "batched_apply_qt",
    "batched_apply_q",
    "batched_solve_triu",
)


def available_backends():
    return tuple(sorted(_BACKENDS))


def active_backend():
    return "compiled" if _active is _core else "fallback"


def set_backend(name):
    """Select 'compiled' or 'fallback'; returns the previously active name."""
    global _active
    if name not in _BACKENDS:
        raise ValueError(f"unknown kernel backend {name!r}; have {available_backends()}")
    previous = active_backend()
    _active = _BACKENDS[name]
    _rebind()
    return previous


def _rebind():
    g = globals()
    for fn in _KERNEL_NAMES:
        g[fn] = getattr(_active, fn)


_rebind()
