"""Backend selection for the LSTM recurrences.

The compiled extension is used when it imports; set ``PDGM_PURE_PYTHON=1``
to force the numpy fallback.
"""

from __future__ import annotations

import os

from . import _lstm_py

try:
    if os.environ.get("PDGM_PURE_PYTHON", "").strip() not in ("", "0"):
        raise ImportError("pure-python backend forced by PDGM_PURE_PYTHON")
    from . import _lstm_ext as _compiled
except ImportError:
    _compiled = None

BACKENDS = {"python": _lstm_py}
if _compiled is not None:
    BACKENDS["cython"] = _compiled

BACKEND = "cython" if _compiled is not None else "python"
_active = BACKENDS[BACKEND]


def get_backend(name: str | None = None):
    if name is None:
        return _active
    try:
        return BACKENDS[name]
    except KeyError:
        raise ValueError(f"backend {name!r} unavailable; have {sorted(BACKENDS)}") from None


def lstm_forward(xw, wh, backend: str | None = None):
    return get_backend(backend).lstm_forward(xw, wh)


def lstm_backward(wh, c_seq, gates, d_a, d_c, backend: str | None = None):
    return get_backend(backend).lstm_backward(wh, c_seq, gates, d_a, d_c)
