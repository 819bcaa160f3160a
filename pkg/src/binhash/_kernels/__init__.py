"""Hot-kernel dispatch.

The compiled extension (``_core``, built from Cython) is preferred; the pure
NumPy/Python module (``_fallback``) is used when the extension is missing or
when the environment variable ``BINHASH_PURE_PYTHON=1`` is set. Both expose
the same functions; ``BACKEND`` reports which one is active.
"""

import os

from . import _fallback

if os.environ.get("BINHASH_PURE_PYTHON", "") not in ("", "0"):
    _impl = _fallback
    BACKEND = "python"
else:
    try:
        from . import _core as _impl  # type: ignore[no-redef]

        BACKEND = "compiled"
    except ImportError:
        _impl = _fallback
        BACKEND = "python"

KSH = _fallback.KSH
BRE = _fallback.BRE
ESPLH = _fallback.ESPLH
EE = _fallback.EE

pair_dots = _impl.pair_dots
pair_losses = _impl.pair_losses
bit_coeffs = _impl.bit_coeffs
hamming_cross = _impl.hamming_cross
mincut_side = _impl.mincut_side
dcd_linear = _impl.dcd_linear
