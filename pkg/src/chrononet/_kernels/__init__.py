"""Cosine-model kernels with a compiled core and a numpy fallback.

The backend is fixed at import time. CHRONONET_KERNELS selects it:
  auto      use the compiled extension when importable, else numpy (default)
  compiled  require the extension, fail loudly if missing
  numpy     force the pure-numpy reference implementation
"""

import os

import numpy as np

_choice = os.environ.get("CHRONONET_KERNELS", "auto").strip().lower()
if _choice not in {"auto", "compiled", "numpy"}:
    raise ImportError(
        f"CHRONONET_KERNELS={_choice!r} not recognized (use auto, compiled or numpy)"
    )

if _choice == "numpy":
    from . import _reference as _impl

    BACKEND = "numpy"
else:
    try:
        from . import _core as _impl

        BACKEND = "compiled"
    except ImportError:
        if _choice == "compiled":
            raise ImportError(
                "CHRONONET_KERNELS=compiled but the extension module is not built; "
                "reinstall the package or set CHRONONET_KERNELS=numpy"
            ) from None
        from . import _reference as _impl

        BACKEND = "numpy"


def _as_c64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def cosine_model_predict(phases, L, A, phi, omega):
    """x_hat[i, p] = L[p] + A[p] * cos(omega[p] * phases[i] + phi[p])."""
    return _impl.cosine_model_predict(
        _as_c64(phases), _as_c64(L), _as_c64(A), _as_c64(phi), _as_c64(omega)
    )


def cosine_model_loss_grad(x, phases, L, A, phi, omega, q=1.0):
    """Mean |x - x_hat|^q and its gradients.

    Returns (loss, d_phases, dL, dA, dphi, domega) with d_phases shaped (m,)
    and the parameter blocks shaped (n,).
    """
    return _impl.cosine_model_loss_grad(
        _as_c64(x),
        _as_c64(phases),
        _as_c64(L),
        _as_c64(A),
        _as_c64(phi),
        _as_c64(omega),
        float(q),
    )


__all__ = ["BACKEND", "cosine_model_loss_grad", "cosine_model_predict"]
