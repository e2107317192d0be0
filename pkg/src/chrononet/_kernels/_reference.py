"""Pure-numpy implementations of the fused cosine-model kernels.

These mirror the compiled extension exactly and serve as the fallback when
the extension is unavailable (or when CHRONONET_KERNELS=numpy).
"""

import numpy as np


def cosine_model_predict(phases, L, A, phi, omega):
    """Model surface x_hat[i, p] = L[p] + A[p] * cos(omega[p] * phases[i] + phi[p])."""
    theta = np.outer(phases, omega) + phi
    return L + A * np.cos(theta)


def cosine_model_loss_grad(x, phases, L, A, phi, omega, q=1.0):
    """Mean |x - x_hat|^q over all cells plus gradients w.r.t. every parameter.

    Returns (loss, d_phases, dL, dA, dphi, domega). The q=1 subgradient is 0
    at exact zeros of the residual.
    """
    m, n = x.shape
    inv = 1.0 / (m * n)
    theta = np.outer(phases, omega) + phi
    c = np.cos(theta)
    s = np.sin(theta)
    r = x - (L + A * c)
    if q == 1.0:
        loss = np.abs(r).sum() * inv
        w = np.sign(r) * inv
    elif q == 2.0:
        loss = (r * r).sum() * inv
        w = 2.0 * inv * r
    else:
        ar = np.abs(r)
        loss = (ar**q).sum() * inv
        with np.errstate(divide="ignore", invalid="ignore"):
            w = np.where(r == 0.0, 0.0, q * ar ** (q - 1.0) * np.sign(r)) * inv
    was = w * A * s
    d_phases = was @ omega
    dL = -w.sum(axis=0)
    dA = -(w * c).sum(axis=0)
    dphi = was.sum(axis=0)
    domega = phases @ was
    return loss, d_phases, dL, dA, dphi, domega
