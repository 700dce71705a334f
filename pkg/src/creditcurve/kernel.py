"""Cash-flow covariance kernels shared by the GB and CB price-error models.

Both models give two bonds' price errors the covariance

    sigma2 * lambda_kl * sum_j sum_m c_kj c_lm exp(-theta |s_kj - s_lm|)

where ``c`` are (possibly expected) cash flows. For the CB model the flows are
linear in the unknowns, ``c_k = Z_k e`` with a loading vector ``e``, so the
double sum becomes ``e' H_kl e`` with ``H_kl = Z_k' F_kl Z_l``. Precomputing
``H`` once per ``theta`` turns every later covariance rebuild into a small
quadratic form.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np


def flow_gram(times: Sequence[np.ndarray], loadings: Sequence[np.ndarray], theta: float) -> np.ndarray:
    """``H[k, a, l, c] = sum_jm Z_k[j, a] Z_l[m, c] exp(-theta |s_kj - s_lm|)``.

    ``loadings[k]`` has shape ``(M_k, r)`` (or ``(M_k,)`` for ``r = 1``).
    """
    K = len(times)
    Z = [np.asarray(z, dtype=float).reshape(len(t), -1) for t, z in zip(times, loadings)]
    r = Z[0].shape[1]
    t_flat = np.concatenate([np.asarray(t, dtype=float) for t in times])
    owner = np.concatenate([np.full(len(t), k) for k, t in enumerate(times)])
    nf = t_flat.size
    BZ = np.zeros((nf, K, r))
    BZ[np.arange(nf), owner, :] = np.concatenate(Z, axis=0)
    BZ = BZ.reshape(nf, K * r)
    if theta == 0.0:
        col = BZ.sum(axis=0)
        H = np.outer(col, col)
    else:
        F = np.exp(-theta * np.abs(t_flat[:, None] - t_flat[None, :]))
        H = BZ.T @ (F @ BZ)
    H = 0.5 * (H + H.T)
    return H.reshape(K, r, K, r)


def flow_covariance(times: Sequence[np.ndarray], flows: Sequence[np.ndarray], theta: float) -> np.ndarray:
    """``phi_kl = sum_jm c_kj c_lm exp(-theta |s_kj - s_lm|)`` for fixed flows."""
    return flow_gram(times, flows, theta)[:, 0, :, 0]


def maturity_decay(maturities: np.ndarray, xi) -> np.ndarray:
    """``exp(-xi |M_k - M_l|)``; ``xi`` may be a scalar or a ``(K, K)`` array."""
    m = np.asarray(maturities, dtype=float)
    return np.exp(-np.asarray(xi) * np.abs(m[:, None] - m[None, :]))


def correlation_factor(maturities: np.ndarray, rho, xi) -> np.ndarray:
    """``lambda``: 1 on the diagonal, ``rho * exp(-xi |dM|)`` elsewhere."""
    lam = np.asarray(rho) * maturity_decay(maturities, xi)
    lam = np.array(lam, dtype=float)
    np.fill_diagonal(lam, 1.0)
    return lam
