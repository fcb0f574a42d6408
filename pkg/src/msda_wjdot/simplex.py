"""Euclidean projection onto the probability simplex."""

import numpy as np

from .errors import InputError

SIMPLEX_TOL = 1e-12


def project_to_simplex(w):
    """Return ``argmin_{a >= 0, sum(a) = 1} ||w - a||``.

    Sort-and-threshold: with ``u`` the entries of ``w`` in descending order,
    ``K`` is the largest ``k`` such that ``(u_1 + ... + u_k - 1) / k < u_k``
    and the result is ``max(w - tau, 0)`` with
    ``tau = (u_1 + ... + u_K - 1) / K``. Ties in the sort keep the original
    index order.
    """
    w = np.asarray(w, dtype=float)
    if w.ndim != 1 or w.size == 0:
        raise InputError(f"expected a non-empty vector, got shape {w.shape}")
    if not np.all(np.isfinite(w)):
        raise InputError("cannot project a vector with non-finite entries")
    # the projection commutes with shifts along the ones vector; centring on
    # the maximum keeps the k = 1 threshold test exact even for huge entries
    w = w - w.max()
    order = np.argsort(-w, kind="stable")
    u = w[order]
    cssv = np.cumsum(u) - 1.0
    k = np.arange(1, w.size + 1)
    K = np.nonzero(cssv / k < u)[0][-1] + 1
    tau = cssv[K - 1] / K
    alpha = np.maximum(w - tau, 0.0)
    # absorb the rounding of w - tau so the total mass stays at 1
    return alpha / alpha.sum()


def is_on_simplex(alpha, tol=SIMPLEX_TOL):
    alpha = np.asarray(alpha, dtype=float)
    return bool(
        alpha.ndim == 1
        and alpha.size > 0
        and np.all(np.isfinite(alpha))
        and np.all(alpha >= 0)
        and abs(alpha.sum() - 1.0) <= tol
    )


def uniform_weights(J):
    return np.full(J, 1.0 / J)
