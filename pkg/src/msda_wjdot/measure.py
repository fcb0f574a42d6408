"""Discrete measures and exact optimal transport.

Holds the weighted-atom representation used everywhere else, the exact OT
solver (with dual potentials), convex mixtures of measures, the closed-form
Bures-Wasserstein distance between Gaussian summaries and the total variation
distance between discrete measures.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .errors import InputError

# POT probes every installed array backend at import time; only numpy is used.
for _backend in ("TENSORFLOW", "PYTORCH", "JAX", "CUPY"):
    os.environ.setdefault(f"POT_BACKEND_DISABLE_{_backend}", "1")

import ot  # noqa: E402

MASS_TOL = 1e-12
SOLVER_MASS_TOL = 1e-9
PSD_TOL = 1e-10
_MAX_SIMPLEX_ITER = 100_000_000


def _frozen(arr):
    arr = np.array(arr, dtype=float)
    arr.setflags(write=False)
    return arr


def check_weights(weights, name="weights", tol=MASS_TOL):
    """Validate a probability vector and return it as a float array."""
    w = np.asarray(weights, dtype=float)
    if w.ndim != 1 or w.size == 0:
        raise InputError(f"{name} must be a non-empty 1-d vector, got shape {w.shape}")
    if not np.all(np.isfinite(w)):
        raise InputError(f"{name} contains non-finite entries")
    if np.any(w < 0):
        raise InputError(f"{name} has negative entries")
    if abs(w.sum() - 1.0) > tol:
        raise InputError(f"{name} must sum to 1 (got {w.sum()!r})")
    return w


@dataclass(frozen=True)
class DiscreteMeasure:
    """Weighted atoms ``sum_i weights[i] * delta(atoms[i])`` in R^d."""

    atoms: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        atoms = np.asarray(self.atoms, dtype=float)
        if atoms.ndim == 1:
            atoms = atoms[:, None]
        if atoms.ndim != 2 or atoms.shape[0] == 0:
            raise InputError(f"atoms must be an (n, d) array with n >= 1, got {atoms.shape}")
        weights = check_weights(self.weights)
        if weights.shape[0] != atoms.shape[0]:
            raise InputError(
                f"{atoms.shape[0]} atoms but {weights.shape[0]} weights"
            )
        object.__setattr__(self, "atoms", _frozen(atoms))
        object.__setattr__(self, "weights", _frozen(weights))

    @classmethod
    def uniform(cls, atoms):
        atoms = np.asarray(atoms, dtype=float)
        n = atoms.shape[0]
        return cls(atoms, np.full(n, 1.0 / n))

    @property
    def size(self):
        return self.atoms.shape[0]

    @property
    def dim(self):
        return self.atoms.shape[1]


@dataclass(frozen=True)
class TransportSolution:
    """Optimal plan, its cost and a pair of complementary dual potentials.

    Duals are centered so that ``dual_source.mean() == 0``.
    """

    plan: np.ndarray
    value: float
    dual_source: np.ndarray
    dual_target: np.ndarray


@dataclass(frozen=True)
class GaussianSummary:
    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        cov = np.atleast_2d(np.asarray(self.covariance, dtype=float))
        d = mean.shape[0]
        if mean.ndim != 1 or cov.shape != (d, d):
            raise InputError(f"mean of shape {mean.shape} and covariance of shape {cov.shape} disagree")
        _check_psd(cov)
        object.__setattr__(self, "mean", _frozen(mean))
        object.__setattr__(self, "covariance", _frozen(cov))

    @classmethod
    def from_samples(cls, X):
        """First and second (central, biased) moments of the rows of ``X``."""
        X = np.asarray(X, dtype=float)
        mean = X.mean(axis=0)
        centered = X - mean
        cov = centered.T @ centered / X.shape[0]
        return cls(mean, 0.5 * (cov + cov.T))


def check_cost(cost, n=None, m=None):
    C = np.asarray(cost, dtype=float)
    if C.ndim != 2:
        raise InputError(f"cost must be a 2-d matrix, got shape {C.shape}")
    if (n is not None and C.shape[0] != n) or (m is not None and C.shape[1] != m):
        raise InputError(f"cost has shape {C.shape}, expected ({n}, {m})")
    if not np.all(np.isfinite(C)):
        raise InputError("cost contains non-finite entries")
    return C


def solve_exact_ot(source_weights, target_weights, cost):
    """Solve the discrete Kantorovich problem exactly.

    Parameters
    ----------
    source_weights : (n,) array_like
        Row marginal, sums to one. Zero entries are allowed.
    target_weights : (m,) array_like
        Column marginal, sums to one.
    cost : (n, m) array_like
        Ground cost, finite.

    Returns
    -------
    TransportSolution
        ``value == <plan, cost>``. Every atom, including zero-mass ones,
        receives a feasible dual; zero-mass atoms get the largest feasible
        value, i.e. the marginal cost of moving mass onto them.
    """
    a = check_weights(source_weights, "source weights", SOLVER_MASS_TOL)
    b = check_weights(target_weights, "target weights", SOLVER_MASS_TOL)
    C = check_cost(cost, a.shape[0], b.shape[0])

    # Zero-mass atoms carry no flow; solving on the active block is exact and
    # much cheaper when a mixture switches most of its sources off.
    rows_null = a == 0
    cols_null = b == 0
    rows, cols = np.nonzero(~rows_null)[0], np.nonzero(~cols_null)[0]
    sub, log = ot.emd(a[rows], b[cols], C[np.ix_(rows, cols)], numItermax=_MAX_SIMPLEX_ITER, log=True,
                      center_dual=False)
    if log["result_code"] != 1:
        raise RuntimeError(f"network simplex did not reach optimality: {log['warning']}")
    plan = np.zeros_like(C)
    plan[np.ix_(rows, cols)] = sub
    u = np.zeros(a.shape[0])
    v = np.zeros(b.shape[0])
    u[rows] = log["u"]
    v[cols] = log["v"]

    if rows_null.any():
        u[rows_null] = np.min(C[np.ix_(rows_null, cols)] - v[cols], axis=1)
    if cols_null.any():
        v[cols_null] = np.min(C[:, cols_null] - u[:, None], axis=0)

    shift = u.mean()
    u -= shift
    v += shift
    value = float(np.sum(plan * C))
    return TransportSolution(_frozen(plan), value, _frozen(u), _frozen(v))


def wasserstein(p: DiscreteMeasure, q: DiscreteMeasure, cost=None) -> float:
    """OT cost between two measures; squared Euclidean ground cost by default."""
    if cost is None:
        if p.dim != q.dim:
            raise InputError(f"dimension mismatch: {p.dim} vs {q.dim}")
        cost = squared_distances(p.atoms, q.atoms)
    return solve_exact_ot(p.weights, q.weights, cost).value


def squared_distances(X, Y):
    """Pairwise squared Euclidean distances between rows, clipped at 0."""
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    D = (X * X).sum(1)[:, None] + (Y * Y).sum(1)[None, :] - 2.0 * X @ Y.T
    return np.maximum(D, 0.0)


def mix_measures(components, alpha) -> DiscreteMeasure:
    """Convex combination ``sum_j alpha[j] * components[j]``.

    Atoms are concatenated in component order and zero-weight atoms are kept,
    so atom ``i`` of component ``j`` sits at offset ``sum(sizes[:j]) + i``.
    """
    components = list(components)
    alpha = check_weights(alpha, "alpha")
    if len(components) != alpha.shape[0]:
        raise InputError(f"{len(components)} components but alpha has length {alpha.shape[0]}")
    dims = {c.dim for c in components}
    if len(dims) != 1:
        raise InputError(f"components live in different dimensions: {sorted(dims)}")
    atoms = np.concatenate([c.atoms for c in components], axis=0)
    weights = np.concatenate([a_j * c.weights for a_j, c in zip(alpha, components)])
    return DiscreteMeasure(atoms, weights)


def _check_psd(A):
    if not np.all(np.isfinite(A)):
        raise InputError("matrix contains non-finite entries")
    scale = max(1.0, float(np.max(np.abs(A))))
    if np.max(np.abs(A - A.T)) > PSD_TOL * scale:
        raise InputError("matrix is not symmetric")
    eig = np.linalg.eigvalsh(0.5 * (A + A.T))
    if eig.min() < -PSD_TOL * scale:
        raise InputError(f"matrix is indefinite (smallest eigenvalue {eig.min():.3e})")


def sqrtm_spd(A):
    """Principal square root of a symmetric positive semidefinite matrix."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if A.shape[0] != A.shape[1]:
        raise InputError(f"matrix must be square, got {A.shape}")
    _check_psd(A)
    eig, vec = np.linalg.eigh(0.5 * (A + A.T))
    root = (vec * np.sqrt(np.clip(eig, 0.0, None))) @ vec.T
    return 0.5 * (root + root.T)


def bures_wasserstein(p: GaussianSummary, q: GaussianSummary) -> float:
    """2-Wasserstein distance between Gaussians with the given moments."""
    if p.mean.shape != q.mean.shape:
        raise InputError(f"dimension mismatch: {p.mean.shape[0]} vs {q.mean.shape[0]}")
    root_p = sqrtm_spd(p.covariance)
    cross = sqrtm_spd(root_p @ q.covariance @ root_p)
    trace = np.trace(p.covariance) + np.trace(q.covariance) - 2.0 * np.trace(cross)
    if trace < 0:
        scale = max(1.0, np.trace(p.covariance) + np.trace(q.covariance))
        if trace < -1e-9 * scale:
            raise ArithmeticError(f"negative Bures trace term {trace:.3e}")
        trace = 0.0
    delta = p.mean - q.mean
    return float(np.sqrt(delta @ delta + trace))


def collapse_atoms(measure: DiscreteMeasure):
    """Merge exactly equal atoms, summing their weights."""
    atoms, inverse = np.unique(measure.atoms, axis=0, return_inverse=True)
    weights = np.bincount(inverse.ravel(), weights=measure.weights, minlength=atoms.shape[0])
    return atoms, weights


def tv_distance_discrete(p: DiscreteMeasure, q: DiscreteMeasure) -> float:
    """Total variation ``0.5 * sum_a |p(a) - q(a)|`` over the union of atoms."""
    if p.dim != q.dim:
        raise InputError(f"measures live in different spaces: dimension {p.dim} vs {q.dim}")
    atoms = np.concatenate([p.atoms, q.atoms], axis=0)
    _, inverse = np.unique(atoms, axis=0, return_inverse=True)
    inverse = inverse.ravel()
    k = inverse.max() + 1
    mass_p = np.bincount(inverse[: p.size], weights=p.weights, minlength=k)
    mass_q = np.bincount(inverse[p.size:], weights=q.weights, minlength=k)
    return float(np.clip(0.5 * np.abs(mass_p - mass_q).sum(), 0.0, 1.0))
