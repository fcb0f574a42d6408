"""Weighted joint-distribution optimal transport for multi-source adaptation.

The target classifier ``f`` and simplex weights ``alpha`` over the sources are
learned jointly by minimising the OT cost between the self-labelled target
``{(g(x), f(g(x)))}`` and the ``alpha``-mixture of the labelled sources
``{(g(x_j), y_j)}`` under the ground cost
``beta * ||z - z'||^2 + L(y, y')``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import LabeledDataset
from .errors import DivergenceError, InputError
from .measure import DiscreteMeasure, mix_measures, solve_exact_ot, squared_distances, tv_distance_discrete
from .model import (
    FeedForwardModel,
    build_model,
    label_loss_matrix,
    predict_labels,
    weighted_loss_gradient,
)
from .simplex import is_on_simplex, project_to_simplex, uniform_weights

VALIDATION_KINDS = ("sse", "weighted_accuracy", "none")
DEFAULT_BETA_GRID = (0.01, 0.1, 1.0, 10.0)
_ROW_TOL = 1e-10
_DIVERGED_COST = 1e100


@dataclass
class WjdotConfig:
    """Optimisation settings.

    ``beta=None`` selects the feature-cost weight from ``beta_grid`` with the
    validation criterion. ``hidden`` lists hidden widths of the classifier
    (empty: a single linear softmax layer).
    """

    beta: float | None = None
    beta_grid: tuple = DEFAULT_BETA_GRID
    step_alpha: float = 0.1
    step_theta: float = 0.5
    max_iters: int = 200
    validation: str = "sse"
    patience: int = 20
    seed: int = 0
    label_loss: str = "squared"
    hidden: tuple = ()
    activation: str = "tanh"
    refresh_between_updates: bool = True
    learn_alpha: bool = True

    def validate(self):
        if self.beta is not None and not self.beta >= 0:
            raise InputError("beta must be >= 0")
        if self.beta is None and not self.beta_grid:
            raise InputError("beta_grid must be non-empty when beta is not set")
        if not (self.step_alpha > 0 and self.step_theta > 0):
            raise InputError("step sizes must be > 0")
        if self.max_iters < 1:
            raise InputError("max_iters must be >= 1")
        if self.validation not in VALIDATION_KINDS:
            raise InputError(f"validation must be one of {VALIDATION_KINDS}")
        if self.beta is None and self.validation == "none":
            raise InputError("beta must be given explicitly when validation is 'none'")
        if self.patience < 1:
            raise InputError("patience must be >= 1")
        if self.label_loss not in ("squared", "cross_entropy"):
            raise InputError("label_loss must be 'squared' or 'cross_entropy'")


@dataclass
class JointAtoms:
    """Weighted atoms ``(embedding, label row)`` of a joint distribution."""

    features: np.ndarray
    labels: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=float)
        self.labels = np.asarray(self.labels, dtype=float)
        self.weights = np.asarray(self.weights, dtype=float)
        n = self.features.shape[0]
        if self.labels.shape[0] != n or self.weights.shape != (n,):
            raise InputError("features, labels and weights must have the same number of rows")
        if np.any(self.labels < -_ROW_TOL) or np.any(np.abs(self.labels.sum(1) - 1.0) > _ROW_TOL):
            raise InputError("label rows must be probability vectors")

    def __len__(self):
        return self.features.shape[0]

    def measure(self):
        return DiscreteMeasure(np.hstack([self.features, self.labels]), self.weights)


@dataclass
class WjdotState:
    alpha: np.ndarray
    classifier: FeedForwardModel
    iteration: int = 0
    best_iteration: int = 0
    beta: float = 1.0
    loss_history: list = field(default_factory=list)
    validation_history: list = field(default_factory=list)
    alpha_history: list = field(default_factory=list)

    @property
    def final_alpha(self):
        return self.alpha_history[-1]


# --- building blocks ------------------------------------------------------


def embed(g, X):
    X = np.asarray(X, dtype=float)
    return X if g is None or g.is_identity else g.forward(X)


def source_atoms(data: LabeledDataset, g=None, n_classes=None) -> JointAtoms:
    K = n_classes or data.n_classes
    Y = np.zeros((len(data), K))
    Y[np.arange(len(data)), data.labels] = 1.0
    return JointAtoms(embed(g, data.features), Y, np.full(len(data), 1.0 / len(data)))


def proxy_target(model, g, X_T) -> JointAtoms:
    """Target atoms labelled by the current classifier, uniform weights."""
    Z = embed(g, X_T)
    if Z.shape[0] < 1:
        raise InputError("target has no samples")
    return JointAtoms(Z, model.forward(Z), np.full(Z.shape[0], 1.0 / Z.shape[0]))


def build_joint_cost(source: JointAtoms, target: JointAtoms, beta, label_loss="squared"):
    """``D[i, j] = beta * ||z_i - z'_j||^2 + L(y_i, y'_j)``."""
    if source.features.shape[1] != target.features.shape[1]:
        raise InputError(
            f"embedding dimension mismatch: {source.features.shape[1]} vs {target.features.shape[1]}"
        )
    if source.labels.shape[1] != target.labels.shape[1]:
        raise InputError(f"label dimension mismatch: {source.labels.shape[1]} vs {target.labels.shape[1]}")
    return beta * squared_distances(source.features, target.features) + label_loss_matrix(
        source.labels, target.labels, label_loss
    )


def _stack(sources, alpha):
    """Mixture of the sources as one set of joint atoms (rows in source order)."""
    mixed = mix_measures([s.measure() for s in sources], alpha)
    return JointAtoms(
        np.concatenate([s.features for s in sources]),
        np.concatenate([s.labels for s in sources]),
        mixed.weights,
    )


def wjdot_objective(sources, alpha, target: JointAtoms, beta, label_loss="squared"):
    """OT cost between the proxy target and the ``alpha``-mixture of sources.

    Rows of the returned plan are the mixture atoms in source order, columns
    are target atoms; ``dual_source`` therefore holds the mixture-side duals.
    """
    sources = list(sources)
    if len(sources) != len(alpha):
        raise InputError(f"{len(sources)} sources but alpha has length {len(alpha)}")
    mixture = _stack(sources, alpha)
    cost = build_joint_cost(mixture, target, beta, label_loss)
    solution = solve_exact_ot(mixture.weights, target.weights, cost)
    return solution.value, solution


def alpha_gradient(solution, source_sizes):
    """Per-source mean of the mixture-side dual potentials.

    An atom of source ``j`` carries mass ``alpha_j / N_j``, so the derivative
    of the OT cost w.r.t. ``alpha_j`` is ``(1/N_j) * sum_i dual[j, i]``.
    """
    sizes = [int(n) for n in source_sizes]
    duals = solution.dual_source
    if sum(sizes) != duals.shape[0]:
        raise RuntimeError(f"source sizes sum to {sum(sizes)} but there are {duals.shape[0]} mixture duals")
    bounds = np.cumsum([0] + sizes)
    return np.array([duals[lo:hi].mean() for lo, hi in zip(bounds[:-1], bounds[1:])])


def theta_gradient(solution, sources, model, g, X_T, label_loss="squared"):
    """Gradient of ``sum_ij plan[i, j] * L(y_i, f(g(x_T^j)))`` with the plan frozen."""
    Y = np.concatenate([s.labels for s in sources])
    Z = embed(g, X_T)
    P = model.forward(Z)
    if solution.plan.shape != (Y.shape[0], P.shape[0]):
        raise InputError(f"plan of shape {solution.plan.shape} does not match {Y.shape[0]} x {P.shape[0]} atoms")
    return model.backward(Z, weighted_loss_gradient(Y, P, solution.plan, label_loss))


# --- validation -----------------------------------------------------------


def sse_score(classifier, Z_T):
    """Within-cluster sum of squares of the target embeddings, clusters = predicted classes."""
    pred = np.argmax(classifier.forward(Z_T), axis=1)
    total = 0.0
    for c in np.unique(pred):
        members = Z_T[pred == c]
        total += float(((members - members.mean(axis=0)) ** 2).sum())
    return total


def weighted_accuracy(classifier, alpha, sources, g=None):
    """``sum_j alpha_j * accuracy on source j``."""
    accs = np.array([np.mean(predict_labels(classifier, embed(g, s.features)) == s.labels) for s in sources])
    return float(np.dot(alpha, accs))


def validation_score(kind, state, sources, X_T, g=None):
    """SSE (lower is better) or alpha-weighted source accuracy (higher is better)."""
    if kind == "sse":
        return sse_score(state.classifier, embed(g, X_T))
    if kind == "weighted_accuracy":
        return weighted_accuracy(state.classifier, state.alpha, sources, g)
    if kind == "none":
        return math.nan
    raise InputError(f"unknown validation kind {kind!r}")


def _improves(kind, score, best):
    if best is None:
        return True
    # Ties count as improvements so the latest equally good snapshot is kept.
    return score <= best if kind == "sse" else score >= best


# --- trajectory log -------------------------------------------------------


class TrajectoryLog:
    """Append-only CSV: ``iteration,objective,validation_score,alpha_1..alpha_J``."""

    def __init__(self, path, n_sources):
        self.path = Path(path)
        self._fh = self.path.open("w", newline="")
        self._writer = csv.writer(self._fh)
        self._writer.writerow(["iteration", "objective", "validation_score"]
                              + [f"alpha_{j + 1}" for j in range(n_sources)])

    def append(self, iteration, objective, score, alpha):
        self._writer.writerow([iteration, repr(float(objective)), repr(float(score))]
                              + [repr(float(a)) for a in alpha])
        self._fh.flush()

    def close(self):
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def write_trajectory(state: WjdotState, path):
    with TrajectoryLog(path, len(state.alpha)) as log:
        for it, (obj, score, alpha) in enumerate(
            zip(state.loss_history, state.validation_history, state.alpha_history)
        ):
            log.append(it, obj, score, alpha)


# --- optimisation loop ----------------------------------------------------


class _MixtureProblem:
    """Cached atoms and feature costs for repeated objective evaluations."""

    def __init__(self, sources, Z_T, beta, label_loss):
        self.sources = sources
        self.sizes = [len(s) for s in sources]
        self.Z_T = Z_T
        self.Y = np.concatenate([s.labels for s in sources])
        self.feature_cost = beta * squared_distances(np.concatenate([s.features for s in sources]), Z_T)
        self.label_loss = label_loss
        self.target_weights = np.full(Z_T.shape[0], 1.0 / Z_T.shape[0])
        self.measures = [s.measure() for s in sources]

    def evaluate(self, model, alpha):
        P = model.forward(self.Z_T)
        if not np.all(np.isfinite(P)):
            return math.nan, None
        cost = self.feature_cost + label_loss_matrix(self.Y, P, self.label_loss)
        # the network simplex sums costs internally; beyond this scale its
        # arithmetic breaks down, which only happens once training has diverged
        if not np.all(np.abs(cost) < _DIVERGED_COST):
            return math.nan, None
        weights = mix_measures(self.measures, alpha).weights
        solution = solve_exact_ot(weights, self.target_weights, cost)
        return solution.value, (solution, P)

    def theta_grad(self, ctx, model):
        solution, P = ctx
        return model.backward(self.Z_T, weighted_loss_gradient(self.Y, P, solution.plan, self.label_loss))

    def alpha_grad(self, ctx):
        return alpha_gradient(ctx[0], self.sizes)


def _init_classifier(config, in_dim, n_classes):
    return build_model(in_dim, n_classes, hidden=config.hidden, activation=config.activation,
                       output="softmax", seed=config.seed)


def _check_validation_sources(validation_sources, sources):
    if validation_sources is not None and len(validation_sources) != len(sources):
        raise InputError(f"{len(validation_sources)} validation sources for {len(sources)} sources")


def _validate_inputs(sources, X_T, g):
    sources = list(sources)
    if not sources:
        raise InputError("need at least one source")
    X_T = np.asarray(X_T, dtype=float)
    if X_T.ndim != 2 or X_T.shape[0] < 1:
        raise InputError(f"target features must be a non-empty (N, d) matrix, got {X_T.shape}")
    for j, s in enumerate(sources):
        if s.dim != X_T.shape[1]:
            raise InputError(f"source {j} has dimension {s.dim}, target has {X_T.shape[1]}")
    if g is not None and g.input_dim != X_T.shape[1]:
        raise InputError(f"embedding expects dimension {g.input_dim}, data has {X_T.shape[1]}")
    return sources, X_T


def optimize(problem, classifier, alpha, config, *, update_alpha, score_fn, log=None, record_alpha=None):
    """Alternating projected gradient descent shared by WJDOT and the JDOT baselines.

    ``problem`` provides ``evaluate(model, alpha) -> (value, ctx)``,
    ``theta_grad(ctx, model)`` and ``alpha_grad(ctx)``. Row ``t`` of the
    histories describes the iterate after ``t`` updates.
    """
    kind = config.validation
    state = WjdotState(alpha=alpha.copy(), classifier=classifier.copy())
    best = None
    for it in range(config.max_iters + 1):
        value, ctx = problem.evaluate(classifier, alpha)
        if not math.isfinite(value):
            raise DivergenceError(it)
        shown_alpha = alpha if record_alpha is None else record_alpha
        score = score_fn(classifier, alpha) if kind != "none" else math.nan
        state.loss_history.append(value)
        state.validation_history.append(score)
        state.alpha_history.append(shown_alpha.copy())
        state.iteration = it
        if log is not None:
            log.append(it, value, score, shown_alpha)
        if kind == "none" or _improves(kind, score, best):
            best = score
            state.best_iteration = it
            state.alpha = shown_alpha.copy()
            state.classifier = classifier.copy()
        if kind != "none" and it - state.best_iteration >= config.patience:
            break
        if it == config.max_iters:
            break

        classifier.step(problem.theta_grad(ctx, classifier), config.step_theta)
        if update_alpha:
            if config.refresh_between_updates:
                refreshed, ctx = problem.evaluate(classifier, alpha)
                if not math.isfinite(refreshed):
                    raise DivergenceError(it + 1)
            grad = problem.alpha_grad(ctx)
            if not np.all(np.isfinite(grad)):
                raise DivergenceError(it + 1)
            alpha = project_to_simplex(alpha - config.step_alpha * grad)
            if not is_on_simplex(alpha):
                raise RuntimeError(f"alpha left the simplex at iteration {it + 1}")
    return state


def run_wjdot(sources, X_T, g=None, config=None, *, classifier=None, log=None, validation_sources=None):
    """Learn the target classifier and source weights.

    Parameters
    ----------
    sources : list of LabeledDataset
    X_T : (N_T, d) array
        Unlabelled target features.
    g : FeedForwardModel or None
        Fixed embedding; ``None`` is the identity.
    config : WjdotConfig
    classifier : FeedForwardModel, optional
        Initial classifier on the embedding; seeded from ``config`` otherwise.
    log : TrajectoryLog, optional
    validation_sources : list of LabeledDataset, optional
        Held-out labelled source data for the ``weighted_accuracy``
        criterion, one per source; the training sources are used otherwise.

    Returns
    -------
    WjdotState
        ``alpha`` and ``classifier`` are the best validation snapshot (the
        last iterate when validation is ``"none"``); the histories hold the
        whole trajectory.
    """
    config = config or WjdotConfig()
    config.validate()
    sources, X_T = _validate_inputs(sources, X_T, g)
    _check_validation_sources(validation_sources, sources)
    if config.beta is None:
        return select_beta(sources, X_T, g, config, run_wjdot, classifier=classifier, log=log,
                           validation_sources=validation_sources)

    K = max(s.n_classes for s in sources)
    atoms = [source_atoms(s, g, K) for s in sources]
    Z_T = embed(g, X_T)
    problem = _MixtureProblem(atoms, Z_T, config.beta, config.label_loss)
    f = classifier.copy() if classifier is not None else _init_classifier(config, Z_T.shape[1], K)
    alpha = uniform_weights(len(sources))
    state = optimize(problem, f, alpha, config, update_alpha=config.learn_alpha and len(sources) > 1,
                     score_fn=_score_fn(config.validation, validation_sources or sources, Z_T, g), log=log)
    state.beta = config.beta
    return state


def _score_fn(kind, sources, Z_T, g):
    if kind == "sse":
        return lambda f, alpha: sse_score(f, Z_T)
    if kind == "weighted_accuracy":
        embedded = [(embed(g, s.features), s.labels) for s in sources]
        return lambda f, alpha: float(np.dot(alpha, [np.mean(predict_labels(f, Z) == y) for Z, y in embedded]))
    return lambda f, alpha: math.nan


def select_beta(sources, X_T, g, config, runner, *, log=None, **kwargs):
    """Run ``runner`` for every ``beta`` in the grid and keep the best validated run.

    Only the selected run is written to ``log``.
    """
    from dataclasses import replace

    kind = config.validation
    best_state, best_score = None, None
    for beta in config.beta_grid:
        state = runner(sources, X_T, g, replace(config, beta=float(beta)), **kwargs)
        score = state.validation_history[state.best_iteration]
        better = best_score is None or (score < best_score if kind == "sse" else score > best_score)
        if better:
            best_state, best_score = state, score
    if log is not None:
        for it, row in enumerate(zip(best_state.loss_history, best_state.validation_history,
                                     best_state.alpha_history)):
            log.append(it, *row)
    return best_state


# --- bound diagnostics ----------------------------------------------------


@dataclass
class BoundDiagnostics:
    eps_alpha: float
    eps_T: float
    tv: float
    lemma1_rhs: float
    lambda_upper: float
    source_errors: np.ndarray


def joint_measure(data: LabeledDataset):
    """Empirical joint distribution: atoms ``(x, label)`` with weight ``1/N``."""
    return DiscreteMeasure.uniform(np.hstack([data.features, data.labels[:, None].astype(float)]))


def zero_one_error(classifier, data, g=None):
    return float(np.mean(predict_labels(classifier, embed(g, data.features)) != data.labels))


def bound_diagnostics(classifier, sources, alpha, target: LabeledDataset, loss_bound=1.0, g=None):
    """Risk terms of the mixture-to-target bound for a fixed classifier.

    Errors use the 0-1 loss; ``tv`` is the total variation between the
    empirical joint target distribution and the ``alpha``-mixture of the
    empirical joint source distributions; ``lambda_upper`` plugs the given
    classifier into the combined mixture-plus-target risk.
    """
    sources = list(sources)
    alpha = np.asarray(alpha, dtype=float)
    if not is_on_simplex(alpha) or alpha.shape[0] != len(sources):
        raise InputError("alpha must be a simplex vector with one entry per source")
    dims = {s.dim for s in sources} | {target.dim}
    if len(dims) != 1:
        raise InputError(
            "total variation needs source and target distributions on a common support; "
            f"got feature dimensions {sorted(dims)}"
        )
    errors = np.array([zero_one_error(classifier, s, g) for s in sources])
    eps_alpha = float(alpha @ errors)
    eps_T = zero_one_error(classifier, target, g)
    mixture = mix_measures([joint_measure(s) for s in sources], alpha)
    tv = tv_distance_discrete(joint_measure(target), mixture)
    return BoundDiagnostics(
        eps_alpha=eps_alpha,
        eps_T=eps_T,
        tv=tv,
        lemma1_rhs=eps_alpha + loss_bound * tv,
        lambda_upper=eps_alpha + eps_T,
        source_errors=errors,
    )
