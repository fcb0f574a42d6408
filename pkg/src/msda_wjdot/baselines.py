"""Reference methods: supervised ERM baselines and two naive multi-source JDOT variants.

``run_cjdot`` pools all source samples into one source distribution;
``run_mjdot`` sums one JDOT loss per source. Neither learns source weights.
Both reuse the WJDOT optimisation loop and return a ``WjdotState`` whose alpha
columns hold the (constant) implicit source weights.
"""

from __future__ import annotations

import math

import numpy as np

from .data import concat_datasets
from .errors import InputError
from .measure import solve_exact_ot
from .model import add_grads, build_model, train_classifier
from .wjdot import (
    WjdotConfig,
    _MixtureProblem,
    _check_validation_sources,
    build_joint_cost,
    _init_classifier,
    _score_fn,
    _validate_inputs,
    embed,
    optimize,
    select_beta,
    source_atoms,
)


def train_erm(datasets, hidden=(), activation="tanh", steps=500, rate=0.5, seed=0, loss="squared",
              validation=None):
    """Full-batch gradient descent on the pooled labelled data.

    Covers Baseline (sources), Target (target train split) and
    Baseline+Target (both) through the choice of ``datasets``. A
    ``validation`` dataset enables selection of the best-accuracy iterate.
    """
    datasets = list(datasets)
    if not datasets or all(len(d) == 0 for d in datasets):
        raise InputError("no training data")
    pooled = concat_datasets(datasets)
    model = build_model(pooled.dim, pooled.n_classes, hidden=hidden, activation=activation, seed=seed)
    val = None if validation is None else (validation.features, validation.labels)
    return train_classifier(model, pooled.features, pooled.labels, steps, rate, loss=loss, validation=val)


def _prepare(sources, X_T, g, config, validation_sources):
    config = config or WjdotConfig()
    config.validate()
    sources, X_T = _validate_inputs(sources, X_T, g)
    _check_validation_sources(validation_sources, sources)
    K = max(s.n_classes for s in sources)
    atoms = [source_atoms(s, g, K) for s in sources]
    return config, sources, atoms, embed(g, X_T), K


def run_cjdot(sources, X_T, g=None, config=None, *, classifier=None, log=None, validation_sources=None):
    """JDOT on the concatenation of all sources.

    The pooled sample is the mixture with fixed weights ``N_j / sum(N)``,
    which is the uniform mixture when all sources have the same size.
    """
    config = config or WjdotConfig()
    if config.beta is None:
        config.validate()
        return select_beta(sources, X_T, g, config, run_cjdot, classifier=classifier, log=log,
                           validation_sources=validation_sources)
    config, sources, atoms, Z_T, K = _prepare(sources, X_T, g, config, validation_sources)
    sizes = np.array([len(s) for s in sources], dtype=float)
    weights = sizes / sizes.sum()
    if np.all(sizes == sizes[0]):
        weights = np.full(len(sources), 1.0 / len(sources))
    problem = _MixtureProblem(atoms, Z_T, config.beta, config.label_loss)
    f = classifier.copy() if classifier is not None else _init_classifier(config, Z_T.shape[1], K)
    score = _score_fn(config.validation, validation_sources or sources, Z_T, g)
    state = optimize(problem, f, weights, config, update_alpha=False,
                     score_fn=lambda model, _: score(model, weights), log=log)
    state.beta = config.beta
    return state


class _SumProblem:
    """Sum of independent single-source JDOT problems."""

    def __init__(self, atoms, Z_T, beta, label_loss):
        self.parts = [_MixtureProblem([a], Z_T, beta, label_loss) for a in atoms]
        self._one = np.ones(1)

    def evaluate(self, model, alpha):
        values, ctxs = [], []
        for part in self.parts:
            value, ctx = part.evaluate(model, self._one)
            if ctx is None:
                return math.nan, None
            values.append(value)
            ctxs.append(ctx)
        return math.fsum(values), ctxs

    def theta_grad(self, ctxs, model):
        total = None
        for part, ctx in zip(self.parts, ctxs):
            grad = part.theta_grad(ctx, model)
            total = grad if total is None else add_grads(total, grad)
        return total

    def alpha_grad(self, ctxs):
        raise RuntimeError("MJDOT has no source weights to update")


def run_mjdot(sources, X_T, g=None, config=None, *, classifier=None, log=None, validation_sources=None):
    """Minimise ``sum_j W(source_j, proxy target)`` over the classifier."""
    config = config or WjdotConfig()
    if config.beta is None:
        config.validate()
        return select_beta(sources, X_T, g, config, run_mjdot, classifier=classifier, log=log,
                           validation_sources=validation_sources)
    config, sources, atoms, Z_T, K = _prepare(sources, X_T, g, config, validation_sources)
    uniform = np.full(len(sources), 1.0 / len(sources))
    problem = _SumProblem(atoms, Z_T, config.beta, config.label_loss)
    f = classifier.copy() if classifier is not None else _init_classifier(config, Z_T.shape[1], K)
    score = _score_fn(config.validation, validation_sources or sources, Z_T, g)
    state = optimize(problem, f, uniform, config, update_alpha=False,
                     score_fn=lambda model, _: score(model, uniform), log=log)
    state.beta = config.beta
    return state


def jdot_objective(source, target, beta, label_loss="squared"):
    """Single-source JDOT cost between joint atoms."""
    cost = build_joint_cost(source, target, beta, label_loss)
    return solve_exact_ot(source.weights, target.weights, cost).value
