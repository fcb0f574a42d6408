"""Experiment configuration, seeded replication sweeps and result files.

A config file is YAML with the keys of the schema tables below (the README
has the reference table). Every replication ``r`` uses seed ``base_seed + r``;
for each target parameter (target rotation angle or target class proportion)
the data are generated, split 70/20/10, and every configured method is
trained and scored on the held-out target test split.
"""

from __future__ import annotations

import copy
import csv
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from .baselines import run_cjdot, run_mjdot, train_erm
from .data import (
    RotationShiftSpec,
    TargetShiftSpec,
    concat_datasets,
    generate_rotation_domains,
    generate_target_shift,
    read_dataset,
    resolve_source_proportions,
    source_angles,
    split_dataset,
)
from .errors import ConfigError, InputError
from .model import accuracy, compose, train_mtl_embedding
from .wjdot import WjdotConfig, run_wjdot, write_trajectory

log = logging.getLogger("msda_wjdot")

EXPERIMENT_KINDS = ("rotation-sweep", "target-shift", "fig1", "custom")
METHODS = ("wjdot", "cjdot", "mjdot", "baseline", "target", "baseline_target")
JDOT_METHODS = {"wjdot": run_wjdot, "cjdot": run_cjdot, "mjdot": run_mjdot}

SUMMARY_COLUMNS = ["method", "target_parameter", "mean_accuracy", "std_accuracy", "n_replications"]
REPLICATION_COLUMNS = ["replication", "seed", "target_parameter", "method", "status", "accuracy", "beta",
                       "alpha", "error"]
ALPHA_COLUMNS = ["replication", "target_parameter", "source_index", "source_parameter", "alpha"]

# --- schema ---------------------------------------------------------------
#
# Each entry maps a key to (type name, default). Type names: int, float,
# bool, str, float_or_null, float_list, int_list, str_list, float_list_or_null,
# proportions ("random" or a list of floats), points (list of float lists).

_TOP = {
    "experiment": ("str", "rotation-sweep"),
    "replications": ("int", 1),
    "base_seed": ("int", 0),
    "output_dir": ("str", "results"),
    "methods": ("str_list", list(METHODS)),
    "target_parameters": ("float_list_or_null", None),
}
_ROTATION = {
    "n_sources": ("int", 30),
    "n_source_samples": ("int", 300),
    "n_target_samples": ("int", 300),
    "sigma": ("float", 0.8),
    "shared_base": ("bool", True),
    "centers": ("points", [list(c) for c in RotationShiftSpec().centers]),
}
_TARGET_SHIFT = {
    "n_sources": ("int", 20),
    "n_source_samples": ("int", 100),
    "n_target_samples": ("int", 100),
    "source_proportions": ("proportions", "random"),
    "means": ("points", [list(m) for m in TargetShiftSpec().means]),
    "std": ("float", TargetShiftSpec().std),
}
_CUSTOM = {
    "sources": ("str_list", []),
    "target": ("str", ""),
}
_WJDOT = {
    "beta": ("float_or_null", 1.0),
    "beta_grid": ("float_list", [0.01, 0.1, 1.0, 10.0]),
    "step_alpha": ("float", 0.1),
    "step_theta": ("float", 0.5),
    "max_iters": ("int", 200),
    "validation": ("str", "sse"),
    "patience": ("int", 20),
    "label_loss": ("str", "squared"),
    "hidden": ("int_list", []),
    "activation": ("str", "tanh"),
    "refresh_between_updates": ("bool", True),
}
_ERM = {
    "steps": ("int", 500),
    "rate": ("float", 0.5),
    "hidden": ("int_list", []),
    "activation": ("str", "tanh"),
}
_EMBEDDING = {
    "kind": ("str", "identity"),
    "hidden": ("int_list", [16]),
    "dim": ("int", 0),
    "steps": ("int", 500),
    "rate": ("float", 0.5),
}
_SECTIONS = {"wjdot": _WJDOT, "erm": _ERM, "embedding": _EMBEDDING}
_DATA = {"rotation-sweep": _ROTATION, "fig1": _ROTATION, "target-shift": _TARGET_SHIFT, "custom": _CUSTOM}

# Defaults that depend on the experiment kind.
_KIND_DATA_DEFAULTS = {"fig1": {"n_sources": 4}}
_KIND_PARAMETERS = {
    "rotation-sweep": [float(a) for a in np.linspace(0.0, 1.5 * np.pi, 10)],
    "fig1": [0.75 * math.pi],
    "target-shift": [round(0.1 * k, 10) for k in range(1, 10)],
    "custom": [0.0],
}


def _check_type(key, kind, value):
    def fail():
        raise ConfigError(f"key {key}: expected {kind}, got {type(value).__name__} {value!r}")

    def is_int(v):
        return isinstance(v, int) and not isinstance(v, bool)

    def is_float(v):
        return (isinstance(v, (int, float)) and not isinstance(v, bool))

    if kind == "int":
        if not is_int(value):
            fail()
        return value
    if kind == "float":
        if not is_float(value):
            fail()
        return float(value)
    if kind == "bool":
        if not isinstance(value, bool):
            fail()
        return value
    if kind == "str":
        if not isinstance(value, str):
            fail()
        return value
    if kind == "float_or_null":
        if value is None:
            return None
        if not is_float(value):
            fail()
        return float(value)
    if kind in ("float_list", "float_list_or_null"):
        if value is None and kind == "float_list_or_null":
            return None
        if not isinstance(value, list) or not all(is_float(v) for v in value):
            fail()
        return [float(v) for v in value]
    if kind == "int_list":
        if not isinstance(value, list) or not all(is_int(v) for v in value):
            fail()
        return list(value)
    if kind == "str_list":
        if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
            fail()
        return list(value)
    if kind == "proportions":
        if value == "random":
            return value
        if not isinstance(value, list) or not all(is_float(v) for v in value):
            fail()
        return [float(v) for v in value]
    if kind == "points":
        if not isinstance(value, list) or not all(
            isinstance(p, list) and p and all(is_float(v) for v in p) for p in value
        ):
            fail()
        return [[float(v) for v in p] for p in value]
    raise AssertionError(kind)


def _fill(section, schema, raw, prefix=""):
    raw = {} if raw is None else raw
    if not isinstance(raw, dict):
        raise ConfigError(f"key {prefix.rstrip('.') or 'config'}: expected a mapping")
    for key in raw:
        if key not in schema:
            raise ConfigError(f"unknown key: {prefix}{key}")
    for key, (kind, default) in schema.items():
        if key in raw:
            section[key] = _check_type(prefix + key, kind, raw[key])
        elif key not in section:
            section[key] = copy.deepcopy(default)
    return section


@dataclass
class ExperimentConfig:
    """Validated experiment description; every field has a documented default."""

    experiment: str = "rotation-sweep"
    replications: int = 1
    base_seed: int = 0
    output_dir: str = "results"
    methods: list = field(default_factory=lambda: list(METHODS))
    target_parameters: list = field(default_factory=list)
    data: dict = field(default_factory=dict)
    wjdot: dict = field(default_factory=dict)
    erm: dict = field(default_factory=dict)
    embedding: dict = field(default_factory=dict)

    # -- construction -------------------------------------------------------

    @classmethod
    def from_dict(cls, raw, base_dir=None):
        if raw is None:
            raw = {}
        if not isinstance(raw, dict):
            raise ConfigError("config must be a mapping of keys to values")
        allowed = set(_TOP) | set(_SECTIONS) | {"data"}
        for key in raw:
            if key not in allowed:
                raise ConfigError(f"unknown key: {key}")
        top = _fill({}, _TOP, {k: raw[k] for k in _TOP if k in raw})
        kind = top["experiment"]
        if kind not in EXPERIMENT_KINDS:
            raise ConfigError(f"key experiment: expected one of {EXPERIMENT_KINDS}, got {kind!r}")
        data = dict(_KIND_DATA_DEFAULTS.get(kind, {}))
        _fill(data, _DATA[kind], raw.get("data"), "data.")
        sections = {name: _fill({}, schema, raw.get(name), name + ".") for name, schema in _SECTIONS.items()}
        params = top["target_parameters"]
        if params is None:
            params = list(_KIND_PARAMETERS[kind])
        config = cls(
            experiment=kind,
            replications=top["replications"],
            base_seed=top["base_seed"],
            output_dir=top["output_dir"],
            methods=top["methods"],
            target_parameters=params,
            data=data,
            **sections,
        )
        config.validate(base_dir)
        return config

    def to_dict(self):
        return {
            "experiment": self.experiment,
            "replications": self.replications,
            "base_seed": self.base_seed,
            "output_dir": self.output_dir,
            "methods": list(self.methods),
            "target_parameters": [float(p) for p in self.target_parameters],
            "data": copy.deepcopy(self.data),
            "wjdot": copy.deepcopy(self.wjdot),
            "erm": copy.deepcopy(self.erm),
            "embedding": copy.deepcopy(self.embedding),
        }

    # -- validation ---------------------------------------------------------

    def validate(self, base_dir=None):
        if self.replications < 1:
            raise ConfigError("key replications: must be >= 1")
        if not self.methods:
            raise ConfigError("key methods: must list at least one method")
        for m in self.methods:
            if m not in METHODS:
                raise ConfigError(f"key methods: unknown method {m!r}; choose from {METHODS}")
        if len(set(self.methods)) != len(self.methods):
            raise ConfigError("key methods: duplicate entries")
        if not self.target_parameters:
            raise ConfigError("key target_parameters: must not be empty")
        if self.embedding["kind"] not in ("identity", "mtl"):
            raise ConfigError("key embedding.kind: expected 'identity' or 'mtl'")
        try:
            self.wjdot_config(0).validate()
        except InputError as exc:
            raise ConfigError(f"section wjdot: {exc}") from None
        if self.experiment == "custom":
            if not self.data["sources"] or not self.data["target"]:
                raise ConfigError("key data: custom experiments need 'sources' and 'target' files")
            for path in self.data["sources"] + [self.data["target"]]:
                resolved = Path(base_dir or ".") / path
                if not resolved.is_file():
                    raise ConfigError(f"key data: file not found: {path}")
        else:
            # building a spec for every parameter surfaces invalid data settings now
            for p in self.target_parameters:
                try:
                    self.data_spec(p, self.base_seed).validate()
                except InputError as exc:
                    raise ConfigError(f"section data: {exc}") from None

    # -- derived objects ----------------------------------------------------

    def wjdot_config(self, seed):
        w = self.wjdot
        return WjdotConfig(
            beta=w["beta"], beta_grid=tuple(w["beta_grid"]), step_alpha=w["step_alpha"],
            step_theta=w["step_theta"], max_iters=w["max_iters"], validation=w["validation"],
            patience=w["patience"], seed=seed, label_loss=w["label_loss"], hidden=tuple(w["hidden"]),
            activation=w["activation"], refresh_between_updates=w["refresh_between_updates"],
        )

    def data_spec(self, parameter, seed):
        d = self.data
        if self.experiment in ("rotation-sweep", "fig1"):
            try:
                return RotationShiftSpec(
                    n_sources=d["n_sources"], n_source_samples=d["n_source_samples"],
                    n_target_samples=d["n_target_samples"], sigma=d["sigma"], target_angle=float(parameter),
                    seed=seed, centers=tuple(tuple(c) for c in d["centers"]), shared_base=d["shared_base"],
                )
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"key data: {exc}") from None
        if self.experiment == "target-shift":
            return TargetShiftSpec(
                n_sources=d["n_sources"], n_source_samples=d["n_source_samples"],
                n_target_samples=d["n_target_samples"], source_proportions=d["source_proportions"],
                target_proportion=float(parameter), seed=seed, means=tuple(tuple(m) for m in d["means"]),
                std=d["std"],
            )
        return None


def parse_config(path):
    """Read and validate a YAML experiment config; relative data paths resolve against its folder."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"config {path} is not valid YAML: {exc}") from None
    config = ExperimentConfig.from_dict(raw, base_dir=path.parent)
    if config.experiment == "custom":
        config.data["sources"] = [str((path.parent / p).resolve()) for p in config.data["sources"]]
        config.data["target"] = str((path.parent / config.data["target"]).resolve())
    return config


def serialize_config(config: ExperimentConfig):
    return yaml.safe_dump(config.to_dict(), sort_keys=False, default_flow_style=None)


# --- data for one unit of work ---------------------------------------------


@dataclass
class DomainData:
    sources: list          # (train, val, test) per source
    target: tuple          # (train, val, test)
    source_parameters: list


def load_domains(config: ExperimentConfig, parameter, seed):
    if config.experiment == "custom":
        sources = [read_dataset(p) for p in config.data["sources"]]
        target = read_dataset(config.data["target"])
        K = max([s.n_classes for s in sources] + [target.n_classes])
        sources = [read_dataset(p, K) for p in config.data["sources"]]
        target = read_dataset(config.data["target"], K)
        source_params = [float(j) for j in range(len(sources))]
    else:
        spec = config.data_spec(parameter, seed)
        if isinstance(spec, RotationShiftSpec):
            sources, target = generate_rotation_domains(spec)
            source_params = [float(a) for a in source_angles(spec.n_sources)]
        else:
            sources, target = generate_target_shift(spec)
            source_params = [float(p) for p in resolve_source_proportions(spec)]
    return DomainData(
        sources=[split_dataset(s, seed) for s in sources],
        target=split_dataset(target, seed),
        source_parameters=source_params,
    )


def _embedding(config, train_sources, seed):
    e = config.embedding
    if e["kind"] == "identity":
        return None
    g, _ = train_mtl_embedding(train_sources, hidden=tuple(e["hidden"]), embed_dim=e["dim"] or None,
                               steps=e["steps"], rate=e["rate"], seed=seed)
    return g


def run_method(method, config, domains: DomainData, seed):
    """Train one method; returns (classifier on raw features, WjdotState or None)."""
    train = [s[0] for s in domains.sources]
    val = [s[1] for s in domains.sources]
    t_train, t_val, _ = domains.target
    if method in JDOT_METHODS:
        g = _embedding(config, train, seed)
        state = JDOT_METHODS[method](train, t_train.features, g, config.wjdot_config(seed), validation_sources=val)
        f = state.classifier if g is None else compose(g, state.classifier)
        return f, state
    erm = config.erm
    kwargs = dict(hidden=tuple(erm["hidden"]), activation=erm["activation"], steps=erm["steps"],
                  rate=erm["rate"], seed=seed)
    if method == "baseline":
        return train_erm(train, validation=concat_datasets(val), **kwargs), None
    if method == "target":
        return train_erm([t_train], validation=t_val, **kwargs), None
    if method == "baseline_target":
        return train_erm(train + [t_train], validation=concat_datasets(val + [t_val]), **kwargs), None
    raise InputError(f"unknown method {method!r}")


def _format_alpha(alpha):
    return " ".join(repr(float(a)) for a in alpha)


def run_unit(config: ExperimentConfig, replication, param_index):
    """All methods for one (replication, target parameter) pair."""
    seed = config.base_seed + replication
    parameter = config.target_parameters[param_index]
    out = {"rows": [], "alpha": [], "trajectories": {}}
    try:
        domains = load_domains(config, parameter, seed)
    except Exception as exc:  # noqa: BLE001 - recorded, not raised
        for method in config.methods:
            out["rows"].append(_row(replication, seed, parameter, method, "failed", error=exc))
        return out
    X_test, y_test = domains.target[2].features, domains.target[2].labels
    for method in config.methods:
        try:
            f, state = run_method(method, config, domains, seed)
            acc = accuracy(f, X_test, y_test)
        except Exception as exc:  # noqa: BLE001 - one failing method must not stop the sweep
            log.warning("replication %d parameter %r method %s failed: %s", replication, parameter, method, exc)
            out["rows"].append(_row(replication, seed, parameter, method, "failed", error=exc))
            continue
        alpha = beta = None
        if state is not None:
            alpha, beta = state.alpha, state.beta
            out["trajectories"][f"{method}_rep{replication}_param{param_index}.csv"] = state
        if method == "wjdot":
            for j, (a, sp) in enumerate(zip(state.alpha, domains.source_parameters)):
                out["alpha"].append([replication, parameter, j, sp, float(a)])
        out["rows"].append(_row(replication, seed, parameter, method, "ok", acc, alpha, beta))
    return out


def _row(replication, seed, parameter, method, status, acc=None, alpha=None, beta=None, error=None):
    return {
        "replication": replication,
        "seed": seed,
        "target_parameter": float(parameter),
        "method": method,
        "status": status,
        "accuracy": math.nan if acc is None else float(acc),
        "beta": math.nan if beta is None else float(beta),
        "alpha": "" if alpha is None else _format_alpha(alpha),
        "error": "" if error is None else f"{type(error).__name__}: {error}",
    }


# --- the sweep --------------------------------------------------------------


@dataclass
class ExperimentResults:
    config: ExperimentConfig
    rows: list
    alpha_rows: list
    trajectories: dict

    @property
    def n_failed(self):
        return sum(r["status"] != "ok" for r in self.rows)


def prepare_output_dir(path):
    """Create the directory and prove it is writable before any computation."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    probe = path / ".write-test"
    probe.write_text("")
    probe.unlink()
    return path


def run_experiment(config: ExperimentConfig, out_dir=None, jobs=1):
    """Run every replication and method, write the result files and return the results."""
    out = prepare_output_dir(out_dir or config.output_dir)
    _echo_config(config, out)
    units = [(r, k) for r in range(config.replications) for k in range(len(config.target_parameters))]
    if jobs > 1 and len(units) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            parts = list(pool.map(run_unit, [config] * len(units), *zip(*units)))
    else:
        parts = [run_unit(config, r, k) for r, k in units]
    results = ExperimentResults(config, [], [], {})
    for part in parts:  # unit order, independent of scheduling
        results.rows.extend(part["rows"])
        results.alpha_rows.extend(part["alpha"])
        results.trajectories.update(part["trajectories"])
    emit_results(results, out)
    return results


def _echo_config(config, out):
    (out / "config.yaml").write_text(serialize_config(config))


def summarize(rows, methods, parameters):
    summary = []
    for method in methods:
        for p in parameters:
            accs = [r["accuracy"] for r in rows
                    if r["method"] == method and r["target_parameter"] == float(p) and r["status"] == "ok"]
            if accs:
                mean = math.fsum(accs) / len(accs)
                std = math.sqrt(math.fsum((a - mean) ** 2 for a in accs) / len(accs))
            else:
                mean = std = math.nan
            summary.append([method, float(p), mean, std, len(accs)])
    return summary


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return v


def _write_csv(path, header, rows):
    with Path(path).open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def emit_results(results: ExperimentResults, out_dir):
    """Write ``summary.csv``, ``replications.csv``, ``alpha.csv`` and ``trajectories/``."""
    out = prepare_output_dir(out_dir)
    cfg = results.config
    _write_csv(out / "summary.csv", SUMMARY_COLUMNS, summarize(results.rows, cfg.methods, cfg.target_parameters))
    _write_csv(out / "replications.csv", REPLICATION_COLUMNS,
               [[r[c] for c in REPLICATION_COLUMNS] for r in results.rows])
    _write_csv(out / "alpha.csv", ALPHA_COLUMNS, results.alpha_rows)
    traj = out / "trajectories"
    traj.mkdir(exist_ok=True)
    for name in sorted(results.trajectories):
        write_trajectory(results.trajectories[name], traj / name)
    return out


# --- bound diagnostics ---------------------------------------------------------

DIAGNOSTIC_COLUMNS = ["replication", "target_parameter", "alpha_kind", "eps_alpha", "eps_T", "tv",
                      "lemma1_rhs", "lambda_upper"]


def diagnose_unit(config: ExperimentConfig, replication, param_index):
    """Bound terms for the learned classifier under the learned and the uniform alpha.

    Errors are measured on the held-out test splits of every domain.
    """
    from .wjdot import bound_diagnostics

    seed = config.base_seed + replication
    parameter = config.target_parameters[param_index]
    domains = load_domains(config, parameter, seed)
    f, state = run_method("wjdot", config, domains, seed)
    tests = [s[2] for s in domains.sources]
    J = len(tests)
    rows = []
    for kind, alpha in (("optimized", state.alpha), ("uniform", np.full(J, 1.0 / J))):
        d = bound_diagnostics(f, tests, alpha, domains.target[2])
        rows.append([replication, float(parameter), kind, d.eps_alpha, d.eps_T, d.tv, d.lemma1_rhs,
                     d.lambda_upper])
    return rows


def run_diagnostics(config: ExperimentConfig, out_dir=None):
    out = prepare_output_dir(out_dir or config.output_dir)
    _echo_config(config, out)
    rows = []
    for r in range(config.replications):
        for k in range(len(config.target_parameters)):
            rows.extend(diagnose_unit(config, r, k))
    _write_csv(out / "diagnostics.csv", DIAGNOSTIC_COLUMNS, rows)
    return rows


def generate_data(config: ExperimentConfig, out_dir=None):
    """Write every domain of every target parameter for the base seed as CSV files."""
    from .data import write_dataset

    if config.experiment == "custom":
        raise ConfigError("custom experiments read existing files; nothing to generate")
    out = prepare_output_dir(out_dir or config.output_dir)
    written = []
    for k, p in enumerate(config.target_parameters):
        spec = config.data_spec(p, config.base_seed)
        gen = generate_rotation_domains if isinstance(spec, RotationShiftSpec) else generate_target_shift
        sources, target = gen(spec)
        folder = out / f"param{k}"
        folder.mkdir(exist_ok=True)
        for j, s in enumerate(sources):
            write_dataset(folder / f"source_{j}.csv", s)
            written.append(folder / f"source_{j}.csv")
        write_dataset(folder / "target.csv", target)
        written.append(folder / "target.csv")
    return written
