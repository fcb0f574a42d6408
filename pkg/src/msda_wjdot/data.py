"""Labeled datasets, synthetic domain-shift generators, splits and CSV I/O.

Randomness comes from numpy's PCG64 generator. Every domain draws from its
own stream, seeded with ``SeedSequence([seed, stream])`` where ``stream`` is
the domain index (sources ``0..J-1``, target ``J``); draws shared by all
domains (random target angle, random class proportions, split permutations)
use fixed large stream tags.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InputError, ParseError

# Fixed stream tags for draws that are not tied to a single domain.
_STREAM_BASE = 0
_STREAM_SHARED = 1_000_003
_STREAM_SPLIT = 2_000_003


def rng_for(seed, stream):
    return np.random.default_rng(np.random.SeedSequence([int(seed) & 0xFFFFFFFF, int(stream)]))


@dataclass(frozen=True)
class LabeledDataset:
    """Feature matrix with integer class labels and a domain tag."""

    features: np.ndarray
    labels: np.ndarray
    domain_id: int = 0
    n_classes: int | None = None

    def __post_init__(self):
        X = np.asarray(self.features, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        y = np.asarray(self.labels)
        if X.ndim != 2 or X.shape[0] == 0:
            raise InputError(f"features must be an (N, d) array with N >= 1, got {X.shape}")
        if y.shape != (X.shape[0],):
            raise InputError(f"{X.shape[0]} feature rows but labels of shape {y.shape}")
        if not np.all(np.isfinite(X)):
            raise InputError("features contain non-finite values")
        if y.dtype.kind == "f":
            if not np.all(y == np.round(y)):
                raise InputError("labels must be integers")
        elif y.dtype.kind not in "iu":
            raise InputError(f"labels must be integers, got dtype {y.dtype}")
        y = y.astype(np.int64)
        K = int(y.max()) + 1 if self.n_classes is None else int(self.n_classes)
        if y.min() < 0 or y.max() >= K:
            raise InputError(f"labels must lie in [0, {K - 1}]")
        X = X.copy()
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", y)
        object.__setattr__(self, "domain_id", int(self.domain_id))
        object.__setattr__(self, "n_classes", K)

    def __len__(self):
        return self.features.shape[0]

    @property
    def dim(self):
        return self.features.shape[1]

    def subset(self, index):
        return LabeledDataset(self.features[index], self.labels[index], self.domain_id, self.n_classes)

    def one_hot(self):
        Y = np.zeros((len(self), self.n_classes))
        Y[np.arange(len(self)), self.labels] = 1.0
        return Y

    def equals(self, other):
        return (
            self.domain_id == other.domain_id
            and self.n_classes == other.n_classes
            and np.array_equal(self.features, other.features)
            and np.array_equal(self.labels, other.labels)
        )


def concat_datasets(datasets, domain_id=0):
    datasets = list(datasets)
    if not datasets:
        raise InputError("nothing to concatenate")
    K = max(d.n_classes for d in datasets)
    X = np.concatenate([d.features for d in datasets])
    y = np.concatenate([d.labels for d in datasets])
    return LabeledDataset(X, y, domain_id, K)


# --- rotation shift -------------------------------------------------------

ANGLE_MAX = 1.5 * np.pi

# Class centers sit in the (y, z) plane that the x-axis rotation acts on, at
# angles 90, 180 and 270 degrees and radius 2.5 (pairwise distances 3.54, 5.0,
# 3.54, all >= 4 * sigma). The layout has no rotational symmetry, so no
# rotation of the domain amounts to a relabelling of the classes.
DEFAULT_CLUSTER_CENTERS = (
    (0.0, 0.0, 2.5),
    (0.0, -2.5, 0.0),
    (0.0, 0.0, -2.5),
)


@dataclass
class RotationShiftSpec:
    n_sources: int = 4
    n_source_samples: int = 300
    n_target_samples: int = 300
    sigma: float = 0.8
    target_angle: float | str = "random"
    seed: int = 0
    centers: tuple = DEFAULT_CLUSTER_CENTERS
    shared_base: bool = True

    def validate(self):
        k = len(self.centers)
        if self.n_sources < 1:
            raise InputError("n_sources must be >= 1")
        for name in ("n_source_samples", "n_target_samples"):
            n = getattr(self, name)
            if n < k or n % k:
                raise InputError(f"{name}={n} must be a positive multiple of the {k} clusters")
        if self.shared_base and self.n_source_samples != self.n_target_samples:
            raise InputError("shared_base requires n_source_samples == n_target_samples")
        if not self.sigma > 0:
            raise InputError("sigma must be > 0")
        if self.target_angle != "random":
            angle = float(self.target_angle)
            if not 0.0 <= angle <= ANGLE_MAX:
                raise InputError(f"target_angle {angle} outside [0, 3*pi/2]")
        if np.asarray(self.centers, dtype=float).shape != (k, 3):
            raise InputError("centers must be 3-d points")


def rotation_matrix_x(theta):
    """Right-multiplication matrix: a row vector ``x`` maps to ``x @ R``."""
    c, s = np.cos(theta), np.sin(theta)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rotate(X, theta):
    if theta == 0:
        return np.array(X, dtype=float)
    return np.asarray(X, dtype=float) @ rotation_matrix_x(theta)


def source_angles(n_sources):
    return np.linspace(0.0, ANGLE_MAX, n_sources)


def _cluster_sample(rng, n, centers, sigma):
    centers = np.asarray(centers, dtype=float)
    per = n // centers.shape[0]
    labels = np.repeat(np.arange(centers.shape[0]), per)
    X = centers[labels] + sigma * rng.standard_normal((n, centers.shape[1]))
    return X, labels


def resolve_target_angle(spec: RotationShiftSpec):
    if spec.target_angle == "random":
        return float(rng_for(spec.seed, _STREAM_SHARED).uniform(0.0, ANGLE_MAX))
    return float(spec.target_angle)


def generate_rotation_domains(spec: RotationShiftSpec):
    """Sources rotated by equispaced angles in [0, 3pi/2], plus a rotated target.

    With ``shared_base`` every domain is a rotation of the same base sample,
    otherwise each domain draws its own base sample from its stream.

    Returns
    -------
    sources : list of LabeledDataset
    target : LabeledDataset
        Its labels are for evaluation only.
    """
    spec.validate()
    K = len(spec.centers)
    J = spec.n_sources
    angles = source_angles(J)
    theta_T = resolve_target_angle(spec)

    if spec.shared_base:
        X0, y0 = _cluster_sample(rng_for(spec.seed, _STREAM_BASE), spec.n_source_samples, spec.centers, spec.sigma)
        bases = [(X0, y0)] * (J + 1)
    else:
        bases = [
            _cluster_sample(rng_for(spec.seed, j), spec.n_source_samples, spec.centers, spec.sigma)
            for j in range(J)
        ]
        bases.append(_cluster_sample(rng_for(spec.seed, J), spec.n_target_samples, spec.centers, spec.sigma))

    sources = [LabeledDataset(rotate(X, th), y, j, K) for j, ((X, y), th) in enumerate(zip(bases, angles))]
    XT, yT = bases[J]
    target = LabeledDataset(rotate(XT, theta_T), yT, J, K)
    return sources, target


# --- target shift ---------------------------------------------------------

DEFAULT_CLASS_MEANS = ((-1.0, 0.0), (1.0, 0.0))
DEFAULT_CLASS_STD = 0.8


@dataclass
class TargetShiftSpec:
    """Two-class 2-d domains sharing class-conditionals; only priors change.

    ``source_proportions`` / ``target_proportion`` give the fraction of the
    second class (label 1). ``source_proportions="random"`` draws them
    uniformly in [0.1, 0.9] and sorts them increasingly.
    """

    n_sources: int = 20
    n_source_samples: int = 100
    n_target_samples: int = 100
    source_proportions: list | str = "random"
    target_proportion: float = 0.5
    seed: int = 0
    means: tuple = DEFAULT_CLASS_MEANS
    std: float = DEFAULT_CLASS_STD

    def validate(self):
        if self.n_sources < 1:
            raise InputError("n_sources must be >= 1")
        if self.n_source_samples < 2 or self.n_target_samples < 2:
            raise InputError("each domain needs at least 2 samples")
        props = [self.target_proportion]
        if self.source_proportions != "random":
            if len(self.source_proportions) != self.n_sources:
                raise InputError(
                    f"{len(self.source_proportions)} source proportions for {self.n_sources} sources"
                )
            props += list(self.source_proportions)
        for p in props:
            if not 0.1 - 1e-12 <= float(p) <= 0.9 + 1e-12:
                raise InputError(f"class proportion {p} outside [0.1, 0.9]")
        if not self.std > 0:
            raise InputError("std must be > 0")
        if np.asarray(self.means, dtype=float).shape != (2, 2):
            raise InputError("means must be two 2-d points")


def resolve_source_proportions(spec: TargetShiftSpec):
    if spec.source_proportions == "random":
        rng = rng_for(spec.seed, _STREAM_SHARED)
        return np.sort(rng.uniform(0.1, 0.9, spec.n_sources))
    return np.asarray(spec.source_proportions, dtype=float)


def class_counts(proportion, n):
    """(count of class 0, count of class 1) with ``round(proportion * n)`` of class 1."""
    n1 = int(np.floor(proportion * n + 0.5))
    return n - n1, n1


def _two_class_sample(rng, n, proportion, means, std, domain_id):
    n0, n1 = class_counts(proportion, n)
    means = np.asarray(means, dtype=float)
    labels = np.concatenate([np.zeros(n0, dtype=np.int64), np.ones(n1, dtype=np.int64)])
    X = means[labels] + std * rng.standard_normal((n, 2))
    order = rng.permutation(n)
    return LabeledDataset(X[order], labels[order], domain_id, 2)


def generate_target_shift(spec: TargetShiftSpec):
    spec.validate()
    props = resolve_source_proportions(spec)
    J = spec.n_sources
    sources = [
        _two_class_sample(rng_for(spec.seed, j), spec.n_source_samples, p, spec.means, spec.std, j)
        for j, p in enumerate(props)
    ]
    target = _two_class_sample(
        rng_for(spec.seed, J), spec.n_target_samples, spec.target_proportion, spec.means, spec.std, J
    )
    return sources, target


# --- splits ---------------------------------------------------------------

SPLIT_FRACTIONS = (0.7, 0.2)


def split_indices(n, seed, stream=0):
    if n < 10:
        raise InputError(f"need at least 10 samples to split, got {n}")
    perm = rng_for(seed, _STREAM_SPLIT + stream).permutation(n)
    n_train = int(np.floor(SPLIT_FRACTIONS[0] * n + 1e-9))
    n_val = int(np.floor(SPLIT_FRACTIONS[1] * n + 1e-9))
    return perm[:n_train], perm[n_train:n_train + n_val], perm[n_train + n_val:]


def split_dataset(data: LabeledDataset, seed, stream=None):
    """Disjoint 70/20/10 train/validation/test split by a seeded permutation.

    ``stream`` defaults to the dataset's ``domain_id`` so domains generated
    from a shared base sample are not split identically.
    """
    stream = data.domain_id if stream is None else stream
    return tuple(data.subset(idx) for idx in split_indices(len(data), seed, stream))


# --- CSV I/O --------------------------------------------------------------


def write_dataset(path, data: LabeledDataset):
    """Write ``f0..f{d-1},label,domain`` rows; floats use shortest round-trip repr."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"f{k}" for k in range(data.dim)] + ["label", "domain"])
        for x, y in zip(data.features, data.labels):
            writer.writerow([repr(float(v)) for v in x] + [int(y), data.domain_id])


def read_dataset(path, n_classes=None) -> LabeledDataset:
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError("empty file", 1) from None
        d = len(header) - 2
        expected = [f"f{k}" for k in range(d)] + ["label", "domain"]
        if d < 1 or [h.strip() for h in header] != expected:
            raise ParseError(f"header must be f0,...,f<d-1>,label,domain; got {','.join(header)}", 1)
        rows, labels, domains = [], [], set()
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != d + 2:
                raise ParseError(f"expected {d + 2} fields, found {len(row)}", lineno)
            try:
                rows.append([float(v) for v in row[:d]])
            except ValueError:
                raise ParseError(f"non-numeric feature in {row[:d]}", lineno) from None
            try:
                labels.append(int(row[d]))
                domains.add(int(row[d + 1]))
            except ValueError:
                raise ParseError(f"label and domain must be integers, got {row[d:]}", lineno) from None
    if not rows:
        raise ParseError("no data rows", 2)
    if len(domains) != 1:
        raise ParseError(f"file mixes domains {sorted(domains)}")
    return LabeledDataset(np.array(rows), np.array(labels, dtype=np.int64), domains.pop(), n_classes)
