import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from msda_wjdot.data import (
    LabeledDataset,
    RotationShiftSpec,
    TargetShiftSpec,
    class_counts,
    concat_datasets,
    generate_rotation_domains,
    generate_target_shift,
    read_dataset,
    rotate,
    rotation_matrix_x,
    source_angles,
    split_dataset,
    write_dataset,
)
from msda_wjdot.errors import InputError, ParseError


def test_dataset_validation():
    with pytest.raises(InputError):
        LabeledDataset(np.zeros((3, 2)), [0, 1])
    with pytest.raises(InputError):
        LabeledDataset(np.zeros((2, 2)), [0, 2], n_classes=2)
    with pytest.raises(InputError):
        LabeledDataset(np.array([[np.nan]]), [0])
    with pytest.raises(InputError):
        LabeledDataset(np.zeros((2, 1)), [0.5, 1.0])


def test_dataset_is_immutable():
    d = LabeledDataset(np.zeros((2, 2)), [0, 1])
    with pytest.raises(ValueError):
        d.features[0, 0] = 1.0


def test_concat_keeps_class_count():
    a = LabeledDataset(np.zeros((2, 1)), [0, 0], 0, 3)
    b = LabeledDataset(np.ones((1, 1)), [1], 1, 3)
    c = concat_datasets([a, b])
    assert len(c) == 3 and c.n_classes == 3 and c.labels.tolist() == [0, 0, 1]


# --- rotation shift -------------------------------------------------------


def test_four_source_angles():
    assert source_angles(4).tolist() == [0.0, np.pi / 2, np.pi, 3 * np.pi / 2]


def test_zero_angle_source_is_base_sample():
    S, T = generate_rotation_domains(RotationShiftSpec(target_angle=0.0, seed=3))
    assert np.array_equal(S[0].features, T.features)


def test_rotation_generator_invariants():
    spec = RotationShiftSpec(n_sources=5, n_source_samples=30, n_target_samples=30, target_angle="random", seed=8)
    S, T = generate_rotation_domains(spec)
    base = S[0].features
    norms = np.linalg.norm(base, axis=1)
    for dom, theta in zip(S + [T], list(source_angles(5)) + [None]):
        assert np.abs(np.linalg.norm(dom.features, axis=1) - norms).max() <= 1e-10
        assert np.array_equal(dom.labels, S[0].labels)
        assert np.bincount(dom.labels).tolist() == [10, 10, 10]
        if theta is not None:
            assert np.abs(rotate(dom.features, -theta) - base).max() <= 1e-10
    assert [d.domain_id for d in S + [T]] == list(range(6))


def test_rotation_acts_on_last_two_coordinates():
    R = rotation_matrix_x(0.3)
    np.testing.assert_allclose(R @ R.T, np.eye(3), atol=1e-15)
    assert R[0].tolist() == [1.0, 0.0, 0.0] and R[:, 0].tolist() == [1.0, 0.0, 0.0]


def test_rotation_generator_is_deterministic_and_seed_dependent():
    spec = RotationShiftSpec(n_sources=3, n_source_samples=30, n_target_samples=30, seed=1)
    a, b = generate_rotation_domains(spec), generate_rotation_domains(spec)
    assert all(x.equals(y) for x, y in zip(a[0] + [a[1]], b[0] + [b[1]]))
    other = generate_rotation_domains(RotationShiftSpec(n_sources=3, n_source_samples=30, n_target_samples=30, seed=2))
    assert not np.array_equal(a[1].features, other[1].features)


def test_independent_bases():
    spec = RotationShiftSpec(n_sources=2, n_source_samples=30, n_target_samples=60, shared_base=False, seed=0)
    S, T = generate_rotation_domains(spec)
    assert len(T) == 60 and not np.array_equal(S[0].features, rotate(S[1].features, -np.pi * 1.5))


@pytest.mark.parametrize("bad", [
    dict(n_sources=0), dict(sigma=0.0), dict(target_angle=5.0), dict(n_source_samples=31, n_target_samples=31),
    dict(n_source_samples=30, n_target_samples=60),
])
def test_rotation_spec_errors(bad):
    with pytest.raises(InputError):
        generate_rotation_domains(RotationShiftSpec(**bad))


# --- target shift ---------------------------------------------------------


def test_class_count_rounding():
    assert class_counts(0.5, 100) == (50, 50)
    assert class_counts(0.9, 300) == (30, 270)


def test_target_shift_counts_are_exact():
    spec = TargetShiftSpec(n_sources=3, source_proportions=[0.1, 0.35, 0.9], target_proportion=0.9,
                           n_target_samples=300, seed=4)
    S, T = generate_target_shift(spec)
    assert [int(s.labels.sum()) for s in S] == [10, 35, 90]
    assert int(T.labels.sum()) == 270


def test_random_proportions_in_range_and_sorted():
    S, _ = generate_target_shift(TargetShiftSpec(seed=5))
    props = [s.labels.mean() for s in S]
    assert len(S) == 20 and min(props) >= 0.1 and max(props) <= 0.9
    assert props == sorted(props)


def test_class_conditional_means_monte_carlo():
    spec = TargetShiftSpec(n_sources=1, n_source_samples=10_000, n_target_samples=10_000,
                           source_proportions=[0.5], target_proportion=0.5, seed=6)
    _, T = generate_target_shift(spec)
    for c, mean in enumerate(spec.means):
        emp = T.features[T.labels == c].mean(0)
        assert np.abs(emp - mean).max() <= 3 * spec.std / 100


@pytest.mark.parametrize("bad", [dict(target_proportion=0.95), dict(source_proportions=[0.05] * 20),
                                 dict(source_proportions=[0.5]), dict(n_sources=0)])
def test_target_shift_spec_errors(bad):
    with pytest.raises(InputError):
        generate_target_shift(TargetShiftSpec(**bad))


# --- splits ---------------------------------------------------------------


def test_split_sizes_and_partition():
    data = LabeledDataset(np.arange(100.0), np.zeros(100, dtype=int))
    train, val, test = split_dataset(data, seed=0)
    assert (len(train), len(val), len(test)) == (70, 20, 10)
    values = np.concatenate([train.features, val.features, test.features]).ravel()
    assert sorted(values.tolist()) == list(range(100))


@settings(max_examples=50, deadline=None)
@given(st.integers(10, 400), st.integers(0, 2**31))
def test_split_is_a_partition(n, seed):
    data = LabeledDataset(np.arange(float(n)), np.zeros(n, dtype=int))
    parts = split_dataset(data, seed)
    assert sum(len(p) for p in parts) == n
    assert len(parts[0]) == int(0.7 * n + 1e-9) and len(parts[1]) == int(0.2 * n + 1e-9)
    assert len(np.unique(np.concatenate([p.features.ravel() for p in parts]))) == n


def test_split_deterministic():
    data = LabeledDataset(np.arange(50.0), np.zeros(50, dtype=int))
    a, b = split_dataset(data, 9), split_dataset(data, 9)
    assert all(x.equals(y) for x, y in zip(a, b))


def test_split_too_small():
    with pytest.raises(InputError):
        split_dataset(LabeledDataset(np.arange(9.0), np.zeros(9, dtype=int)), 0)


# --- CSV I/O --------------------------------------------------------------


def test_csv_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    data = LabeledDataset(rng.standard_normal((20, 3)) * 1e-7 + 0.1, rng.integers(0, 3, 20), 4, 3)
    write_dataset(tmp_path / "d.csv", data)
    back = read_dataset(tmp_path / "d.csv", n_classes=3)
    assert back.equals(data)
    assert (tmp_path / "d.csv").read_text().splitlines()[0] == "f0,f1,f2,label,domain"


def test_external_feature_file_loads(tmp_path):
    path = tmp_path / "features.csv"
    path.write_text("f0,f1,label,domain\n0.5,1.5,1,2\n-2,3e-3,0,2\n")
    d = read_dataset(path)
    assert d.dim == 2 and d.domain_id == 2 and d.labels.tolist() == [1, 0]


@pytest.mark.parametrize("body,line", [
    ("f0,label,domain\n1.0,0,0\nabc,1,0\n", 3),
    ("f0,label,domain\n1.0,0,0,7\n", 2),
    ("x0,label,domain\n1.0,0,0\n", 1),
    ("f0,label,domain\n1.0,zero,0\n", 2),
])
def test_csv_parse_errors_name_the_line(tmp_path, body, line):
    path = tmp_path / "bad.csv"
    path.write_text(body)
    with pytest.raises(ParseError, match=f"line {line}"):
        read_dataset(path)


def test_csv_label_out_of_range(tmp_path):
    path = tmp_path / "d.csv"
    path.write_text("f0,label,domain\n1.0,5,0\n")
    with pytest.raises(InputError):
        read_dataset(path, n_classes=2)
