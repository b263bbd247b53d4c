import numpy as np
import pytest

from gradmatch.bank import (GradientBank, apportion_budget, batch_partition, build_per_batch,
                            build_per_class, build_per_sample, dump_bank, load_bank_dump)
from gradmatch.data import Dataset, make_gaussian_blobs
from gradmatch.errors import EmptyClass
from gradmatch.models import init_model, last_layer_grads
from gradmatch.selectors import SelectorConfig, omp_select


@pytest.fixture
def setup():
    d = make_gaussian_blobs(10, 3, 4, 2.0, 0)
    m = init_model("mlp", 4, 3, 5, seed=1)
    return m, d


def test_per_sample_target_is_column_sum(setup):
    m, d = setup
    bank = build_per_sample(m, d)
    assert np.max(np.abs(bank.target - bank.rows.sum(axis=0))) < 1e-12
    assert bank.dim == 3 * (5 + 1)


def test_per_sample_single(setup):
    m, d = setup
    bank = build_per_sample(m, d.subset([3]))
    assert np.array_equal(bank.target, bank.rows[0])


def test_valid_equals_train_when_same_source(setup):
    m, d = setup
    a, b = build_per_sample(m, d), build_per_sample(m, d, d, is_valid=True)
    assert np.array_equal(a.rows, b.rows) and np.allclose(a.target, b.target)


def test_valid_requires_source(setup):
    m, d = setup
    with pytest.raises(ValueError):
        build_per_sample(m, d, None, is_valid=True)


def test_batch_sizes():
    sizes = [len(b) for b in batch_partition(10, 3, 0)]
    assert sizes == [3, 3, 3, 1]


def test_per_batch_sum_property(setup):
    m, d = setup
    bank = build_per_batch(m, d, 4, seed=3)
    per_sample = last_layer_grads(m, d.features, d.labels)
    assert bank.n_elements == 8
    assert np.allclose(bank.rows.sum(axis=0), per_sample.sum(axis=0), atol=1e-12)
    for i, members in enumerate(bank.element_map):
        assert np.allclose(bank.rows[i], per_sample[members].sum(axis=0))


def test_per_batch_b1_is_permuted_per_sample(setup):
    m, d = setup
    pb, ps = build_per_batch(m, d, 1, seed=5), build_per_sample(m, d)
    order = np.concatenate(pb.element_map)
    assert np.allclose(pb.rows, ps.rows[order])


def test_per_batch_single_batch_ridge(setup):
    m, d = setup
    bank = build_per_batch(m, d, d.n_samples)
    assert bank.n_elements == 1 and np.allclose(bank.rows[0], bank.target)
    lam = 0.5
    sel = omp_select(bank, SelectorConfig(1, lam, 1e-12))
    g = bank.rows[0]
    w = g @ bank.target / (g @ g + lam)
    assert np.isclose(sel.weights[0], w)


def test_per_class_dimension_and_errors(setup):
    m, d = setup
    bank = build_per_class(m, d, 1)
    assert bank.dim == 6 and bank.n_elements == 10
    assert np.allclose(bank.target, bank.rows.sum(axis=0))
    lr = init_model("logreg", 4, 3)
    assert build_per_class(lr, d, 0).dim == 4 + 1
    one = Dataset(d.features[:11], d.labels[:11], 3)
    assert build_per_class(m, one, 1).n_elements == 1
    with pytest.raises(EmptyClass):
        build_per_class(m, one, 2)


def test_per_class_target_from_validation(setup):
    m, d = setup
    val = make_gaussian_blobs(4, 3, 4, 2.0, 9)
    bank = build_per_class(m, d, 2, True, val)
    full = last_layer_grads(m, val.features[val.labels == 2], val.labels[val.labels == 2])
    assert np.allclose(bank.target, full[:, 12:18].sum(axis=0))


def test_apportion_budget():
    assert apportion_budget(4, [30, 10]).tolist() == [3, 1]
    assert apportion_budget(1, [50, 1, 0]).tolist() == [1, 1, 0]
    assert apportion_budget(100, [3, 200]).tolist() == [1, 99]


def test_dimension_mismatch(setup):
    m, _ = setup
    other = make_gaussian_blobs(3, 2, 4, 2.0, 0)
    with pytest.raises(ValueError):
        build_per_sample(m, other)


@pytest.mark.parametrize("suffix", [".csv", ".bin"])
def test_dump_round_trip(tmp_path, suffix):
    rng = np.random.default_rng(0)
    bank = GradientBank(rng.standard_normal((5, 3)), rng.standard_normal(3))
    dump_bank(bank, tmp_path / f"b{suffix}")
    back = load_bank_dump(tmp_path / f"b{suffix}")
    assert np.array_equal(back.rows, bank.rows) and np.array_equal(back.target, bank.target)
    if suffix == ".csv":
        assert (tmp_path / "b.csv").read_text().splitlines()[:2] == ["n_elements,d_g", "5,3"]


def test_bank_rejects_nonfinite():
    with pytest.raises(ValueError):
        GradientBank(np.array([[np.nan, 0.0]]), np.zeros(2))


def test_expand_batches(setup):
    m, d = setup
    bank = build_per_batch(m, d, 7, seed=0)
    idx, w = bank.expand([1, 3], [2.0, 0.5])
    assert idx.size == 7 + 7 and np.all(w[:7] == 2.0) and np.all(w[7:] == 0.5)
