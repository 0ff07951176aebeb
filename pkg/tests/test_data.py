import numpy as np
import pytest

from ss_causal.data import (
    Dataset,
    FoldPlan,
    load_csv,
    mcar_permutation_test,
    save_csv,
    split_folds,
)
from ss_causal.errors import ParseError, SchemaError, ValidationError


def write(tmp_path, text, name="data.csv"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


SCHEMA = {"outcome": "Y", "treatment": "T"}


# ---------------------------------------------------------------- load_csv


def test_missing_outcome_splits_labeled_and_unlabeled(tmp_path):
    path = write(tmp_path, "Y,T,x1\n1.0,1,0.5\n,0,0.25\n2.0,1,-1.0\n")
    ds = load_csv(path, SCHEMA)
    assert ds.n == 2 and ds.n_unlabeled == 1
    assert ds.labeled_y.tolist() == [1.0, 2.0]
    assert ds.unlabeled_t.tolist() == [0.0]


def test_na_token_marks_unlabeled(tmp_path):
    path = write(tmp_path, "Y,T,x1\nNA,1,0.5\n3.0,0,1.5\n")
    ds = load_csv(path, SCHEMA)
    assert ds.n == 1 and ds.n_unlabeled == 1


def test_invalid_treatment_names_row(tmp_path):
    path = write(tmp_path, "Y,T,x1\n1.0,1,0.5\n1.5,2,0.5\n")
    with pytest.raises(ValidationError, match="row 3"):
        load_csv(path, SCHEMA)


def test_unparseable_cell_names_row_and_column(tmp_path):
    path = write(tmp_path, "Y,T,x1\n1.0,1,abc\n")
    with pytest.raises(ParseError, match="row 2, column 'x1'"):
        load_csv(path, SCHEMA)


def test_missing_required_column(tmp_path):
    path = write(tmp_path, "Y,W,x1\n1.0,1,0.5\n")
    with pytest.raises(SchemaError, match="'T'"):
        load_csv(path, SCHEMA)


def test_empty_file_rejected(tmp_path):
    path = write(tmp_path, "")
    with pytest.raises(SchemaError):
        load_csv(path, SCHEMA)


def test_ragged_row_rejected(tmp_path):
    path = write(tmp_path, "Y,T,x1\n1.0,1\n")
    with pytest.raises(SchemaError, match="row 2"):
        load_csv(path, SCHEMA)


def test_all_rows_unlabeled_rejected(tmp_path):
    path = write(tmp_path, "Y,T,x1\n,1,0.5\n,0,0.5\n")
    with pytest.raises(ValidationError):
        load_csv(path, SCHEMA)


def test_explicit_covariate_selection(tmp_path):
    path = write(tmp_path, "Y,T,x1,x2,junk\n1.0,1,0.5,0.25,9\n2.0,0,1.0,2.0,9\n")
    ds = load_csv(path, {"outcome": "Y", "treatment": "T", "covariates": ["x1", "x2"]})
    assert ds.p == 2
    assert ds.labeled_x.tolist() == [[0.5, 0.25], [1.0, 2.0]]


def test_round_trip_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    ds = Dataset(
        labeled_y=rng.standard_normal(6),
        labeled_t=(rng.random(6) < 0.5).astype(float),
        labeled_x=rng.standard_normal((6, 3)),
        unlabeled_x=rng.standard_normal((4, 3)),
        unlabeled_t=(rng.random(4) < 0.5).astype(float),
    )
    path = tmp_path / "roundtrip.csv"
    save_csv(ds, path, SCHEMA)
    back = load_csv(path, SCHEMA)
    np.testing.assert_array_equal(back.labeled_y, ds.labeled_y)
    np.testing.assert_array_equal(back.labeled_t, ds.labeled_t)
    np.testing.assert_array_equal(back.labeled_x, ds.labeled_x)
    np.testing.assert_array_equal(back.unlabeled_x, ds.unlabeled_x)
    np.testing.assert_array_equal(back.unlabeled_t, ds.unlabeled_t)


# ----------------------------------------------------------------- Dataset


def test_dataset_rejects_dimension_mismatch():
    with pytest.raises(ValidationError):
        Dataset(
            labeled_y=[1.0],
            labeled_t=[1.0],
            labeled_x=[[1.0, 2.0]],
            unlabeled_x=[[1.0]],
        )


def test_dataset_rejects_nonbinary_treatment():
    with pytest.raises(ValidationError):
        Dataset(labeled_y=[1.0], labeled_t=[0.5], labeled_x=[[1.0]], unlabeled_x=[])


# ------------------------------------------------------------- split_folds


def test_split_folds_even():
    plan = split_folds(4, 2, seed=0)
    sizes = sorted(len(plan.fold_indices(k)) for k in (1, 2))
    assert sizes == [2, 2]


def test_split_folds_singletons():
    plan = split_folds(10, 10, seed=1)
    assert all(len(plan.fold_indices(k)) == 1 for k in range(1, 11))


def test_split_folds_remainder():
    plan = split_folds(7, 3, seed=2)
    sizes = sorted(len(plan.fold_indices(k)) for k in (1, 2, 3))
    assert sizes == [2, 2, 3]


def test_split_folds_is_partition():
    plan = split_folds(23, 5, seed=3)
    seen = np.concatenate([plan.fold_indices(k) for k in range(1, 6)])
    assert sorted(seen.tolist()) == list(range(23))


def test_split_folds_deterministic():
    a = split_folds(50, 7, seed=11)
    b = split_folds(50, 7, seed=11)
    np.testing.assert_array_equal(a.assignment, b.assignment)


def test_split_folds_bad_k():
    with pytest.raises(ValidationError):
        split_folds(5, 6, seed=0)
    with pytest.raises(ValidationError):
        split_folds(5, 1, seed=0)


def test_fold_plan_rejects_bad_assignment():
    with pytest.raises(ValidationError):
        FoldPlan(k_folds=2, assignment=np.array([1, 1, 1, 1]))


# ------------------------------------------------- mcar_permutation_test


def _null_dataset(rng, n=40, big_n=40, p=3, shift=0.0):
    x = rng.standard_normal((n + big_n, p))
    x[n:, 0] += shift
    t = (rng.random(n + big_n) < 0.5).astype(float)
    return Dataset(
        labeled_y=rng.standard_normal(n),
        labeled_t=t[:n],
        labeled_x=x[:n],
        unlabeled_x=x[n:],
        unlabeled_t=t[n:],
    )


def test_mcar_null_rejection_rate_near_level():
    rng = np.random.default_rng(20260823)
    rejections = 0
    for _ in range(500):
        ds = _null_dataset(rng)
        p_val = mcar_permutation_test(ds, n_perm=100, seed=int(rng.integers(2**31)))
        rejections += p_val <= 0.05
    assert 0.02 <= rejections / 500 <= 0.08


def test_mcar_power_against_shifted_covariate():
    rng = np.random.default_rng(5)
    ds = _null_dataset(rng, n=200, big_n=200, shift=5.0)
    assert mcar_permutation_test(ds, n_perm=1000, seed=0) <= 0.01


def test_mcar_small_n_perm_rejected():
    rng = np.random.default_rng(6)
    ds = _null_dataset(rng)
    with pytest.raises(ValidationError):
        mcar_permutation_test(ds, n_perm=50, seed=0)


def test_mcar_invariant_to_covariate_order():
    rng = np.random.default_rng(7)
    ds = _null_dataset(rng, shift=1.0)
    perm = [2, 0, 1]
    ds2 = Dataset(
        labeled_y=ds.labeled_y,
        labeled_t=ds.labeled_t,
        labeled_x=ds.labeled_x[:, perm],
        unlabeled_x=ds.unlabeled_x[:, perm],
        unlabeled_t=ds.unlabeled_t,
    )
    assert mcar_permutation_test(ds, 200, seed=9) == mcar_permutation_test(
        ds2, 200, seed=9
    )


def test_mcar_needs_unlabeled_rows():
    rng = np.random.default_rng(8)
    ds = Dataset(
        labeled_y=rng.standard_normal(5),
        labeled_t=np.ones(5),
        labeled_x=rng.standard_normal((5, 2)),
        unlabeled_x=np.empty((0, 2)),
    )
    with pytest.raises(ValidationError):
        mcar_permutation_test(ds, 100, seed=0)
