import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from tevim.data import CONTINUOUS, CovariateSubset, Dataset, drop_columns, load_csv, write_csv
from tevim.errors import ParseError, SchemaError, ValidationError


def _write(tmp_path, text, name="d.csv"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


def test_load_three_rows(tmp_path):
    path = _write(tmp_path, "y,a,x1\n1.5,0,0.1\n2.0,1,0.2\n-1,0,0.3\n")
    d = load_csv(path, "y", "a", ["x1"])
    assert (d.n, d.p) == (3, 1)
    np.testing.assert_array_equal(d.treatment, [0, 1, 0])
    np.testing.assert_array_equal(d.outcome, [1.5, 2.0, -1.0])


def test_missing_treatment_column(tmp_path):
    path = _write(tmp_path, "y,a,x1\n1,0,0\n2,1,0\n")
    with pytest.raises(SchemaError, match="'z'"):
        load_csv(path, "y", "z", ["x1"])


def test_single_arm_rejected(tmp_path):
    path = _write(tmp_path, "y,a,x1\n1,0,0\n2,0,1\n3,0,2\n")
    with pytest.raises(ValidationError):
        load_csv(path, "y", "a", ["x1"])


def test_non_binary_treatment_rejected(tmp_path):
    path = _write(tmp_path, "y,a,x1\n1,0,0\n2,2,1\n3,1,2\n")
    with pytest.raises(ValidationError):
        load_csv(path, "y", "a")
    d = load_csv(path, "y", "a", mode=CONTINUOUS)
    assert d.treatment[1] == 2


def test_parse_error_names_row_and_column(tmp_path):
    path = _write(tmp_path, "y,a,x1\n1,0,0\n2,1,abc\n")
    with pytest.raises(ParseError, match="x1") as info:
        load_csv(path, "y", "a")
    assert "row 3" in str(info.value)  # file line, header is line 1


def test_empty_cell_is_parse_error(tmp_path):
    path = _write(tmp_path, "y,a,x1\n1,0,\n2,1,1\n")
    with pytest.raises(ParseError):
        load_csv(path, "y", "a")


def test_default_covariates_are_remaining_columns(tmp_path):
    path = _write(tmp_path, "x2,y,a,x1\n5,1,0,0\n6,2,1,1\n")
    d = load_csv(path, "y", "a")
    assert d.covariate_names == ("x2", "x1")
    np.testing.assert_array_equal(d.covariates[:, 0], [5, 6])


def test_round_trip_is_exact(tmp_path):
    rng = np.random.default_rng(3)
    X = rng.normal(size=(20, 3))
    d = Dataset(rng.normal(size=20), np.tile([0.0, 1.0], 10), X, ("u", "v", "w"))
    path = tmp_path / "rt.csv"
    write_csv(d, path)
    back = load_csv(path, "y", "a", ["u", "v", "w"])
    assert back == d
    write_csv(back, tmp_path / "rt2.csv")
    assert (tmp_path / "rt2.csv").read_bytes() == path.read_bytes()


def test_dataset_is_read_only():
    d = Dataset([1.0, 2.0], [0, 1], [[0.0], [1.0]])
    with pytest.raises(ValueError):
        d.outcome[0] = 5.0


def test_drop_columns_examples():
    X = np.array([[1.0, 2.0, 3.0]])
    np.testing.assert_array_equal(drop_columns(X, CovariateSubset((2,), 3)), [[1.0, 3.0]])
    X2 = np.arange(8.0).reshape(4, 2)
    assert drop_columns(X2, CovariateSubset.full(2)).shape == (4, 0)
    np.testing.assert_array_equal(drop_columns(X2, CovariateSubset((), 2)), X2)


def test_subset_validation():
    with pytest.raises(ValidationError):
        CovariateSubset((3,), 2)
    s = CovariateSubset((2, 1), 3)
    assert s.indices == (1, 2)
    assert s.complement() == (3,)
    assert CovariateSubset.full(3).is_full


def test_subset_from_unknown_name():
    with pytest.raises(SchemaError, match="nope"):
        CovariateSubset.from_names(["nope"], ("a", "b"))


@st.composite
def matrix_and_subset(draw):
    p = draw(st.integers(1, 5))
    X = draw(arrays(np.float64, (draw(st.integers(1, 6)), p), elements=st.floats(-1e6, 1e6)))
    idx = draw(st.sets(st.integers(1, p)))
    return X, CovariateSubset(tuple(idx), p)


@settings(max_examples=60, deadline=None)
@given(matrix_and_subset())
def test_drop_columns_properties(case):
    X, s = case
    empty = CovariateSubset((), s.p)
    np.testing.assert_array_equal(drop_columns(drop_columns(X, empty), s), drop_columns(X, s))
    kept = [j for j in range(1, s.p + 1) if j not in s.indices]
    np.testing.assert_array_equal(drop_columns(X, s), X[:, [j - 1 for j in kept]])
