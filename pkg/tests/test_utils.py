"""Tests for small helpers and CSV output."""

import numpy as np
import pytest

from meshdiff.errors import ValidationError
from meshdiff.formatter import write_csv
from meshdiff.utils import (
    as_float_array,
    as_index_array,
    check_permutation,
    format_float,
    make_rng,
    stable_digest,
)

# --- array coercion ---


def test_as_float_array_accepts_empty_point_list():
    """An empty point list becomes a (0, width) array."""
    arr = as_float_array([], "positions", ndim=2, width=3)
    assert arr.shape == (0, 3)


def test_as_float_array_rejects_wrong_width():
    """Column count is enforced."""
    with pytest.raises(ValidationError, match="3 columns"):
        as_float_array([[0.0, 1.0]], "positions", ndim=2, width=3)


def test_as_index_array_rejects_fractional_values():
    """Float indices must be whole numbers."""
    with pytest.raises(ValidationError, match="integers"):
        as_index_array([0.5, 1.0], "edges")


def test_as_index_array_casts_whole_floats():
    """Whole-number floats are cast to int64."""
    arr = as_index_array([[0.0, 1.0]], "edges", width=2)
    assert arr.dtype == np.int64
    assert arr.tolist() == [[0, 1]]


# --- permutations ---


def test_check_permutation_accepts_bijection():
    """A bijection is returned as an int array."""
    assert check_permutation([2, 0, 1], 3).tolist() == [2, 0, 1]


@pytest.mark.parametrize("perm", [[0, 0, 1], [0, 1], [1, 2, 3]])
def test_check_permutation_rejects_non_bijections(perm):
    """Repeats, short lists and out-of-range entries are rejected."""
    with pytest.raises(ValidationError, match="bijection"):
        check_permutation(perm, 3)


# --- digests and formatting ---


def test_stable_digest_is_deterministic():
    """Same parts give the same digest; key order does not matter."""
    a = stable_digest({"x": 1, "y": [1, 2]}, np.arange(3.0))
    b = stable_digest({"y": [1, 2], "x": 1}, np.arange(3.0))
    assert a == b


def test_stable_digest_sees_array_dtype():
    """Arrays with equal values but different dtypes hash differently."""
    assert stable_digest(np.arange(3)) != stable_digest(np.arange(3.0))


def test_format_float_round_trips():
    """The CSV representation reloads to the same double."""
    value = 0.1 + 0.2
    assert float(format_float(value)) == value


def test_make_rng_is_seeded():
    """Equal seeds give equal draws."""
    assert make_rng(5).random() == make_rng(5).random()


def test_write_csv_header_and_rows(tmp_path):
    """Header first, one record per line."""
    path = tmp_path / "out.csv"
    write_csv(path, ["a", "b"], [[1, 0.5], [2, 0.25]])
    lines = path.read_text().splitlines()
    assert lines[0] == "a,b"
    assert len(lines) == 3
