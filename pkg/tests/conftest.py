import csv

import numpy as np
import pytest
from scipy import sparse

from sescale.ca import SparseBinaryMatrix
from sescale.ingest import BRANDS_HEADER, EDGES_HEADER, USERS_HEADER


def write_csv(path, header, rows, delimiter=","):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, delimiter=delimiter)
        w.writerow(header)
        w.writerows(rows)
    return path


@pytest.fixture
def make_brands(tmp_path):
    def _make(rows, name="brands.csv"):
        return write_csv(tmp_path / name, BRANDS_HEADER, rows)
    return _make


@pytest.fixture
def make_edges(tmp_path):
    def _make(rows, name="edges.csv"):
        return write_csv(tmp_path / name, EDGES_HEADER, rows)
    return _make


@pytest.fixture
def make_users(tmp_path):
    def _make(rows, name="users.csv"):
        return write_csv(tmp_path / name, USERS_HEADER, rows)
    return _make


def random_binary_matrix(rng, n_rows, n_cols, density=0.1):
    """Random 0/1 matrix with every marginal >= 1."""
    m = rng.random((n_rows, n_cols)) < density
    for i in range(n_rows):
        if not m[i].any():
            m[i, rng.integers(n_cols)] = True
    for j in range(n_cols):
        if not m[:, j].any():
            m[rng.integers(n_rows), j] = True
    return m.astype(np.float64)


def as_matrix(dense):
    dense = np.asarray(dense, dtype=np.float64)
    n_rows, n_cols = dense.shape
    return SparseBinaryMatrix(
        sparse.csr_array(dense),
        [f"r{i}" for i in range(n_rows)],
        [f"c{j}" for j in range(n_cols)],
    )


def two_block_matrix():
    """Users {0,1} follow brands {0,1}; users {2,3} follow brands {2,3}."""
    dense = np.zeros((4, 4))
    dense[:2, :2] = 1
    dense[2:, 2:] = 1
    return as_matrix(dense)
