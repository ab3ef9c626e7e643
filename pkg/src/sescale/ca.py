"""Correspondence analysis on sparse binary incidence matrices.

The estimation works on a user-by-brand 0/1 matrix ``N``. With
``n = sum(N)``, ``P = N / n`` and the row/column masses ``r = P.sum(1)``,
``c = P.sum(0)``, the standardized residual operator is

    S = D_r (P - r c^T) D_c,
    D_r = diag(1 / sqrt(r)),  D_c = diag(1 / sqrt(c)).

``S`` is decomposed as ``U diag(alpha) V^T``; the standard coordinates
are ``G_r = D_r U`` and ``G_c = D_c V``, and dimension 1 of these is the
latent scale. Residual centering removes the trivial unit singular value
analytically, so the fitted spectrum contains nontrivial dimensions only.

``S`` is never materialized: every product goes through the sparse
counts plus a rank-one correction, costing O(nnz + I + J) per
application. Supplementary rows/columns are mapped into a fitted space
by profile averaging, ``g = profile^T G``, which for an in-fit point
reproduces ``alpha_k`` times its standard coordinate (the transition
identity).
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import sparse

from .errors import (
    ConvergenceFailure,
    DegenerateMatrix,
    DimensionMismatch,
    EmptySupport,
    InvalidParameter,
    UnknownAnchor,
    ZeroMarginal,
    ZeroVariance,
)
from .filtering import FilteredDataset

#: Singular values below this are treated as numerical zero.
ALPHA_TOL = 1e-7


@dataclass
class SvdParams:
    oversampling: int = 10
    power_iterations: int = 4
    seed: int = 0
    method: str = "auto"      # auto | exact | randomized
    exact_cutoff: int = 2048  # largest min-dimension handled by the exact path

    def validate(self):
        if self.method not in ("auto", "exact", "randomized"):
            raise InvalidParameter(f"unknown svd method {self.method!r}")
        if self.oversampling < 1 or self.power_iterations < 0:
            raise InvalidParameter("oversampling >= 1 and power_iterations >= 0 required")

    def to_dict(self) -> dict:
        return {
            "oversampling": self.oversampling,
            "power_iterations": self.power_iterations,
            "seed": self.seed,
            "method": self.method,
            "exact_cutoff": self.exact_cutoff,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SvdParams":
        unknown = set(data) - {f.name for f in cls.__dataclass_fields__.values()}
        if unknown:
            raise InvalidParameter(f"unknown svd fields: {sorted(unknown)}")
        params = cls(**data)
        params.validate()
        return params


class SparseBinaryMatrix:
    """A 0/1 incidence matrix held in both CSR and CSC form.

    Every row and column is guaranteed to have at least one entry;
    :func:`build_matrix` enforces this before construction.
    """

    def __init__(self, csr: sparse.csr_array, row_ids: list[str], col_ids: list[str]):
        self.csr = csr
        self.csc = csr.tocsc()
        self.row_ids = row_ids
        self.col_ids = col_ids

    @property
    def shape(self) -> tuple[int, int]:
        return self.csr.shape

    @property
    def nnz(self) -> int:
        return self.csr.nnz

    def row_sums(self) -> np.ndarray:
        return np.asarray(self.csr.sum(axis=1)).ravel()

    def col_sums(self) -> np.ndarray:
        return np.asarray(self.csr.sum(axis=0)).ravel()


def build_matrix(dataset: FilteredDataset, row_set, col_set) -> SparseBinaryMatrix:
    """Restrict the dataset's edges to ``row_set x col_set``.

    Rows and columns are ordered by ascending original index. Raises
    :class:`ZeroMarginal` naming the first entity whose restricted
    row/column would be empty.
    """
    rows = np.unique(np.asarray(list(row_set), dtype=np.int64))
    cols = np.unique(np.asarray(list(col_set), dtype=np.int64))
    if len(rows) == 0 or len(cols) == 0:
        raise ZeroMarginal("matrix", "empty row or column set")

    row_lookup = np.full(len(dataset.user_ids), -1, dtype=np.int64)
    row_lookup[rows] = np.arange(len(rows))
    col_lookup = np.full(len(dataset.brand_ids), -1, dtype=np.int64)
    col_lookup[cols] = np.arange(len(cols))

    ri = row_lookup[dataset.u]
    ci = col_lookup[dataset.b]
    keep = (ri >= 0) & (ci >= 0)
    ri, ci = ri[keep], ci[keep]

    shape = (len(rows), len(cols))
    csr = sparse.csr_array(
        (np.ones(len(ri), dtype=np.float64), (ri, ci)), shape=shape
    )
    csr.sum_duplicates()
    if csr.nnz and csr.data.max() > 1:
        raise InvalidParameter("duplicate edges reached build_matrix")

    row_sum = np.asarray(csr.sum(axis=1)).ravel()
    if (row_sum == 0).any():
        i = int(np.flatnonzero(row_sum == 0)[0])
        raise ZeroMarginal("row", dataset.user_ids.tokens[rows[i]])
    col_sum = np.asarray(csr.sum(axis=0)).ravel()
    if (col_sum == 0).any():
        j = int(np.flatnonzero(col_sum == 0)[0])
        raise ZeroMarginal("column", dataset.brand_ids.tokens[cols[j]])

    return SparseBinaryMatrix(
        csr,
        row_ids=dataset.user_tokens(rows),
        col_ids=dataset.brand_tokens(cols),
    )


def matrix_from_edges(u, b, row_ids: list[str], col_ids: list[str]) -> SparseBinaryMatrix:
    """Build a matrix directly from dense-index edge arrays (no filtering)."""
    csr = sparse.csr_array(
        (np.ones(len(u), dtype=np.float64), (np.asarray(u), np.asarray(b))),
        shape=(len(row_ids), len(col_ids)),
    )
    csr.sum_duplicates()
    if csr.nnz and csr.data.max() > 1:
        raise InvalidParameter("duplicate edges passed to matrix_from_edges")
    row_sum = np.asarray(csr.sum(axis=1)).ravel()
    if (row_sum == 0).any():
        raise ZeroMarginal("row", row_ids[int(np.flatnonzero(row_sum == 0)[0])])
    col_sum = np.asarray(csr.sum(axis=0)).ravel()
    if (col_sum == 0).any():
        raise ZeroMarginal("column", col_ids[int(np.flatnonzero(col_sum == 0)[0])])
    return SparseBinaryMatrix(csr, row_ids=list(row_ids), col_ids=list(col_ids))


class ResidualOperator:
    """Matrix-free application of the standardized residual operator.

    ``apply`` computes ``S @ v`` and ``apply_t`` computes ``S.T @ u`` as

        S v   = D_r (N (D_c v)) / n - sqrt(r) (sqrt(c) . v)
        S^T u = D_c (N^T (D_r u)) / n - sqrt(c) (sqrt(r) . u)

    using only the sparse counts and O(I + J) vectors. ``sqrt(c)`` is the
    trivial right singular direction of the uncentered operator and is
    annihilated exactly.
    """

    def __init__(self, matrix: SparseBinaryMatrix):
        self._a = matrix.csr
        self._at = matrix.csc.T  # CSR view of the transpose, zero-copy
        self.shape = matrix.shape
        row_sum = matrix.row_sums()
        col_sum = matrix.col_sums()
        self.grand_total = float(row_sum.sum())
        if (row_sum == 0).any() or (col_sum == 0).any():
            raise ZeroMarginal("matrix", "zero marginal encountered in operator")
        self.row_masses = row_sum / self.grand_total
        self.col_masses = col_sum / self.grand_total
        self.sqrt_r = np.sqrt(self.row_masses)
        self.sqrt_c = np.sqrt(self.col_masses)
        self.inv_sqrt_r = 1.0 / self.sqrt_r
        self.inv_sqrt_c = 1.0 / self.sqrt_c

    def _scale(self, diag, x):
        return diag * x if x.ndim == 1 else diag[:, None] * x

    def apply(self, v: np.ndarray) -> np.ndarray:
        """``S @ v`` for a vector of length J or a (J, m) block."""
        v = np.asarray(v, dtype=np.float64)
        if v.shape[0] != self.shape[1]:
            raise DimensionMismatch(
                f"expected leading dimension {self.shape[1]}, got {v.shape[0]}")
        w = self._scale(self.inv_sqrt_c, v)
        y = (self._a @ w) / self.grand_total
        t = self.sqrt_c @ v
        if v.ndim == 1:
            return self.inv_sqrt_r * y - self.sqrt_r * t
        return self.inv_sqrt_r[:, None] * y - np.outer(self.sqrt_r, t)

    def apply_t(self, u: np.ndarray) -> np.ndarray:
        """``S.T @ u`` for a vector of length I or an (I, m) block."""
        u = np.asarray(u, dtype=np.float64)
        if u.shape[0] != self.shape[0]:
            raise DimensionMismatch(
                f"expected leading dimension {self.shape[0]}, got {u.shape[0]}")
        w = self._scale(self.inv_sqrt_r, u)
        y = (self._at @ w) / self.grand_total
        t = self.sqrt_r @ u
        if u.ndim == 1:
            return self.inv_sqrt_c * y - self.sqrt_c * t
        return self.inv_sqrt_c[:, None] * y - np.outer(self.sqrt_c, t)

    def scaled_counts(self) -> sparse.csr_array:
        """``T = D_r (N / n) D_c`` as a sparse matrix (same sparsity as N)."""
        t = self._a.copy()
        rows = np.repeat(np.arange(self.shape[0]), np.diff(t.indptr))
        t.data = t.data * self.inv_sqrt_r[rows] * self.inv_sqrt_c[t.indices] \
            / self.grand_total
        return t


@dataclass
class CAModel:
    """Fitted correspondence analysis model.

    ``row_coords``/``col_coords`` are standard coordinates (mass-weighted
    zero mean, unit variance per dimension). ``orientation`` records the
    per-dimension sign flips applied after fitting.
    """

    singular_values: np.ndarray        # (k,), descending, in (0, 1]
    row_coords: np.ndarray             # (I, k) standard coordinates
    col_coords: np.ndarray             # (J, k)
    row_masses: np.ndarray             # (I,)
    col_masses: np.ndarray             # (J,)
    row_ids: list[str]
    col_ids: list[str]
    orientation: list[int]
    anchor_note: str | None
    fit_meta: dict
    _row_index: dict = field(default=None, repr=False, compare=False)
    _col_index: dict = field(default=None, repr=False, compare=False)

    @property
    def k(self) -> int:
        return len(self.singular_values)

    @property
    def shape(self) -> tuple[int, int]:
        return len(self.row_ids), len(self.col_ids)

    @property
    def row_index(self) -> dict:
        if self._row_index is None:
            self._row_index = {t: i for i, t in enumerate(self.row_ids)}
        return self._row_index

    @property
    def col_index(self) -> dict:
        if self._col_index is None:
            self._col_index = {t: i for i, t in enumerate(self.col_ids)}
        return self._col_index


def _canonical_signs(u, v):
    # Deterministic sign convention: the largest-magnitude entry of each
    # right singular vector is positive. Flips are applied pairwise so the
    # reconstruction is unchanged.
    for k in range(v.shape[1]):
        i = int(np.argmax(np.abs(v[:, k])))
        if v[i, k] < 0:
            v[:, k] = -v[:, k]
            u[:, k] = -u[:, k]
    return u, v


def _fit_exact(op: ResidualOperator, k: int):
    """Top-k triplets via an eigendecomposition of the small-side Gram matrix.

    For J <= I the J x J matrix ``S^T S = T^T T - sqrt(c) sqrt(c)^T`` is
    assembled from the scaled counts ``T`` and decomposed by ``eigh``;
    left vectors are recovered with one operator pass. Exact to LAPACK
    precision, deterministic, O(J^2) extra memory.
    """
    i_dim, j_dim = op.shape
    t = op.scaled_counts()
    try:
        if j_dim <= i_dim:
            g = (t.T @ t).toarray()
            g -= np.outer(op.sqrt_c, op.sqrt_c)
            g = (g + g.T) / 2.0
            w, vecs = np.linalg.eigh(g)
            order = np.argsort(w)[::-1][:k]
            alpha = np.sqrt(np.clip(w[order], 0.0, None))
            v = vecs[:, order]
            u = t @ v - np.outer(op.sqrt_r, op.sqrt_c @ v)
            nonzero = alpha > 0
            u[:, nonzero] /= alpha[nonzero]
        else:
            g = (t @ t.T).toarray()
            g -= np.outer(op.sqrt_r, op.sqrt_r)
            g = (g + g.T) / 2.0
            w, vecs = np.linalg.eigh(g)
            order = np.argsort(w)[::-1][:k]
            alpha = np.sqrt(np.clip(w[order], 0.0, None))
            u = vecs[:, order]
            v = t.T @ u - np.outer(op.sqrt_c, op.sqrt_r @ u)
            nonzero = alpha > 0
            v[:, nonzero] /= alpha[nonzero]
    except np.linalg.LinAlgError as err:
        raise ConvergenceFailure(f"eigh failed: {err}") from err
    return u, alpha, v


def _fit_randomized(op: ResidualOperator, k: int, params: SvdParams):
    """Randomized range-finder with power iterations through the operator.

    Suited for matrices whose smaller dimension exceeds the exact-path
    cutoff; accuracy depends on the spectral gap beyond the oversampled
    block.
    """
    i_dim, j_dim = op.shape
    width = min(k + params.oversampling, min(i_dim, j_dim))
    rng = np.random.default_rng(params.seed)
    try:
        omega = rng.standard_normal((j_dim, width))
        q, _ = np.linalg.qr(op.apply(omega))
        for _ in range(params.power_iterations):
            z, _ = np.linalg.qr(op.apply_t(q))
            q, _ = np.linalg.qr(op.apply(z))
        b = op.apply_t(q).T
        ub, alpha, vt = np.linalg.svd(b, full_matrices=False)
    except np.linalg.LinAlgError as err:
        raise ConvergenceFailure(f"randomized svd failed: {err}") from err
    return (q @ ub)[:, :k], alpha[:k], vt.T[:, :k]


def fit_ca(matrix: SparseBinaryMatrix, k_dims: int = 3,
           svd_params: SvdParams | None = None) -> CAModel:
    """Fit the residual SVD and return standard coordinates.

    ``k_dims`` is clamped to the number of dimensions whose singular value
    exceeds :data:`ALPHA_TOL`; a matrix with no association structure at
    all raises :class:`DegenerateMatrix`. Deterministic for a given seed
    and input; the relative order of numerically tied singular values is
    stable but not identifiable.
    """
    params = svd_params or SvdParams()
    params.validate()
    i_dim, j_dim = matrix.shape
    max_k = min(i_dim, j_dim) - 1
    if k_dims < 1 or k_dims > max_k:
        raise InvalidParameter(
            f"k_dims must be in [1, {max_k}] for a {i_dim}x{j_dim} matrix, "
            f"got {k_dims}")

    op = ResidualOperator(matrix)
    method = params.method
    if method == "auto":
        method = "exact" if min(i_dim, j_dim) <= params.exact_cutoff else "randomized"
    if method == "exact":
        u, alpha, v = _fit_exact(op, k_dims)
    else:
        u, alpha, v = _fit_randomized(op, k_dims, params)

    keep = alpha > ALPHA_TOL
    if not keep.any():
        raise DegenerateMatrix(
            "all residual singular values are numerically zero "
            f"(largest {alpha[0] if len(alpha) else 0.0:.2e})")
    k_eff = int(keep.sum())
    u, alpha, v = u[:, :k_eff], alpha[:k_eff], v[:, :k_eff]
    u, v = _canonical_signs(u, v)

    model = CAModel(
        singular_values=alpha,
        row_coords=op.inv_sqrt_r[:, None] * u,
        col_coords=op.inv_sqrt_c[:, None] * v,
        row_masses=op.row_masses,
        col_masses=op.col_masses,
        row_ids=list(matrix.row_ids),
        col_ids=list(matrix.col_ids),
        orientation=[1] * k_eff,
        anchor_note=None,
        fit_meta={
            "seed": params.seed,
            "oversampling": params.oversampling,
            "power_iterations": params.power_iterations,
            "method": method,
            "n_rows": i_dim,
            "n_cols": j_dim,
            "nnz": matrix.nnz,
            "k_requested": k_dims,
            "k_effective": k_eff,
            "python": sys.version.split()[0],
        },
    )
    return model


def _as_csr(points):
    if sparse.issparse(points):
        return sparse.csr_array(points)
    arr = np.asarray(points, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    return sparse.csr_array(arr)


def project_columns(model: CAModel, cols, row_ids: list[str] | None = None):
    """Map supplementary columns into the fitted space.

    ``cols`` holds one column per new entity over the rows labelled by
    ``row_ids`` (model row order when omitted). Each column is normalized
    to a profile over the rows it shares with the model and averaged
    through ``row_coords``; entries on unknown rows are dropped and
    tallied. Returns ``(coords, dropped_entries)`` where ``coords`` has
    one k-vector per column. Raises :class:`EmptySupport` if a column has
    no overlap with the model rows.
    """
    return _project(model, cols, row_ids, model.row_ids, model.row_index,
                    model.row_coords, "column")


def project_rows(model: CAModel, rows, col_ids: list[str] | None = None):
    """Mirror of :func:`project_columns` for supplementary rows.

    ``rows`` is (n_new, n_cols) over ``col_ids``; profiles are averaged
    through ``col_coords``.
    """
    if sparse.issparse(rows):
        mat = sparse.csr_array(rows).T
    else:
        arr = np.asarray(rows, dtype=np.float64)
        if arr.ndim == 1:
            arr = arr[None, :]
        mat = sparse.csr_array(arr).T
    return _project(model, mat, col_ids, model.col_ids, model.col_index,
                    model.col_coords, "row")


def _project(model, cols, axis_ids, model_ids, model_index, coords, kind):
    cols = _as_csr(cols)
    if axis_ids is None:
        if cols.shape[0] != len(model_ids):
            raise DimensionMismatch(
                f"expected {len(model_ids)} rows, got {cols.shape[0]}")
        aligned = cols
        dropped = 0
    else:
        if cols.shape[0] != len(axis_ids):
            raise DimensionMismatch(
                f"ids label {len(axis_ids)} rows but data has {cols.shape[0]}")
        positions = np.array([model_index.get(t, -1) for t in axis_ids],
                             dtype=np.int64)
        known = positions >= 0
        nnz_per_row = np.diff(cols.indptr)
        dropped = int(nnz_per_row[~known].sum())
        sel = sparse.csr_array(
            (np.ones(int(known.sum())),
             (positions[known], np.flatnonzero(known))),
            shape=(len(model_ids), len(axis_ids)),
        )
        aligned = sel @ cols
    support = np.asarray(aligned.sum(axis=0)).ravel()
    if (support <= 0).any():
        j = int(np.flatnonzero(support <= 0)[0])
        raise EmptySupport(f"supplementary {kind} {j} shares no rows with the model")
    g = (aligned.T @ coords) / support[:, None]
    return np.asarray(g), dropped


def orient(model: CAModel, kind: str, ids: list[str], sign: int) -> CAModel:
    """Fix the arbitrary polarity of dimension 1 against an anchor set.

    Flips dimension-1 signs of both coordinate sets together (so the
    reconstruction and all projections stay consistent) until the mean
    dimension-1 coordinate over the anchor ids carries ``sign``.
    Idempotent. Raises :class:`UnknownAnchor` for ids absent from the
    model.
    """
    if kind not in ("user", "brand"):
        raise InvalidParameter(f"anchor kind must be user or brand, got {kind!r}")
    if sign not in (1, -1):
        raise InvalidParameter("anchor sign must be +1 or -1")
    index = model.row_index if kind == "user" else model.col_index
    coords = model.row_coords if kind == "user" else model.col_coords
    positions = []
    for token in ids:
        pos = index.get(token)
        if pos is None:
            raise UnknownAnchor(f"{kind} {token!r} not in model")
        positions.append(pos)
    note = f"{kind}:{','.join(ids)}:{'+' if sign > 0 else '-'}"
    mean1 = float(coords[positions, 0].mean())
    if mean1 * sign >= 0:
        return replace(model, anchor_note=note)
    row_coords = model.row_coords.copy()
    col_coords = model.col_coords.copy()
    row_coords[:, 0] = -row_coords[:, 0]
    col_coords[:, 0] = -col_coords[:, 0]
    orientation = list(model.orientation)
    orientation[0] = -orientation[0]
    return replace(model, row_coords=row_coords, col_coords=col_coords,
                   orientation=orientation, anchor_note=note,
                   _row_index=model._row_index, _col_index=model._col_index)


@dataclass
class ScoreTable:
    """Standardized dimension-1 scores for one entity kind."""

    kind: str                  # "user" | "brand"
    ids: list[str]
    raw_dim1: np.ndarray
    ses: np.ndarray
    meta: dict

    def __len__(self) -> int:
        return len(self.ids)

    def as_dict(self) -> dict[str, float]:
        return dict(zip(self.ids, self.ses.tolist()))

    def to_csv(self, path, fmt: str = ".12g"):
        with open(path, "w", newline="", encoding="utf-8") as fh:
            fh.write("entity_id,raw_dim1,ses\n")
            for i, token in enumerate(self.ids):
                fh.write(f"{token},{self.raw_dim1[i]:{fmt}},{self.ses[i]:{fmt}}\n")

    @classmethod
    def from_csv(cls, path, kind: str) -> "ScoreTable":
        ids, raw, ses = [], [], []
        with open(path, newline="", encoding="utf-8") as fh:
            header = fh.readline().strip()
            if header != "entity_id,raw_dim1,ses":
                raise InvalidParameter(f"{path}: not a score table")
            for line in fh:
                token, a, z = line.rstrip("\n").split(",")
                ids.append(token)
                raw.append(float(a))
                ses.append(float(z))
        return cls(kind=kind, ids=ids, raw_dim1=np.array(raw),
                   ses=np.array(ses), meta={"source": str(path)})


def standardize(ids: list[str], raw: np.ndarray, kind: str,
                population: str = "all_projected",
                population_mask: np.ndarray | None = None) -> ScoreTable:
    """Z-standardize raw dimension-1 values (population standard deviation).

    The mean/sd are computed over ``population_mask`` entries (everyone
    when omitted) and applied to all entries; mean, sd, median and
    skewness of the standardization population go into ``meta``.
    Raises :class:`ZeroVariance` for a constant population.
    """
    raw = np.asarray(raw, dtype=np.float64)
    if raw.ndim != 1 or len(raw) != len(ids):
        raise DimensionMismatch("raw scores must be one value per id")
    pop = raw if population_mask is None else raw[np.asarray(population_mask)]
    if len(pop) < 2:
        raise ZeroVariance("need at least two entries to standardize")
    mean = float(pop.mean())
    sd = float(pop.std(ddof=0))
    if sd == 0.0:
        raise ZeroVariance("scores have zero variance")
    centered = pop - mean
    skew = float(np.mean(centered ** 3) / sd ** 3)
    ses = (raw - mean) / sd
    return ScoreTable(
        kind=kind, ids=list(ids), raw_dim1=raw, ses=ses,
        meta={
            "population": population,
            "population_n": int(len(pop)),
            "mean": mean,
            "sd": sd,
            "median": float(np.median(pop)),
            "skewness": skew,
        },
    )
