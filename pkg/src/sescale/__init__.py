"""Latent socioeconomic scale estimation for users and brands from
bipartite follow graphs, via correspondence analysis on a sparse binary
incidence matrix with supplementary-point projection, score
standardization, and a statistical validation battery."""

__version__ = "0.1.0"

from .ca import (
    CAModel,
    ScoreTable,
    SparseBinaryMatrix,
    SvdParams,
    build_matrix,
    fit_ca,
    matrix_from_edges,
    orient,
    project_columns,
    project_rows,
    standardize,
)
from .filtering import (
    FilterCriteria,
    FilteredDataset,
    filter_users,
    prune_brands_and_reselect,
    select_informative,
)
from .ingest import (
    BrandCatalog,
    EdgeStore,
    UserProfileStore,
    load_brand_catalog,
    load_edges,
    load_user_profiles,
)
from .model_io import load_model, save_model
from .stats import (
    group_median_se,
    load_title_lexicon,
    match_job_titles,
    one_way_anova,
    spearman,
    welch_t,
)
from .synth import SynthParams, evaluate_recovery, generate, run_recovery_benchmark

__all__ = [
    "__version__",
    "BrandCatalog", "EdgeStore", "UserProfileStore",
    "load_brand_catalog", "load_edges", "load_user_profiles",
    "FilterCriteria", "FilteredDataset",
    "filter_users", "prune_brands_and_reselect", "select_informative",
    "SparseBinaryMatrix", "SvdParams", "CAModel", "ScoreTable",
    "build_matrix", "matrix_from_edges", "fit_ca",
    "project_rows", "project_columns", "orient", "standardize",
    "save_model", "load_model",
    "spearman", "welch_t", "one_way_anova", "group_median_se",
    "load_title_lexicon", "match_job_titles",
    "SynthParams", "generate", "evaluate_recovery", "run_recovery_benchmark",
]
