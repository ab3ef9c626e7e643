"""Stage orchestration: ingest -> filter -> fit -> project -> score -> validate.

Every stage reads the original inputs plus the previous stage's files,
so any stage can resume from disk alone. Each run writes ``manifest.json``
(config hash, seed, library versions, stage timings and counts) into the
output directory.

Output layout under ``--out``::

    manifest.json                       audit/ingest.json
    filter/{audit.json, *_users.csv, *_brands.csv}
    model/{model.json, model.bin}       projected/{brand,user}_coords.csv
    score/{users_ses.csv, brands_ses.csv, score_meta.json}
    validation/<analysis>.{json,csv}    synth/*.csv
"""

from __future__ import annotations

import csv
import json
import logging
import time
from pathlib import Path

import numpy as np
import scipy
from threadpoolctl import threadpool_limits

from . import __version__, ca, model_io, stats, synth
from .config import PipelineConfig
from .errors import ConfigError, EmptySupport, SescaleError
from .filtering import (
    FilteredDataset,
    filter_users,
    prune_brands_and_reselect,
    select_informative,
)
from .ingest import (
    load_brand_catalog,
    load_edges,
    load_user_profiles,
    write_brands_csv,
    write_edges_csv,
    write_users_csv,
)

log = logging.getLogger(__name__)

PIPELINE_STAGES = ("ingest", "filter", "fit", "project", "score", "validate")
COORD_FMT = ".17g"


def _write_json(path: Path, payload: dict):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=1, default=str)
        fh.write("\n")


def _write_id_list(path: Path, ids):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("entity_id\n")
        for token in ids:
            fh.write(f"{token}\n")


def _read_id_list(path: Path) -> list[str]:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline()
        if header.strip() != "entity_id":
            raise ConfigError(f"{path}: not an id list")
        return [line.strip() for line in fh if line.strip()]


def _write_coords(path: Path, ids, coords):
    path.parent.mkdir(parents=True, exist_ok=True)
    k = coords.shape[1]
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("entity_id," + ",".join(f"dim{i + 1}" for i in range(k)) + "\n")
        for token, row in zip(ids, coords):
            fh.write(token + "," +
                     ",".join(f"{v:{COORD_FMT}}" for v in row) + "\n")


def _read_coords(path: Path):
    ids, rows = [], []
    with open(path, encoding="utf-8") as fh:
        fh.readline()
        for line in fh:
            parts = line.rstrip("\n").split(",")
            ids.append(parts[0])
            rows.append([float(v) for v in parts[1:]])
    return ids, np.array(rows)


class Run:
    """Shared state across stages in a single invocation."""

    def __init__(self, cfg: PipelineConfig):
        self.cfg = cfg
        self.out = cfg.out_dir()
        self.ctx: dict = {}

    # --- lazy loaders -------------------------------------------------

    def catalog(self):
        if "catalog" not in self.ctx:
            if not self.cfg.brands:
                raise ConfigError("no brands path configured")
            self.ctx["catalog"] = load_brand_catalog(self.cfg.brands,
                                                     self.cfg.delimiter)
        return self.ctx["catalog"]

    def edges(self):
        if "edges" not in self.ctx:
            if not self.cfg.edges:
                raise ConfigError("no edges path configured")
            self.ctx["edges"] = load_edges(self.cfg.edges, self.catalog(),
                                           self.cfg.delimiter)
        return self.ctx["edges"]

    def profiles(self):
        if "profiles" not in self.ctx:
            if not self.cfg.users:
                raise ConfigError("no users path configured")
            self.ctx["profiles"] = load_user_profiles(self.cfg.users,
                                                      self.cfg.delimiter)
        return self.ctx["profiles"]

    def model(self):
        if "model" not in self.ctx:
            path = self.out / "model" / "model.json"
            if not path.exists():
                raise ConfigError(f"no fitted model at {path}; run fit first")
            self.ctx["model"] = model_io.load_model(path)
        return self.ctx["model"]

    def _informative_sets(self):
        """Informative user/brand tokens, from memory or the filter stage files."""
        if "informative_tokens" not in self.ctx:
            fdir = self.out / "filter"
            try:
                self.ctx["informative_tokens"] = (
                    _read_id_list(fdir / "informative_users.csv"),
                    _read_id_list(fdir / "informative_brands.csv"),
                )
            except FileNotFoundError as err:
                raise ConfigError(
                    f"no informative-set lists under {fdir}; run filter first"
                ) from err
        return self.ctx["informative_tokens"]


# --- stages -----------------------------------------------------------


def stage_ingest(run: Run) -> dict:
    edges = run.edges()
    profiles = run.profiles()
    record = {
        "brands": len(run.catalog()),
        "users_in_edges": edges.n_users,
        "edges": edges.n_edges,
        "duplicate_edges_dropped": edges.duplicates_dropped,
        "edges_skipped_unknown_brand": edges.skipped_unknown_brand,
        "profiles": len(profiles),
        "profile_rows_rejected": len(profiles.row_errors),
        "orphan_profiles": len(profiles.orphans(edges)),
    }
    _write_json(run.out / "audit" / "ingest.json", record)
    return record


def stage_filter(run: Run) -> dict:
    cfg = run.cfg
    dataset = filter_users(run.edges(), run.profiles(), cfg.criteria)
    dataset = prune_brands_and_reselect(dataset, cfg.criteria,
                                        single_pass=cfg.single_pass_prune)
    inf_users, inf_brands = select_informative(dataset, run.catalog(),
                                               cfg.criteria)
    fdir = run.out / "filter"
    _write_id_list(fdir / "surviving_users.csv", dataset.user_tokens(dataset.users))
    _write_id_list(fdir / "surviving_brands.csv", dataset.brand_tokens(dataset.brands))
    user_tokens = dataset.user_tokens(inf_users)
    brand_tokens = dataset.brand_tokens(inf_brands)
    _write_id_list(fdir / "informative_users.csv", user_tokens)
    _write_id_list(fdir / "informative_brands.csv", brand_tokens)
    _write_json(fdir / "audit.json", dataset.audit)
    run.ctx["dataset"] = dataset
    run.ctx["informative_tokens"] = (user_tokens, brand_tokens)
    return {
        "surviving_users": int(len(dataset.users)),
        "surviving_brands": int(len(dataset.brands)),
        "informative_users": len(user_tokens),
        "informative_brands": len(brand_tokens),
        "audit": dataset.audit,
    }


def stage_fit(run: Run) -> dict:
    cfg = run.cfg
    edges = run.edges()
    user_tokens, brand_tokens = run._informative_sets()
    rows = [edges.user_ids.get(t) for t in user_tokens]
    cols = [edges.brand_ids.get(t) for t in brand_tokens]
    if any(i is None for i in rows) or any(j is None for j in cols):
        raise ConfigError("informative id lists do not match the edge data")

    # Surface an impossible k before any numerical work.
    max_k = min(len(rows), len(cols)) - 1
    if cfg.k_dims > max_k:
        raise ConfigError(
            f"k_dims={cfg.k_dims} exceeds min(I,J)-1={max_k} for the "
            f"{len(rows)}x{len(cols)} informative matrix")

    dataset = run.ctx.get("dataset") or FilteredDataset(
        u=edges.u, b=edges.b,
        user_ids=edges.user_ids, brand_ids=edges.brand_ids,
        users=np.unique(edges.u), brands=np.unique(edges.b),
    )
    matrix = ca.build_matrix(dataset, rows, cols)
    model = ca.fit_ca(matrix, k_dims=cfg.k_dims, svd_params=cfg.svd)
    model_io.save_model(model, run.out / "model" / "model.json")
    run.ctx["model"] = model
    run.ctx["matrix"] = matrix
    return {
        "matrix_shape": list(matrix.shape),
        "nnz": matrix.nnz,
        "singular_values": model.singular_values.tolist(),
        "k_effective": model.k,
    }


def _projection_matrices(run: Run):
    """Full incidence restricted to model rows (for brands) and model
    columns (for users), in catalog/user token spaces."""
    from scipy import sparse

    edges = run.edges()
    model = run.model()
    row_pos = np.array([model.row_index.get(t, -1)
                        for t in edges.user_ids.tokens], dtype=np.int64)
    col_pos = np.array([model.col_index.get(t, -1)
                        for t in edges.brand_ids.tokens], dtype=np.int64)

    keep = row_pos[edges.u] >= 0
    brand_cols = sparse.csr_array(
        (np.ones(int(keep.sum())),
         (row_pos[edges.u[keep]], edges.b[keep])),
        shape=(len(model.row_ids), edges.n_brands))

    keep = col_pos[edges.b] >= 0
    user_rows = sparse.csr_array(
        (np.ones(int(keep.sum())),
         (edges.u[keep], col_pos[edges.b[keep]])),
        shape=(edges.n_users, len(model.col_ids)))
    return brand_cols, user_rows


def stage_project(run: Run) -> dict:
    edges = run.edges()
    model = run.model()
    brand_cols, user_rows = _projection_matrices(run)
    pdir = run.out / "projected"

    # Brands first, then users (fixed order for audit comparability).
    support = np.asarray(brand_cols.sum(axis=0)).ravel()
    projectable = np.flatnonzero(support > 0)
    brand_coords, _ = ca.project_columns(model, brand_cols[:, projectable])
    brand_ids = [edges.brand_ids.tokens[j] for j in projectable]
    _write_coords(pdir / "brand_coords.csv", brand_ids, brand_coords)
    brands_skipped = edges.n_brands - len(projectable)

    support = np.asarray(user_rows.sum(axis=1)).ravel()
    projectable_u = np.flatnonzero(support > 0)
    user_coords, _ = ca.project_rows(model, user_rows[projectable_u, :])
    user_ids = [edges.user_ids.tokens[i] for i in projectable_u]
    _write_coords(pdir / "user_coords.csv", user_ids, user_coords)
    users_skipped = edges.n_users - len(projectable_u)

    record = {
        "brands_projected": len(brand_ids),
        "brands_skipped_no_support": int(brands_skipped),
        "users_projected": len(user_ids),
        "users_skipped_no_support": int(users_skipped),
        # polarity the coordinates were written under, so a later score
        # stage can reconcile against a re-oriented model
        "orientation_dim1": model.orientation[0],
    }
    _write_json(pdir / "projection.json", record)
    run.ctx["projected"] = {
        "brand": (brand_ids, brand_coords),
        "user": (user_ids, user_coords),
        "orientation_dim1": model.orientation[0],
    }
    return record


def _default_anchor(model: ca.CAModel) -> dict:
    j = int(np.argmax(model.col_masses))
    return {"kind": "brand", "ids": [model.col_ids[j]], "sign": 1}


def stage_score(run: Run) -> dict:
    cfg = run.cfg
    model = run.model()
    anchor = cfg.anchor or _default_anchor(model)
    sign = anchor["sign"]
    sign = 1 if str(sign) in ("1", "+", "+1", "positive") else -1
    oriented = ca.orient(model, anchor["kind"], list(anchor["ids"]), sign)
    if oriented.orientation[0] != model.orientation[0]:
        model_io.save_model(oriented, run.out / "model" / "model.json")
        run.ctx["model"] = oriented

    if "projected" in run.ctx:
        projected = run.ctx["projected"]
    else:
        pdir = run.out / "projected"
        try:
            projected = {
                "brand": _read_coords(pdir / "brand_coords.csv"),
                "user": _read_coords(pdir / "user_coords.csv"),
                "orientation_dim1": json.loads(
                    (pdir / "projection.json").read_text())["orientation_dim1"],
            }
        except FileNotFoundError as err:
            raise ConfigError(
                f"no projected coordinates under {pdir}; run project first"
            ) from err

    # The stored coordinates carry the polarity current when project ran;
    # reconcile them with the (possibly re-)oriented model.
    flipped = oriented.orientation[0] != projected["orientation_dim1"]

    sdir = run.out / "score"
    sdir.mkdir(parents=True, exist_ok=True)
    meta = {"anchor": anchor, "dim1_flipped": bool(flipped),
            "population": cfg.standardize_population}
    record = {}
    for kind, filename in (("user", "users_ses.csv"), ("brand", "brands_ses.csv")):
        ids, coords = projected[kind]
        raw = (-1 if flipped else 1) * coords[:, 0]
        if cfg.standardize_population == "model":
            in_model = (oriented.row_index if kind == "user"
                        else oriented.col_index)
            mask = np.array([t in in_model for t in ids])
        else:
            mask = None
        table = ca.standardize(ids, raw, kind,
                               population=cfg.standardize_population,
                               population_mask=mask)
        table.to_csv(sdir / filename)
        meta[kind] = table.meta
        record[kind] = {"n": len(table), **table.meta}
        run.ctx[f"scores_{kind}"] = table
    _write_json(sdir / "score_meta.json", meta)
    return record


# --- validation analyses ------------------------------------------------


def _scores(run: Run, kind: str) -> ca.ScoreTable:
    key = f"scores_{kind}"
    if key not in run.ctx:
        name = "users_ses.csv" if kind == "user" else "brands_ses.csv"
        path = run.out / "score" / name
        try:
            run.ctx[key] = ca.ScoreTable.from_csv(path, kind)
        except FileNotFoundError as err:
            raise ConfigError(f"no score table at {path}; run score first") from err
    return run.ctx[key]


def _analysis_title_salary(run: Run) -> dict:
    cfg = run.cfg
    lexicon_path = cfg.validate.get("lexicon")
    if not lexicon_path:
        raise ConfigError("title-salary analysis needs validate.lexicon")
    lexicon = stats.load_title_lexicon(lexicon_path, cfg.delimiter)
    matches = stats.match_job_titles(
        run.profiles(), lexicon,
        min_matches=int(cfg.validate.get("min_title_matches", 50)))
    scores = _scores(run, "user").as_dict()
    assignment = {u: t for u, t in matches.assignment.items() if u in scores}
    if not assignment:
        raise EmptySupport("no matched user has a score")
    groups = stats.group_median_se(
        scores, assignment,
        n_boot=int(cfg.validate.get("bootstrap_b", 1000)),
        seed=cfg.seed,
        small_group_floor=int(cfg.validate.get("small_group_floor", 10)))

    usable = [t for t in groups.labels() if not groups.groups[t].flagged_small]
    med = [groups.groups[t].median for t in usable]
    salary = [lexicon.entries[t].mean_annual_salary for t in usable]
    klass = [lexicon.entries[t].occupational_class for t in usable]
    rho_salary = stats.spearman(med, salary)
    rho_class = stats.spearman(med, klass)

    rows = [{
        "title": t,
        "occupational_class": lexicon.entries[t].occupational_class,
        "mean_salary_usd": lexicon.entries[t].mean_annual_salary,
        "n": groups.groups[t].n,
        "median_ses": groups.groups[t].median,
        "se_median": groups.groups[t].se_median,
        "mean_ses": groups.groups[t].mean,
        "flagged_small": groups.groups[t].flagged_small,
    } for t in groups.labels()]
    return {
        "json": {
            "n_titles": len(usable),
            "n_titles_flagged_small": len(groups.labels()) - len(usable),
            "n_users_matched": len(assignment),
            "ambiguous_users": matches.ambiguous,
            "dropped_titles_below_min_matches": matches.dropped_titles,
            "rho_median_ses_salary": rho_salary.as_dict(),
            "rho_median_ses_class": rho_class.as_dict(),
        },
        "rows": rows,
    }


def _analysis_audience(run: Run) -> dict:
    path = run.cfg.validate.get("audience")
    if not path:
        raise ConfigError("audience analysis needs validate.audience")
    scores = _scores(run, "brand").as_dict()
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh, delimiter=run.cfg.delimiter)
        header = next(reader)
        columns = header[1:]
        ids, values = [], []
        for row in reader:
            if row:
                ids.append(row[0])
                values.append([float(v) for v in row[1:]])
    values = np.array(values)
    shared = [i for i, t in enumerate(ids) if t in scores]
    ses = np.array([scores[ids[i]] for i in shared])
    rows = []
    for c, name in enumerate(columns):
        result = stats.spearman(ses, values[shared, c])
        rows.append({"column": name, **result.as_dict()})
    return {
        "json": {"n_brands_shared": len(shared), "correlations": rows},
        "rows": rows,
    }


def _analysis_groups(run: Run) -> dict:
    cfg = run.cfg
    path = cfg.validate.get("groups")
    if not path:
        raise ConfigError("groups analysis needs validate.groups")
    kind = cfg.validate.get("groups_kind", "user")
    scores = _scores(run, kind).as_dict()
    assignment = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh, delimiter=cfg.delimiter)
        next(reader)
        for row in reader:
            if row:
                assignment[row[0]] = row[1]
    group_stats = stats.group_median_se(
        scores, assignment,
        n_boot=int(cfg.validate.get("bootstrap_b", 1000)), seed=cfg.seed,
        small_group_floor=int(cfg.validate.get("small_group_floor", 10)))
    by_label = {}
    for entity, label in assignment.items():
        by_label.setdefault(label, []).append(scores[entity])
    testable = {lab: v for lab, v in by_label.items() if len(v) >= 2}
    anova = (stats.one_way_anova(list(testable.values()))
             if len(testable) >= 2 else None)
    pairwise = []
    labels = sorted(testable)
    for i, a in enumerate(labels):
        for b in labels[i + 1:]:
            res = stats.welch_t(testable[a], testable[b])
            pairwise.append({"group_a": a, "group_b": b, "t": res.t,
                             "df": res.df, "p_value": res.p_value,
                             "degenerate": res.degenerate})
    rows = [{
        "group": lab,
        "n": group_stats.groups[lab].n,
        "median": group_stats.groups[lab].median,
        "se_median": group_stats.groups[lab].se_median,
        "mean": group_stats.groups[lab].mean,
    } for lab in group_stats.labels()]
    return {
        "json": {
            "anova": None if anova is None else {
                "F": anova.f, "df1": anova.df1, "df2": anova.df2,
                "p_value": anova.p_value},
            "pairwise_welch": pairwise,
            "groups": rows,
        },
        "rows": rows,
    }


def _analysis_recovery(run: Run) -> dict:
    cfg = run.cfg
    out = {}
    for kind, key in (("user", "users_truth"), ("brand", "brands_truth")):
        path = cfg.validate.get(key)
        if not path:
            continue
        truth = {}
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh, delimiter=cfg.delimiter)
            next(reader)
            for row in reader:
                if row:
                    truth[row[0]] = float(row[1])
        table = _scores(run, kind)
        have = table.as_dict()
        matched = [t for t in truth if t in have]
        coverage = len(matched) / max(len(truth), 1)
        result = stats.spearman([have[t] for t in matched],
                                [truth[t] for t in matched])
        out[kind] = {
            "abs_rho": abs(result.rho),
            "observed_sign": "+" if result.rho >= 0 else "-",
            "n": result.n,
            "p_value": result.p_value,
            "coverage": coverage,
        }
    if not out:
        raise ConfigError("recovery analysis needs validate.users_truth "
                          "and/or validate.brands_truth")
    return {"json": out, "rows": [{"kind": k, **v} for k, v in out.items()]}


_ANALYSIS_FNS = {
    "title-salary": _analysis_title_salary,
    "audience": _analysis_audience,
    "groups": _analysis_groups,
    "recovery": _analysis_recovery,
}


def stage_validate(run: Run) -> dict:
    analyses = run.cfg.validate.get("analyses", [])
    if not analyses:
        raise ConfigError("no analyses configured (validate.analyses)")
    vdir = run.out / "validation"
    vdir.mkdir(parents=True, exist_ok=True)
    record = {}
    for name in analyses:
        result = _ANALYSIS_FNS[name](run)
        _write_json(vdir / f"{name}.json", result["json"])
        rows = result["rows"]
        with open(vdir / f"{name}.csv", "w", newline="",
                  encoding="utf-8") as fh:
            if rows:
                writer = csv.DictWriter(fh, fieldnames=list(rows[0]))
                writer.writeheader()
                writer.writerows(rows)
        record[name] = {"rows": len(rows)}
    return record


def stage_synth(run: Run) -> dict:
    cfg = run.cfg
    raw = dict(cfg.synth or {})
    raw.setdefault("seed", cfg.seed)
    params = synth.SynthParams.from_dict(raw)
    edges, catalog, profiles, truth = synth.generate(params)
    sdir = run.out / "synth"
    sdir.mkdir(parents=True, exist_ok=True)
    write_brands_csv(catalog, sdir / "brands.csv", cfg.delimiter)
    write_edges_csv(edges, sdir / "edges.csv", cfg.delimiter)
    write_users_csv(profiles, sdir / "users.csv", cfg.delimiter)
    with open(sdir / "users_truth.csv", "w", encoding="utf-8") as fh:
        fh.write("entity_id,latent\n")
        for token, value in zip(truth.user_ids, truth.user_ses):
            fh.write(f"{token},{value:.17g}\n")
    with open(sdir / "brands_truth.csv", "w", encoding="utf-8") as fh:
        fh.write("entity_id,latent\n")
        for token, value in zip(truth.brand_ids, truth.brand_ses):
            fh.write(f"{token},{value:.17g}\n")
    with open(sdir / "lexicon.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["title", "class", "mean_salary_usd",
                         "exclusion_patterns"])
        for entry in synth.PLANTED_TITLES:
            writer.writerow([entry.title, entry.occupational_class,
                             entry.mean_annual_salary,
                             ";".join(entry.exclusion_patterns)])
    return {
        "n_users": params.n_users,
        "n_brands": params.n_brands,
        "n_edges": edges.n_edges,
        "n_planted_titles": len(truth.planted_titles),
        "resampled_users": truth.n_resampled_users,
        "forced_links": truth.n_forced_links,
        "dir": str(sdir),
    }


_STAGE_FNS = {
    "ingest": stage_ingest,
    "filter": stage_filter,
    "fit": stage_fit,
    "project": stage_project,
    "score": stage_score,
    "validate": stage_validate,
    "synth": stage_synth,
}


def run_stages(cfg: PipelineConfig, stages) -> dict:
    """Run the named stages in order and write the run manifest.

    On a stage failure, an ``error.json`` with the failing stage and
    error type is written before the exception propagates.
    """
    run = Run(cfg)
    run.out.mkdir(parents=True, exist_ok=True)
    manifest = {
        "config": cfg.to_dict(),
        "config_hash": cfg.config_hash(),
        "seed": cfg.seed,
        "threads": cfg.threads,
        "versions": {
            "sescale": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
        },
        "stages": [],
    }
    for name in stages:
        if name not in _STAGE_FNS:
            raise ConfigError(f"unknown stage {name!r}")
        start = time.perf_counter()
        try:
            # Intra-stage parallelism (BLAS pools) follows --threads;
            # results are thread-count independent by construction.
            with threadpool_limits(limits=cfg.threads):
                record = _STAGE_FNS[name](run)
        except SescaleError as err:
            err.stage = name
            _write_json(run.out / "error.json", {
                "error": type(err).__name__,
                "message": str(err),
                "stage": name,
            })
            raise
        manifest["stages"].append({
            "name": name,
            "seconds": round(time.perf_counter() - start, 6),
            **{k: v for k, v in record.items() if k != "audit"},
        })
        log.info("stage %s done in %.2fs", name,
                 manifest["stages"][-1]["seconds"])
    _write_json(run.out / "manifest.json", manifest)
    return manifest
