"""Acceptance gate: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -s`` to see the per-criterion
lines as they complete. The suite is self-contained and seeded; the
heaviest case (criterion 9) generates and fits a 1,000,000 x 300 matrix.
"""

import csv
import json
import resource
import time
from datetime import date

import numpy as np
import pytest
from scipy import stats as sps

from sescale.ca import SvdParams, fit_ca, project_columns, project_rows
from sescale.filtering import (
    FilterCriteria,
    filter_users,
    prune_brands_and_reselect,
)
from sescale.stats import one_way_anova, spearman, welch_t
from sescale.synth import SynthParams, generate, run_recovery_benchmark
from sescale import ca
from sescale.cli import main as cli_main

from conftest import as_matrix, random_binary_matrix, two_block_matrix
from oracles import (
    align_sign,
    brute_force_prune,
    brute_force_user_filter,
    dense_ca,
)


def report(num, desc, ok, detail=""):
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {num:2d}: {desc}"
    if detail:
        line += f"  ({detail})"
    print(line, flush=True)
    assert ok, line


@pytest.fixture(scope="module")
def benchmark():
    start = time.perf_counter()
    result = run_recovery_benchmark()
    result["wall"] = time.perf_counter() - start
    return result


def test_criterion_01_dense_oracle_equivalence():
    start = time.perf_counter()
    worst = 0.0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        n_rows = int(rng.integers(40, 501))
        n_cols = int(rng.integers(15, 101))
        dense = random_binary_matrix(rng, n_rows, n_cols, 0.1)
        model = fit_ca(as_matrix(dense), 3, SvdParams(seed=seed))
        oracle = dense_ca(dense)
        worst = max(worst,
                    float(np.abs(model.singular_values - oracle["alpha"][:3]).max()))
        for k in range(3):
            gr = align_sign(model.row_coords[:, k], oracle["Gr"][:, k])
            gc = align_sign(model.col_coords[:, k], oracle["Gc"][:, k])
            worst = max(worst,
                        float(np.abs(gr - oracle["Gr"][:, k]).max()),
                        float(np.abs(gc - oracle["Gc"][:, k]).max()))
    elapsed = time.perf_counter() - start
    report(1, "dense-oracle equivalence on 20 seeded matrices",
           worst < 1e-8 and elapsed < 30.0,
           f"max deviation {worst:.2e}, {elapsed:.1f}s")


def test_criterion_02_transition_identity():
    rng = np.random.default_rng(42)
    dense = random_binary_matrix(rng, 200, 50, 0.1)
    mat = as_matrix(dense)
    model = fit_ca(mat, 3)
    cols, _ = project_columns(model, mat.csr)
    rows, _ = project_rows(model, mat.csr)
    dev = max(
        float(np.abs(cols - model.col_coords * model.singular_values).max()),
        float(np.abs(rows - model.row_coords * model.singular_values).max()),
    )
    report(2, "transition identity for every active row/column (k=1..3)",
           dev < 1e-10, f"max deviation {dev:.2e}")


def test_criterion_03_perfect_association():
    model = fit_ca(two_block_matrix(), 3)
    d1 = model.row_coords[:, 0]
    ok = (abs(model.singular_values[0] - 1.0) < 1e-10
          and np.sign(d1[0]) == np.sign(d1[1])
          and np.sign(d1[2]) == np.sign(d1[3])
          and np.sign(d1[0]) == -np.sign(d1[2])
          and np.sign(model.col_coords[0, 0]) == -np.sign(model.col_coords[2, 0]))
    report(3, "two-block fixture: alpha_1 = 1 and two-group sign split",
           ok, f"alpha_1 = {model.singular_values[0]:.12f}")


def test_criterion_04_standardization(benchmark):
    devs = []
    medians = {}
    for kind in ("user", "brand"):
        table = benchmark[f"{kind}_scores"]
        devs.append(abs(float(table.ses.mean())))
        devs.append(abs(float(table.ses.std(ddof=0)) - 1.0))
        medians[kind] = float(np.median(table.ses))
    report(4, "user and brand scores mean 0, sd 1 (1e-9)",
           max(devs) < 1e-9,
           f"max dev {max(devs):.1e}; medians user {medians['user']:+.3f}, "
           f"brand {medians['brand']:+.3f}")


def test_criterion_05_synthetic_recovery(benchmark):
    user_rho = benchmark["user"].rho
    brand_rho = benchmark["brand"].rho
    null = run_recovery_benchmark(SynthParams(proximity_weight=0.0))
    ok = (user_rho >= 0.9 and brand_rho >= 0.95
          and benchmark["wall"] < 120.0 and null["user"].rho < 0.1)
    report(5, "recovery |rho| >= 0.9 (users) / 0.95 (brands); null < 0.1",
           ok,
           f"user {user_rho:.3f}, brand {brand_rho:.3f}, "
           f"null {null['user'].rho:.3f}, {benchmark['wall']:.1f}s")


def test_criterion_06_mass_invariance(benchmark):
    base_rho = benchmark["user"].rho
    pop = run_recovery_benchmark(SynthParams(popularity_spread=1.0))
    act = run_recovery_benchmark(SynthParams(activity_spread=1.0))
    shift_pop = abs(pop["user"].rho - base_rho)
    shift_act = abs(act["user"].rho - base_rho)

    # identical follow profiles must land on identical raw coordinates
    model = benchmark["model"]
    j = len(model.col_ids)
    rng = np.random.default_rng(0)
    profile = (rng.random(j) < 0.1).astype(float)
    profile[rng.integers(j)] = 1.0
    twice = np.vstack([profile, profile])
    coords, _ = project_rows(model, twice)
    exact_dup = bool(np.array_equal(coords[0], coords[1]))

    report(6, "popularity/activity doubling shifts user rho < 0.02; "
              "duplicate profiles identical",
           shift_pop < 0.02 and shift_act < 0.02 and exact_dup,
           f"shifts {shift_pop:.4f}/{shift_act:.4f}, dup exact={exact_dup}")


def test_criterion_07_statistics_oracles():
    rng = np.random.default_rng(1234)
    worst = 0.0
    n_fixtures = 0
    for _ in range(400):  # spearman, with ties
        n = int(rng.integers(4, 60))
        x = rng.integers(0, max(2, n // 2), size=n).astype(float)
        y = x * rng.standard_normal() + rng.standard_normal(n)
        if len(set(x.tolist())) < 2 or len(set(y.tolist())) < 2:
            continue
        mine = spearman(x, y)
        ref_rho, ref_p = sps.spearmanr(x, y)
        worst = max(worst, abs(mine.rho - ref_rho))
        if abs(mine.rho) < 1.0:
            worst = max(worst, abs(mine.p_value - ref_p))
        n_fixtures += 1
    for _ in range(300):  # welch
        a = rng.standard_normal(int(rng.integers(2, 40))) * rng.uniform(0.3, 3)
        b = rng.standard_normal(int(rng.integers(2, 40))) + rng.uniform(-1, 1)
        mine = welch_t(a, b)
        ref = sps.ttest_ind(a, b, equal_var=False)
        worst = max(worst, abs(mine.t - ref.statistic),
                    abs(mine.p_value - ref.pvalue))
        n_fixtures += 1
    for _ in range(300):  # anova
        k = int(rng.integers(2, 6))
        groups = [rng.standard_normal(int(rng.integers(2, 25)))
                  + rng.uniform(-1, 1) for _ in range(k)]
        mine = one_way_anova(groups)
        ref = sps.f_oneway(*groups)
        worst = max(worst, abs(mine.f - ref.statistic),
                    abs(mine.p_value - ref.pvalue))
        n_fixtures += 1

    tie = spearman([1, 2, 2, 3], [1, 3, 2, 4])
    tie_exact = tie.rho == 4.5 / np.sqrt(22.5)
    report(7, "spearman/welch/anova vs reference on random fixtures (1e-10)",
           worst < 1e-10 and tie_exact and n_fixtures >= 990,
           f"{n_fixtures} fixtures, worst {worst:.1e}, "
           f"tie example exact={tie_exact}")


@pytest.fixture(scope="module")
def cli_run(tmp_path_factory):
    """Full CLI pipeline on 20k planted-title synthetic data."""
    root = tmp_path_factory.mktemp("acceptance_cli")
    gen_cfg = root / "gen.json"
    gen_cfg.write_text(json.dumps({
        "seed": 7, "out": str(root / "gen"),
        "synth": {"n_users": 20000, "n_brands": 150, "base_rate": -1.6,
                  "proximity_weight": 1.5, "popularity_spread": 0.5,
                  "activity_spread": 0.5, "plant_titles_fraction": 0.5},
    }))
    assert cli_main(["synth", "--config", str(gen_cfg)]) == 0
    sdir = root / "gen" / "synth"
    out = root / "run"
    cfg = root / "pipe.json"
    cfg.write_text(json.dumps({
        "seed": 7, "out": str(out),
        "brands": str(sdir / "brands.csv"),
        "edges": str(sdir / "edges.csv"),
        "users": str(sdir / "users.csv"),
        "k_dims": 3,
        "criteria": {"min_brands_per_user": 3, "min_statuses": 100,
                     "min_followers": 25, "active_since": "2020-01-01",
                     "restrict_country": "US",
                     "min_post_filter_brand_followers": 2,
                     "min_informative_followers": 100},
        "validate": {"analyses": ["title-salary"],
                     "lexicon": str(sdir / "lexicon.csv"),
                     "min_title_matches": 50},
    }))
    assert cli_main(["pipeline", "--config", str(cfg)]) == 0
    return cfg, out


def test_criterion_08_validation_signatures(cli_run):
    _, out = cli_run
    rep = json.loads((out / "validation" / "title-salary.json").read_text())
    rho_salary = rep["rho_median_ses_salary"]["rho"]
    rho_class = rep["rho_median_ses_class"]["rho"]
    ok = rho_salary >= 0.5 and rho_class <= -0.5
    report(8, "title analysis sign pattern: +salary, -class, |rho| >= 0.5",
           ok, f"salary {rho_salary:+.3f}, class {rho_class:+.3f}, "
               f"{rep['n_titles']} titles over {rep['n_users_matched']} users")


def test_criterion_09_scale_and_memory():
    start = time.perf_counter()
    params = SynthParams(n_users=1_000_000, n_brands=300, base_rate=-2.6,
                         seed=99)
    edges, _, _, _ = generate(params)
    follows_per_user = edges.n_edges / params.n_users
    counts = np.bincount(edges.b, minlength=300)
    kept = np.flatnonzero(counts > 0)
    lookup = np.full(300, -1, dtype=np.int64)
    lookup[kept] = np.arange(len(kept))
    mat = ca.matrix_from_edges(
        edges.u, lookup[edges.b], edges.user_ids.tokens,
        [edges.brand_ids.tokens[j] for j in kept])
    model = fit_ca(mat, 3, SvdParams(seed=99))
    coords, _ = project_rows(model, mat.csr)
    elapsed = time.perf_counter() - start
    peak_gb = resource.getrusage(resource.RUSAGE_SELF).ru_maxrss / 1024 / 1024
    ok = (elapsed < 300.0 and peak_gb < 4.0 and 8.0 <= follows_per_user <= 12.0
          and np.isfinite(coords).all() and coords.shape == (1_000_000, 3))
    report(9, "1M x 300 fit in < 5 min and < 4 GB",
           ok, f"{elapsed:.0f}s, peak {peak_gb:.2f} GB, "
               f"{follows_per_user:.1f} follows/user")


def test_criterion_10_filter_cascade_oracle():
    # 10,000 users with adversarial chains: fragile brands that collapse
    # once their marginal followers drop out, plus boundary attributes.
    rng = np.random.default_rng(2024)
    criteria = FilterCriteria(min_brands_per_user=5, min_statuses=100,
                              min_followers=25, active_since=date(2020, 1, 1),
                              restrict_country="US",
                              min_post_filter_brand_followers=3,
                              min_informative_followers=5)
    n_brands = 30
    specs = {}
    for i in range(10_000):
        uid = f"u{i:05d}"
        kind = rng.random()
        if kind < 0.25:  # chain users: 4 solid brands + 1 fragile brand
            brands = set(rng.choice(12, size=4, replace=False).tolist())
            brands.add(int(12 + rng.integers(18)))
        elif kind < 0.5:  # heavy users
            brands = set(rng.choice(n_brands, size=int(rng.integers(5, 12)),
                                    replace=False).tolist())
        else:  # random, possibly below the brand floor
            brands = set(rng.choice(n_brands, size=int(rng.integers(1, 8)),
                                    replace=False).tolist())
        specs[uid] = {
            "brands": brands,
            "statuses": int(rng.choice([0, 99, 100, 101, 1000])),
            "followers": int(rng.choice([0, 24, 25, 26, 500])),
            "last_active": rng.choice(
                ["2019-12-31", "2020-01-01", "2020-04-30", None]),
            "location": str(rng.choice(["US", "", "GB"])),
            "has_profile": bool(rng.random() > 0.05),
        }

    from test_filter import build_stores
    edges, _, profiles = build_stores(
        {u: {**s, "last_active": s["last_active"]} for u, s in specs.items()},
        n_brands=n_brands)

    oracle_users = {
        uid: {**spec,
              "last_active": (date.fromisoformat(spec["last_active"])
                              if spec["last_active"] else None)}
        for uid, spec in specs.items()
    }
    expected_survivors, expected_tallies = brute_force_user_filter(
        oracle_users, criteria)
    ds = filter_users(edges, profiles, criteria)
    got_survivors = set(ds.user_tokens(ds.users))
    audit = ds.audit["filter_users"]
    conserved = (audit["users_in"]
                 == audit["users_out"] + sum(audit["excluded"].values()))

    raw_edges = {(u, b) for u in expected_survivors
                 for b in specs[u]["brands"]}
    expected_final = brute_force_prune(
        raw_edges, criteria.min_post_filter_brand_followers,
        criteria.min_brands_per_user)
    pruned = prune_brands_and_reselect(ds, criteria)
    got_final = {(pruned.user_ids.tokens[u], int(b))
                 for u, b in zip(pruned.u, pruned.b)}

    ok = (got_survivors == expected_survivors
          and audit["excluded"] == expected_tallies
          and got_final == expected_final and conserved)
    report(10, "10k-user cascade equals brute-force oracle; audit conserves",
           ok, f"{len(got_survivors)} survivors, "
               f"{len(got_final)} edges after prune")


def test_criterion_11_pipeline_determinism(cli_run):
    cfg, out = cli_run
    first = {name: (out / "score" / name).read_bytes()
             for name in ("users_ses.csv", "brands_ses.csv")}
    assert cli_main(["pipeline", "--config", str(cfg)]) == 0
    same = all((out / "score" / name).read_bytes() == blob
               for name, blob in first.items())
    report(11, "re-running the pipeline yields byte-identical score CSVs",
           same, "users_ses.csv, brands_ses.csv")
