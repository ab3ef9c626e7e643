import numpy as np
import pytest
from scipy import special

from sescale.errors import DegenerateParams, InsufficientCoverage, InvalidParameter
from sescale.ca import ScoreTable
from sescale.ingest import load_brand_catalog, load_edges, load_user_profiles
from sescale.stats import match_job_titles
from sescale.synth import (
    SynthParams,
    evaluate_recovery,
    generate,
    planted_lexicon,
)

SMALL = SynthParams(n_users=800, n_brands=30, base_rate=-1.2, seed=21)


def own_probs(params, truth):
    # Independent recomputation of the follow probabilities from the truth.
    d = truth.user_ses[:, None] - truth.brand_ses[None, :]
    prox = d * d if params.kernel == "quadratic" else np.abs(d)
    eta = (params.base_rate + truth.user_activity[:, None]
           + truth.brand_popularity[None, :] - params.proximity_weight * prox)
    return 1.0 / (1.0 + np.exp(-eta))


class TestGenerate:
    def test_deterministic(self):
        e1, c1, p1, t1 = generate(SMALL)
        e2, c2, p2, t2 = generate(SMALL)
        assert np.array_equal(e1.u, e2.u)
        assert np.array_equal(e1.b, e2.b)
        assert np.array_equal(t1.user_ses, t2.user_ses)
        assert p1.description == p2.description
        assert [x.follower_count_at_selection for x in c1.entries] == \
               [x.follower_count_at_selection for x in c2.entries]

    def test_every_user_follows_something(self):
        params = SynthParams(n_users=500, n_brands=20, base_rate=-2.0,
                             proximity_weight=1.5, seed=3)
        edges, _, _, truth = generate(params)
        assert len(np.unique(edges.u)) == params.n_users
        assert truth.n_resampled_users > 0  # the low base rate forces redraws

    def test_degenerate_params(self):
        with pytest.raises(DegenerateParams):
            generate(SynthParams(n_users=100, n_brands=10, base_rate=-12.0,
                                 proximity_weight=5.0, seed=1))

    def test_param_validation(self):
        with pytest.raises(InvalidParameter):
            SynthParams(n_users=5).validate()
        with pytest.raises(InvalidParameter):
            SynthParams(n_brands=4).validate()
        with pytest.raises(InvalidParameter):
            SynthParams(proximity_weight=-1.0).validate()
        with pytest.raises(InvalidParameter):
            SynthParams(kernel="cubic").validate()
        SynthParams(proximity_weight=0.0).validate()  # null model is legal

    def test_edge_count_matches_expectation(self):
        # Benchmark parameters: realized count within 5% of the summed
        # follow probabilities recomputed independently from the truth.
        params = SynthParams()  # 20k x 150, seed 7
        edges, _, _, truth = generate(params)
        expected = own_probs(params, truth).sum()
        assert abs(edges.n_edges - expected) / expected < 0.05

    def test_one_brand_per_domain(self):
        _, catalog, _, _ = generate(SMALL)
        assert len({e.domain for e in catalog.entries}) == 6

    def test_catalog_follower_counts_are_realized(self):
        edges, catalog, _, _ = generate(SMALL)
        counts = np.bincount(edges.b, minlength=len(catalog))
        assert [e.follower_count_at_selection for e in catalog.entries] == counts.tolist()

    def test_large_proximity_weight_bands_matrix(self):
        params = SynthParams(n_users=2000, n_brands=40, base_rate=0.0,
                             proximity_weight=20.0, popularity_spread=0.0,
                             activity_spread=0.0, seed=5)
        edges, _, _, truth = generate(params)
        gap = np.abs(truth.user_ses[edges.u] - truth.brand_ses[edges.b])
        assert np.mean(gap < 0.5) > 0.95

    def test_absolute_kernel(self):
        # High enough base rate that zero-follow redraws cannot bias the
        # realized count away from the unconditional expectation.
        params = SynthParams(n_users=500, n_brands=20, base_rate=-0.2,
                             kernel="absolute", seed=6)
        edges, _, _, truth = generate(params)
        expected = own_probs(params, truth).sum()
        assert abs(edges.n_edges - expected) / expected < 0.10

    def test_profiles_clear_default_activity_filters(self):
        _, _, profiles, _ = generate(SMALL)
        assert profiles.statuses_count.min() >= 100
        assert profiles.followers_count.min() >= 25
        assert (profiles.last_active >= np.datetime64("2020-01-01")).all()
        assert set(np.unique(profiles.location.astype(str))) <= {"", "US"}


class TestPlantedTitles:
    def test_planting_recorded_and_recoverable(self):
        params = SynthParams(n_users=3000, n_brands=30, base_rate=-1.2,
                             plant_titles_fraction=0.5, seed=9)
        _, _, profiles, truth = generate(params)
        assert len(truth.planted_titles) > 1000
        result = match_job_titles(profiles, planted_lexicon(), min_matches=1)
        # every planted description must be matched back to its title
        for uid, title in truth.planted_titles.items():
            assert result.assignment.get(uid) == title

    def test_planted_salary_tracks_latent_score(self):
        params = SynthParams(n_users=5000, n_brands=30, base_rate=-1.2,
                             plant_titles_fraction=1.0, seed=10)
        _, _, _, truth = generate(params)
        lex = planted_lexicon()
        salaries = np.array([lex.entries[truth.planted_titles[u]].mean_annual_salary
                             for u in truth.user_ids])
        corr = np.corrcoef(special.ndtr(truth.user_ses), salaries)[0, 1]
        assert corr > 0.7


class TestRecovery:
    def test_perfect_estimates(self):
        _, _, _, truth = generate(SMALL)
        table = ScoreTable("user", truth.user_ids, truth.user_ses,
                           truth.user_ses.copy(), {})
        r = evaluate_recovery(table, truth)
        assert r.rho == 1.0

    def test_sign_aligned(self):
        _, _, _, truth = generate(SMALL)
        table = ScoreTable("user", truth.user_ids, -truth.user_ses,
                           -truth.user_ses, {})
        r = evaluate_recovery(table, truth)
        assert r.rho == 1.0
        assert "-" in r.method

    def test_permuted_estimates_near_zero(self):
        _, _, _, truth = generate(SynthParams(n_users=20_000, n_brands=20,
                                              base_rate=-1.0, seed=31))
        rng = np.random.default_rng(0)
        shuffled = truth.user_ses[rng.permutation(len(truth.user_ses))]
        table = ScoreTable("user", truth.user_ids, shuffled, shuffled, {})
        assert evaluate_recovery(table, truth).rho < 0.05

    def test_insufficient_coverage(self):
        _, _, _, truth = generate(SMALL)
        few = truth.user_ids[:100]
        table = ScoreTable("user", few, truth.user_ses[:100],
                           truth.user_ses[:100], {})
        with pytest.raises(InsufficientCoverage):
            evaluate_recovery(table, truth)

    def test_recovery_degrades_as_proximity_weight_vanishes(self):
        from sescale.synth import run_recovery_benchmark

        rhos = []
        for weight in (1.5, 0.5, 0.15, 0.0):
            result = run_recovery_benchmark(SynthParams(
                n_users=8000, n_brands=60, base_rate=-1.6,
                proximity_weight=weight, seed=7))
            rhos.append(result["user"].rho)
        assert all(a >= b for a, b in zip(rhos, rhos[1:]))
        assert rhos[0] > 0.85
        assert rhos[-1] < 0.1


class TestEmittedCsvs:
    def test_roundtrip_through_ingest(self, tmp_path):
        from sescale.ingest import write_brands_csv, write_edges_csv, write_users_csv

        edges, catalog, profiles, _ = generate(SMALL)
        write_brands_csv(catalog, tmp_path / "brands.csv")
        write_edges_csv(edges, tmp_path / "edges.csv")
        write_users_csv(profiles, tmp_path / "users.csv")

        catalog2 = load_brand_catalog(tmp_path / "brands.csv")
        edges2 = load_edges(tmp_path / "edges.csv", catalog2)
        profiles2 = load_user_profiles(tmp_path / "users.csv")
        assert edges2.edge_set() == edges.edge_set()
        assert len(profiles2) == len(profiles)
        assert profiles2.row_errors == []
        assert [e.brand_id for e in catalog2.entries] == \
               [e.brand_id for e in catalog.entries]
