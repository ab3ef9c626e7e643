import logging

import numpy as np
import pytest

from sescale.errors import (
    DuplicateBrandId,
    DuplicateUserId,
    EmptyInput,
    MalformedRow,
    UnknownDomain,
)
from sescale.ingest import (
    DOMAINS,
    load_brand_catalog,
    load_edges,
    load_user_profiles,
    write_edges_csv,
)


def brand_row(i, domain=None):
    return [f"b{i:03d}", f"brand{i}", domain or DOMAINS[i % 6], 10000 + i]


class TestBrandCatalog:
    def test_full_catalog(self, make_brands):
        path = make_brands([brand_row(i) for i in range(339)])
        catalog = load_brand_catalog(path)
        assert len(catalog) == 339
        assert catalog.entry("b007").domain == DOMAINS[1]
        assert len(set(e.brand_id for e in catalog.entries)) == 339

    def test_empty_catalog_warns(self, make_brands, caplog):
        path = make_brands([])
        with caplog.at_level(logging.WARNING):
            catalog = load_brand_catalog(path)
        assert len(catalog) == 0
        assert any("no rows" in r.message for r in caplog.records)

    def test_unknown_domain_names_row(self, make_brands):
        rows = [brand_row(0), brand_row(1)]
        rows[1][2] = "music"
        path = make_brands(rows)
        with pytest.raises(UnknownDomain) as err:
            load_brand_catalog(path)
        assert err.value.line == 3
        assert err.value.domain == "music"

    def test_duplicate_brand_id(self, make_brands):
        path = make_brands([brand_row(0), brand_row(0)])
        with pytest.raises(DuplicateBrandId) as err:
            load_brand_catalog(path)
        assert err.value.brand_id == "b000"

    def test_malformed_row_reports_line(self, make_brands):
        path = make_brands([brand_row(0), ["b001", "brand1", DOMAINS[0]]])
        with pytest.raises(MalformedRow) as err:
            load_brand_catalog(path)
        assert err.value.line == 3

    def test_negative_follower_count(self, make_brands):
        row = brand_row(0)
        row[3] = -1
        with pytest.raises(MalformedRow):
            load_brand_catalog(make_brands([row]))

    def test_missing_header(self, tmp_path):
        path = tmp_path / "brands.csv"
        path.write_text("b0,brand0,news,10\n")
        with pytest.raises(MalformedRow) as err:
            load_brand_catalog(path)
        assert err.value.line == 1


class TestEdges:
    def test_dedup_tally(self, make_brands, make_edges):
        catalog = load_brand_catalog(make_brands([brand_row(i) for i in range(3)]))
        rows = [["u1", "b000"], ["u1", "b001"], ["u2", "b000"], ["u2", "b001"],
                ["u3", "b000"], ["u3", "b002"], ["u4", "b001"], ["u4", "b002"],
                ["u1", "b000"], ["u2", "b001"]]  # two exact duplicates
        store = load_edges(make_edges(rows), catalog)
        assert store.n_edges == 8
        assert store.duplicates_dropped == 2

    def test_unknown_brand_skipped(self, make_brands, make_edges):
        catalog = load_brand_catalog(make_brands([brand_row(0)]))
        store = load_edges(make_edges([["u1", "b000"], ["u1", "nope"]]), catalog)
        assert store.n_edges == 1
        assert store.skipped_unknown_brand == 1

    def test_fixture_counts_match_line_level_recount(self, make_brands, make_edges):
        # 1,000 distinct pairs over 50 users x 20 brands, checked against an
        # independent recount of the raw lines.
        rng = np.random.default_rng(5)
        pairs = set()
        while len(pairs) < 1000:
            pairs.add((int(rng.integers(50)), int(rng.integers(20))))
        rows = [[f"u{u}", f"b{b:03d}"] for u, b in sorted(pairs)]
        catalog = load_brand_catalog(make_brands([brand_row(i) for i in range(20)]))
        path = make_edges(rows)

        with open(path, encoding="utf-8") as fh:
            lines = fh.read().splitlines()[1:]
        expected_pairs = {tuple(line.split(",")) for line in lines}
        expected_users = {p[0] for p in expected_pairs}
        expected_brands = {p[1] for p in expected_pairs}

        store = load_edges(path, catalog)
        assert store.n_edges == len(expected_pairs) == 1000
        assert store.n_users == len(expected_users) == 50
        assert len(set(store.b.tolist())) == len(expected_brands) == 20
        assert store.edge_set() == expected_pairs

    def test_empty_input(self, make_brands, make_edges):
        catalog = load_brand_catalog(make_brands([brand_row(0)]))
        with pytest.raises(EmptyInput):
            load_edges(make_edges([["u1", "unknown"]]), catalog)

    def test_malformed_edge_row(self, make_brands, make_edges):
        catalog = load_brand_catalog(make_brands([brand_row(0)]))
        with pytest.raises(MalformedRow):
            load_edges(make_edges([["u1", "b000", "extra"]]), catalog)

    def test_user_indices_dense(self, make_brands, make_edges):
        catalog = load_brand_catalog(make_brands([brand_row(i) for i in range(4)]))
        rows = [["x", "b000"], ["y", "b001"], ["z", "b002"], ["x", "b003"]]
        store = load_edges(make_edges(rows), catalog)
        assert sorted(set(store.u.tolist())) == list(range(store.n_users))


def user_row(uid, statuses=200, followers=50, active="2020-03-01",
             location="US", description="hello"):
    return [uid, statuses, followers, active, location, description]


class TestProfiles:
    def test_negative_statuses_is_malformed(self, make_users):
        store = load_user_profiles(make_users([user_row("u1", statuses=-5)]))
        assert len(store) == 0
        assert len(store.row_errors) == 1
        assert store.row_errors[0].line == 2
        with pytest.raises(MalformedRow):
            load_user_profiles(make_users([user_row("u1", statuses=-5)]),
                               strict=True)

    def test_blank_location_is_null(self, make_users):
        store = load_user_profiles(make_users([user_row("u1", location="")]))
        assert store.get("u1").location_resolved is None

    def test_blank_date_is_null(self, make_users):
        store = load_user_profiles(make_users([user_row("u1", active="")]))
        assert store.get("u1").last_active is None

    def test_100_profiles_3_bad_dates(self, make_users):
        rows = [user_row(f"u{i}") for i in range(100)]
        bad_lines = {12, 47, 83}  # 0-based row positions
        for i in bad_lines:
            rows[i][3] = "not-a-date"
        store = load_user_profiles(make_users(rows))
        assert len(store) == 97
        assert len(store.row_errors) == 3
        # file line = row position + 2 (header is line 1)
        assert sorted(e.line for e in store.row_errors) == sorted(i + 2 for i in bad_lines)

    def test_duplicate_user_raises(self, make_users):
        with pytest.raises(DuplicateUserId):
            load_user_profiles(make_users([user_row("u1"), user_row("u1")]))

    def test_orphan_flagging(self, make_brands, make_edges, make_users):
        catalog = load_brand_catalog(make_brands([brand_row(0)]))
        edges = load_edges(make_edges([["u1", "b000"]]), catalog)
        profiles = load_user_profiles(make_users([user_row("u1"), user_row("u2")]))
        assert profiles.orphans(edges) == ["u2"]


class TestStoreProperties:
    def test_idempotent_load(self, make_brands, make_edges, make_users):
        bpath = make_brands([brand_row(i) for i in range(5)])
        epath = make_edges([["u1", "b000"], ["u1", "b001"], ["u2", "b002"]])
        upath = make_users([user_row("u1"), user_row("u2")])

        c1, c2 = load_brand_catalog(bpath), load_brand_catalog(bpath)
        assert c1.entries == c2.entries
        e1, e2 = load_edges(epath, c1), load_edges(epath, c1)
        assert e1.edge_set() == e2.edge_set()
        assert np.array_equal(e1.u, e2.u) and np.array_equal(e1.b, e2.b)
        p1, p2 = load_user_profiles(upath), load_user_profiles(upath)
        assert p1.ids == p2.ids
        assert np.array_equal(p1.statuses_count, p2.statuses_count)
        assert p1.description == p2.description

    def test_edge_roundtrip(self, tmp_path, make_brands, make_edges):
        catalog = load_brand_catalog(make_brands([brand_row(i) for i in range(4)]))
        rows = [["u1", "b000"], ["u2", "b001"], ["u1", "b003"], ["u3", "b002"]]
        store = load_edges(make_edges(rows), catalog)
        out = tmp_path / "exported.csv"
        write_edges_csv(store, out)
        reloaded = load_edges(out, catalog)
        assert reloaded.edge_set() == store.edge_set()
