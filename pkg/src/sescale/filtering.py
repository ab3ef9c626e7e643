"""The multi-stage user/brand filtering cascade.

Stage order is fixed: brand-count -> activity (statuses, followers,
recency) -> location -> brand prune -> re-select. A user failing several
criteria is attributed to the earliest failing stage, so the per-stage
exclusion tallies partition the input exactly.

Users with a blank location are retained under a country restriction:
exclusion happens only on positive non-matching evidence. Activity
criteria are inclusion-based, so a user with no profile (or no
last-active date) fails them.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict
from datetime import date

import numpy as np

from .errors import EmptyResult, InvalidParameter
from .ingest import BrandCatalog, EdgeStore, IdMap, UserProfileStore


@dataclass
class FilterCriteria:
    min_brands_per_user: int = 5
    min_statuses: int = 100
    min_followers: int = 25
    active_since: date = date(2020, 1, 1)
    restrict_country: str | None = "US"
    min_post_filter_brand_followers: int = 2
    min_informative_followers: int = 1000

    def validate(self):
        for name in ("min_brands_per_user", "min_statuses", "min_followers",
                     "min_post_filter_brand_followers", "min_informative_followers"):
            if getattr(self, name) < 0:
                raise InvalidParameter(f"{name} must be >= 0")
        if not isinstance(self.active_since, date):
            raise InvalidParameter("active_since must be a date")

    def to_dict(self) -> dict:
        out = asdict(self)
        out["active_since"] = self.active_since.isoformat()
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "FilterCriteria":
        data = dict(data)
        if "active_since" in data and isinstance(data["active_since"], str):
            data["active_since"] = date.fromisoformat(data["active_since"])
        unknown = set(data) - {f.name for f in cls.__dataclass_fields__.values()}
        if unknown:
            raise InvalidParameter(f"unknown criteria fields: {sorted(unknown)}")
        crit = cls(**data)
        crit.validate()
        return crit


@dataclass
class FilteredDataset:
    """Edges restricted to surviving users/brands, plus the audit trail.

    Index arrays keep the original ingest index spaces so catalog and
    profile lookups stay valid.
    """

    u: np.ndarray                 # edge user indices (original space)
    b: np.ndarray                 # edge brand indices (catalog space)
    user_ids: IdMap
    brand_ids: IdMap
    users: np.ndarray             # sorted surviving user indices
    brands: np.ndarray            # sorted surviving brand indices
    audit: dict = field(default_factory=dict)

    @property
    def n_edges(self) -> int:
        return len(self.u)

    def user_tokens(self, idx) -> list[str]:
        return [self.user_ids.tokens[i] for i in np.asarray(idx)]

    def brand_tokens(self, idx) -> list[str]:
        return [self.brand_ids.tokens[i] for i in np.asarray(idx)]


def _restrict(u, b, user_alive):
    keep = user_alive[u]
    return u[keep], b[keep]


def filter_users(edges: EdgeStore, profiles: UserProfileStore,
                 criteria: FilterCriteria) -> FilteredDataset:
    """Apply the per-user criteria, attributing each exclusion to its first
    failing stage. Raises :class:`EmptyResult` if nobody survives."""
    criteria.validate()
    n_users = edges.n_users
    degree = np.bincount(edges.u, minlength=n_users)

    # Align profile columns to the edge store's user indexing.
    p_index = profiles.ids._index
    rows = np.array([p_index.get(t, -1) for t in edges.user_ids.tokens], dtype=np.int64)
    has_profile = rows >= 0
    if len(profiles) == 0:
        statuses = followers = np.zeros(n_users, dtype=np.int64)
        active = np.full(n_users, np.datetime64("NaT", "D"))
        location = np.full(n_users, "", dtype=object).astype(str)
    else:
        safe = np.where(has_profile, rows, 0)
        statuses = profiles.statuses_count[safe]
        followers = profiles.followers_count[safe]
        active = profiles.last_active[safe]
        location = profiles.location[safe].astype(str)

    alive = np.ones(n_users, dtype=bool)
    excluded: dict[str, int] = {}

    def stage(name, fails):
        nonlocal alive
        fails = fails & alive
        excluded[name] = int(fails.sum())
        alive &= ~fails

    stage("brand_count", degree < criteria.min_brands_per_user)
    stage("missing_profile", ~has_profile)
    stage("statuses", statuses < criteria.min_statuses)
    stage("followers", followers < criteria.min_followers)
    # NaT compares False, so a missing date fails the recency check.
    stage("recency", ~(active >= np.datetime64(criteria.active_since, "D")))
    if criteria.restrict_country:
        code = criteria.restrict_country.upper()
        stage("country", (location != "") & (location != code))

    if not alive.any():
        raise EmptyResult("users", "no user passes the filter criteria")

    u, b = _restrict(edges.u, edges.b, alive)
    audit = {
        "filter_users": {
            "users_in": n_users,
            "users_out": int(alive.sum()),
            "excluded": excluded,
            "edges_in": edges.n_edges,
            "edges_out": int(len(u)),
            "brands_in": int(len(np.unique(edges.b))),
            "brands_out": int(len(np.unique(b))),
            "orphan_profiles": len(profiles) - int(has_profile.sum()),
        }
    }
    return FilteredDataset(
        u=u, b=b,
        user_ids=edges.user_ids, brand_ids=edges.brand_ids,
        users=np.flatnonzero(alive), brands=np.unique(b),
        audit=audit,
    )


def prune_brands_and_reselect(dataset: FilteredDataset, criteria: FilterCriteria,
                              single_pass: bool = False) -> FilteredDataset:
    """Drop brands below the post-filter follower floor, re-check users
    against the brand-count floor, and iterate to a fixed point.

    ``single_pass=True`` performs exactly one prune + re-select round.
    Raises :class:`EmptyResult` if the cascade empties the matrix.
    """
    criteria.validate()
    u, b = dataset.u, dataset.b
    n_users = len(dataset.user_ids)
    n_brands = len(dataset.brand_ids)
    brands_removed = users_removed = iterations = 0

    while True:
        iterations += 1
        changed = False

        brand_count = np.bincount(b, minlength=n_brands)
        present = np.zeros(n_brands, dtype=bool)
        present[b] = True
        drop_brand = present & (brand_count < criteria.min_post_filter_brand_followers)
        if drop_brand.any():
            changed = True
            brands_removed += int(drop_brand.sum())
            keep = ~drop_brand[b]
            u, b = u[keep], b[keep]

        user_count = np.bincount(u, minlength=n_users)
        present_u = np.zeros(n_users, dtype=bool)
        present_u[u] = True
        drop_user = present_u & (user_count < criteria.min_brands_per_user)
        if drop_user.any():
            changed = True
            users_removed += int(drop_user.sum())
            keep = ~drop_user[u]
            u, b = u[keep], b[keep]

        if single_pass or not changed:
            break

    if len(u) == 0:
        raise EmptyResult("matrix", "prune cascade removed every edge")

    audit = dict(dataset.audit)
    audit["prune_brands"] = {
        "iterations": iterations,
        "brands_removed": brands_removed,
        "users_removed": users_removed,
        "edges_in": dataset.n_edges,
        "edges_out": int(len(u)),
        "single_pass": single_pass,
    }
    return FilteredDataset(
        u=u, b=b,
        user_ids=dataset.user_ids, brand_ids=dataset.brand_ids,
        users=np.unique(u), brands=np.unique(b),
        audit=audit,
    )


def select_informative(dataset: FilteredDataset, catalog: BrandCatalog,
                       criteria: FilterCriteria) -> tuple[np.ndarray, np.ndarray]:
    """Users covering all six domains and brands those users follow enough.

    Returns sorted index arrays (original index spaces). A brand needs at
    least ``max(1, min_informative_followers)`` informative followers: a
    zero-follower column could never enter the estimation matrix.
    """
    criteria.validate()
    n_users = len(dataset.user_ids)
    domain_bits = (1 << catalog.domain_codes[dataset.b]).astype(np.uint8)
    cover = np.zeros(n_users, dtype=np.uint8)
    np.bitwise_or.at(cover, dataset.u, domain_bits)
    informative_users = np.flatnonzero(cover == 0b111111)
    if len(informative_users) == 0:
        raise EmptyResult("informative_users", "no user covers all six domains")

    is_informative = np.zeros(n_users, dtype=bool)
    is_informative[informative_users] = True
    counts = np.bincount(dataset.b[is_informative[dataset.u]],
                         minlength=len(dataset.brand_ids))
    floor = max(1, criteria.min_informative_followers)
    informative_brands = np.flatnonzero(counts >= floor)
    if len(informative_brands) == 0:
        raise EmptyResult(
            "informative_brands",
            f"no brand has {floor} informative followers",
        )

    dataset.audit["informative"] = {
        "informative_users": int(len(informative_users)),
        "informative_brands": int(len(informative_brands)),
        "min_informative_followers": floor,
    }
    return informative_users, informative_brands
