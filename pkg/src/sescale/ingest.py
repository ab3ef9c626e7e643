"""Loading and validation of the three input tables.

All inputs are UTF-8 CSV with a header row (delimiter configurable,
comma by default):

* ``brands.csv``  -- brand_id,screen_name,domain,follower_count
* ``edges.csv``   -- user_id,brand_id
* ``users.csv``   -- user_id,statuses_count,followers_count,
  last_active(ISO-8601 date),location(country code or blank),description

String identifiers are interned into dense integer indices at load time.
Stores are immutable after loading and safe to share read-only across
threads.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path

import numpy as np

from .errors import (
    DuplicateBrandId,
    DuplicateUserId,
    EmptyInput,
    MalformedRow,
    UnknownDomain,
)

log = logging.getLogger(__name__)

#: The six brand domains; anything else is rejected at load time.
DOMAINS = (
    "supermarkets_department",
    "clothing_specialty",
    "chain_restaurants",
    "news",
    "sports",
    "tv_shows",
)
DOMAIN_CODE = {name: i for i, name in enumerate(DOMAINS)}

BRANDS_HEADER = ["brand_id", "screen_name", "domain", "follower_count"]
EDGES_HEADER = ["user_id", "brand_id"]
USERS_HEADER = [
    "user_id",
    "statuses_count",
    "followers_count",
    "last_active",
    "location",
    "description",
]


class IdMap:
    """Bidirectional token <-> dense index map (insertion order)."""

    __slots__ = ("tokens", "_index")

    def __init__(self, tokens=()):
        self.tokens: list[str] = list(tokens)
        self._index: dict[str, int] = {t: i for i, t in enumerate(self.tokens)}
        if len(self._index) != len(self.tokens):
            raise ValueError("duplicate tokens in IdMap")

    def add(self, token: str) -> int:
        idx = self._index.get(token)
        if idx is None:
            idx = len(self.tokens)
            self._index[token] = idx
            self.tokens.append(token)
        return idx

    def get(self, token: str):
        return self._index.get(token)

    def token(self, idx: int) -> str:
        return self.tokens[idx]

    def __contains__(self, token: str) -> bool:
        return token in self._index

    def __len__(self) -> int:
        return len(self.tokens)

    def __eq__(self, other) -> bool:
        return isinstance(other, IdMap) and self.tokens == other.tokens


@dataclass(frozen=True)
class BrandEntry:
    brand_id: str
    screen_name: str
    domain: str
    follower_count_at_selection: int


@dataclass
class BrandCatalog:
    """Brand identities and selection metadata; defines the brand index space."""

    entries: list[BrandEntry]
    ids: IdMap = field(init=False)
    domain_codes: np.ndarray = field(init=False)

    def __post_init__(self):
        self.ids = IdMap(e.brand_id for e in self.entries)
        self.domain_codes = np.array(
            [DOMAIN_CODE[e.domain] for e in self.entries], dtype=np.int8
        )

    def __len__(self) -> int:
        return len(self.entries)

    def entry(self, brand_id: str) -> BrandEntry:
        return self.entries[self.ids._index[brand_id]]


@dataclass(frozen=True)
class ProfileRecord:
    user_id: str
    statuses_count: int
    followers_count: int
    last_active: date | None
    location_resolved: str | None
    description: str


class UserProfileStore:
    """Column-oriented per-user profile data.

    ``last_active`` is held as ``datetime64[D]`` with NaT for missing
    dates; ``location`` uses the empty string for missing values.
    Rows rejected during loading are kept in ``row_errors``.
    """

    def __init__(self, ids, statuses, followers, last_active, location, description,
                 row_errors=None):
        self.ids: IdMap = ids
        self.statuses_count = np.asarray(statuses, dtype=np.int64)
        self.followers_count = np.asarray(followers, dtype=np.int64)
        self.last_active = np.asarray(last_active, dtype="datetime64[D]")
        self.location = np.asarray(location, dtype=object)
        self.description = list(description)
        self.row_errors: list[MalformedRow] = list(row_errors or [])

    def __len__(self) -> int:
        return len(self.ids)

    def __contains__(self, user_id: str) -> bool:
        return user_id in self.ids

    def get(self, user_id: str) -> ProfileRecord:
        i = self.ids._index[user_id]
        when = self.last_active[i]
        return ProfileRecord(
            user_id=user_id,
            statuses_count=int(self.statuses_count[i]),
            followers_count=int(self.followers_count[i]),
            last_active=None if np.isnat(when) else when.astype(date),
            location_resolved=self.location[i] or None,
            description=self.description[i],
        )

    def orphans(self, edges: "EdgeStore") -> list[str]:
        """Profiled users that never appear in the edge store."""
        return [t for t in self.ids.tokens if t not in edges.user_ids]


class EdgeStore:
    """Deduplicated (user, brand) follow pairs with dense index maps.

    Edges are stored as parallel index arrays sorted by (user, brand).
    ``brand_ids`` is the catalog's map, so every brand index resolves to
    a catalog entry; user indices are dense in first-seen order.
    """

    def __init__(self, user_ids, brand_ids, u, b,
                 duplicates_dropped=0, skipped_unknown_brand=0):
        self.user_ids: IdMap = user_ids
        self.brand_ids: IdMap = brand_ids
        self.u = np.asarray(u, dtype=np.int64)
        self.b = np.asarray(b, dtype=np.int64)
        self.duplicates_dropped = duplicates_dropped
        self.skipped_unknown_brand = skipped_unknown_brand

    @property
    def n_edges(self) -> int:
        return len(self.u)

    @property
    def n_users(self) -> int:
        return len(self.user_ids)

    @property
    def n_brands(self) -> int:
        return len(self.brand_ids)

    def edge_set(self) -> set[tuple[str, str]]:
        ut, bt = self.user_ids.tokens, self.brand_ids.tokens
        return {(ut[i], bt[j]) for i, j in zip(self.u.tolist(), self.b.tolist())}


def _open_rows(path, delimiter):
    fh = open(path, newline="", encoding="utf-8")
    return fh, csv.reader(fh, delimiter=delimiter)


def _check_header(row, expected, path):
    if row is None or [c.strip() for c in row] != expected:
        raise MalformedRow(1, f"{path}: expected header {','.join(expected)}")


def _nonneg_int(text, line, name):
    try:
        value = int(text)
    except ValueError:
        raise MalformedRow(line, f"{name} {text!r} is not an integer") from None
    if value < 0:
        raise MalformedRow(line, f"{name} {value} is negative")
    return value


def load_brand_catalog(path, delimiter: str = ",") -> BrandCatalog:
    """Load and validate the brand catalog.

    Raises :class:`DuplicateBrandId`, :class:`UnknownDomain` or
    :class:`MalformedRow` (with the offending line number) on bad rows.
    An empty catalog is allowed but logged as a warning.
    """
    fh, rows = _open_rows(path, delimiter)
    entries = []
    seen = set()
    with fh:
        _check_header(next(rows, None), BRANDS_HEADER, path)
        for line, row in enumerate(rows, start=2):
            if not row:
                continue
            if len(row) != 4:
                raise MalformedRow(line, f"expected 4 columns, got {len(row)}")
            brand_id, screen_name, domain, count = (c.strip() for c in row)
            if not brand_id:
                raise MalformedRow(line, "empty brand_id")
            if brand_id in seen:
                raise DuplicateBrandId(line, brand_id)
            if domain not in DOMAIN_CODE:
                raise UnknownDomain(line, domain)
            entries.append(BrandEntry(
                brand_id, screen_name, domain,
                _nonneg_int(count, line, "follower_count"),
            ))
            seen.add(brand_id)
    if not entries:
        log.warning("brand catalog %s contains no rows", path)
    return BrandCatalog(entries)


def load_edges(path, catalog: BrandCatalog, delimiter: str = ",") -> EdgeStore:
    """Load follow edges, interning user ids and deduplicating pairs.

    Edges naming brands absent from the catalog are skipped and counted
    in ``skipped_unknown_brand``. Raises :class:`EmptyInput` if no valid
    edge remains.
    """
    fh, rows = _open_rows(path, delimiter)
    user_ids = IdMap()
    brand_index = catalog.ids._index
    us, bs = [], []
    skipped = 0
    with fh:
        _check_header(next(rows, None), EDGES_HEADER, path)
        for line, row in enumerate(rows, start=2):
            if not row:
                continue
            if len(row) != 2:
                raise MalformedRow(line, f"expected 2 columns, got {len(row)}")
            user_token, brand_token = row[0].strip(), row[1].strip()
            if not user_token or not brand_token:
                raise MalformedRow(line, "empty user_id or brand_id")
            j = brand_index.get(brand_token)
            if j is None:
                skipped += 1
                continue
            us.append(user_ids.add(user_token))
            bs.append(j)
    if not us:
        raise EmptyInput(f"{path}: no valid edges")
    u = np.asarray(us, dtype=np.int64)
    b = np.asarray(bs, dtype=np.int64)
    key = np.unique(u * max(len(catalog), 1) + b)
    store = EdgeStore(
        user_ids, catalog.ids,
        key // max(len(catalog), 1), key % max(len(catalog), 1),
        duplicates_dropped=len(u) - len(key),
        skipped_unknown_brand=skipped,
    )
    return store


def load_user_profiles(path, delimiter: str = ",", strict: bool = False) -> UserProfileStore:
    """Load user profiles, one record per user.

    Malformed rows (negative counts, unparseable dates, wrong column
    count) are skipped and reported in ``row_errors`` with their line
    numbers; with ``strict=True`` the first one raises instead.
    Duplicate user ids always raise :class:`DuplicateUserId`. Missing
    optional fields (location, last_active, description) default to
    null/empty.
    """
    fh, rows = _open_rows(path, delimiter)
    ids = IdMap()
    statuses, followers, actives, locations, descriptions = [], [], [], [], []
    errors = []

    def bad(line, reason):
        err = MalformedRow(line, reason)
        if strict:
            raise err
        errors.append(err)

    with fh:
        _check_header(next(rows, None), USERS_HEADER, path)
        for line, row in enumerate(rows, start=2):
            if not row:
                continue
            if len(row) != 6:
                bad(line, f"expected 6 columns, got {len(row)}")
                continue
            user_id = row[0].strip()
            if not user_id:
                bad(line, "empty user_id")
                continue
            if user_id in ids:
                raise DuplicateUserId(line, user_id)
            try:
                n_statuses = _nonneg_int(row[1].strip(), line, "statuses_count")
                n_followers = _nonneg_int(row[2].strip(), line, "followers_count")
            except MalformedRow as err:
                if strict:
                    raise
                errors.append(err)
                continue
            active_text = row[3].strip()
            if active_text:
                try:
                    active = np.datetime64(date.fromisoformat(active_text), "D")
                except ValueError:
                    bad(line, f"last_active {active_text!r} is not an ISO date")
                    continue
            else:
                active = np.datetime64("NaT", "D")
            ids.add(user_id)
            statuses.append(n_statuses)
            followers.append(n_followers)
            actives.append(active)
            locations.append(row[4].strip().upper())
            descriptions.append(row[5])
    if errors:
        log.warning("%s: skipped %d malformed rows", path, len(errors))
    return UserProfileStore(ids, statuses, followers, actives, locations,
                            descriptions, row_errors=errors)


# --- writers (used by the synthetic generator and for round-trips) -----


def write_brands_csv(catalog: BrandCatalog, path, delimiter: str = ","):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, delimiter=delimiter)
        w.writerow(BRANDS_HEADER)
        for e in catalog.entries:
            w.writerow([e.brand_id, e.screen_name, e.domain,
                        e.follower_count_at_selection])


def write_edges_csv(edges: EdgeStore, path, delimiter: str = ","):
    ut, bt = edges.user_ids.tokens, edges.brand_ids.tokens
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, delimiter=delimiter)
        w.writerow(EDGES_HEADER)
        for i, j in zip(edges.u.tolist(), edges.b.tolist()):
            w.writerow([ut[i], bt[j]])


def write_users_csv(profiles: UserProfileStore, path, delimiter: str = ","):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, delimiter=delimiter)
        w.writerow(USERS_HEADER)
        for i, token in enumerate(profiles.ids.tokens):
            when = profiles.last_active[i]
            w.writerow([
                token,
                int(profiles.statuses_count[i]),
                int(profiles.followers_count[i]),
                "" if np.isnat(when) else str(when),
                profiles.location[i],
                profiles.description[i],
            ])


def ensure_parent(path):
    Path(path).parent.mkdir(parents=True, exist_ok=True)
