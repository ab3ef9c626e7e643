"""Synthetic bipartite follow data with known latent scores.

Each user u and brand b carries a latent standard-normal score. A follow
is drawn as

    P(u follows b) = logistic(beta0 + a_u + q_b - beta1 * d(s_u, s_b))

where d is the squared (default) or absolute score distance, a_u is a
per-user activity offset and q_b a per-brand popularity offset. Users
who end up with zero follows are redrawn from a per-user stream, so
every user follows at least one brand and generation is reproducible
regardless of how work is batched.

Profiles are generated to clear the default activity filters, and a
fraction of descriptions can carry planted job titles whose salary rank
tracks the user's latent score, giving the validation battery a known
monotone signal to recover.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from . import ca
from .errors import DegenerateParams, InsufficientCoverage, InvalidParameter
from .ingest import (
    DOMAINS,
    BrandCatalog,
    BrandEntry,
    EdgeStore,
    IdMap,
    UserProfileStore,
)
from .stats import CorrelationResult, TitleEntry, TitleLexicon, spearman

_BLOCK = 16384
# Stream tags keep per-purpose random streams independent of each other.
_EDGE_STREAM, _RESAMPLE_STREAM, _PROFILE_STREAM, _BRAND_STREAM, _TITLE_STREAM = range(5)
_MAX_RESAMPLE_ATTEMPTS = 200

#: Titles planted into profile descriptions, with occupational class
#: (1 = highest) and a mean annual salary in USD.
PLANTED_TITLES: tuple[TitleEntry, ...] = (
    TitleEntry("surgeon", 1, 251000.0),
    TitleEntry("judge", 1, 145000.0, ("don't judge",)),
    TitleEntry("pharmacist", 2, 125000.0),
    TitleEntry("civil engineer", 2, 95000.0),
    TitleEntry("architect", 2, 89000.0),
    TitleEntry("web developer", 3, 78000.0),
    TitleEntry("police officer", 3, 67000.0),
    TitleEntry("lab technician", 3, 52000.0),
    TitleEntry("bookkeeper", 4, 45000.0),
    TitleEntry("secretary", 4, 40000.0),
    TitleEntry("electrician", 5, 61000.0),
    TitleEntry("plumber", 5, 56000.0),
    TitleEntry("carpenter", 5, 50000.0),
    TitleEntry("chef", 5, 48000.0),
    TitleEntry("teaching assistant", 6, 32000.0),
    TitleEntry("care worker", 6, 28000.0),
    TitleEntry("cashier", 7, 26000.0),
    TitleEntry("sales assistant", 7, 25000.0),
    TitleEntry("machine operator", 8, 36000.0),
    TitleEntry("forklift driver", 8, 34000.0),
    TitleEntry("cleaner", 9, 24000.0, ("vacuum cleaner",)),
    TitleEntry("warehouse operative", 9, 28000.0),
)

_FILLERS = (
    "coffee and good vibes",
    "living one day at a time",
    "opinions are my own",
    "proud dog parent",
    "here for the conversation",
    "music movies and long walks",
)
_DECOYS = ("don't judge me", "my vacuum cleaner collection keeps growing")


@dataclass
class SynthParams:
    n_users: int = 20_000
    n_brands: int = 150
    domain_probs: tuple = (1 / 6,) * 6
    base_rate: float = -2.2
    proximity_weight: float = 1.5
    popularity_spread: float = 0.5
    activity_spread: float = 0.5
    seed: int = 7
    kernel: str = "quadratic"          # quadratic | absolute
    plant_titles_fraction: float = 0.0
    plant_noise: float = 0.08

    def validate(self):
        if self.n_users < 10:
            raise InvalidParameter("n_users must be >= 10")
        if self.n_brands < 6:
            raise InvalidParameter("n_brands must be >= 6 (one per domain)")
        if len(self.domain_probs) != 6 or abs(sum(self.domain_probs) - 1.0) > 1e-9:
            raise InvalidParameter("domain_probs must be 6 probabilities summing to 1")
        # The proximity weight may be zero (the null model) but not negative.
        if self.proximity_weight < 0:
            raise InvalidParameter("proximity_weight must be >= 0")
        if self.popularity_spread < 0 or self.activity_spread < 0:
            raise InvalidParameter("spreads must be >= 0")
        if self.kernel not in ("quadratic", "absolute"):
            raise InvalidParameter(f"unknown kernel {self.kernel!r}")
        if not 0.0 <= self.plant_titles_fraction <= 1.0:
            raise InvalidParameter("plant_titles_fraction must be in [0, 1]")

    def to_dict(self) -> dict:
        return {
            "n_users": self.n_users,
            "n_brands": self.n_brands,
            "domain_probs": list(self.domain_probs),
            "base_rate": self.base_rate,
            "proximity_weight": self.proximity_weight,
            "popularity_spread": self.popularity_spread,
            "activity_spread": self.activity_spread,
            "seed": self.seed,
            "kernel": self.kernel,
            "plant_titles_fraction": self.plant_titles_fraction,
            "plant_noise": self.plant_noise,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SynthParams":
        data = dict(data)
        if "domain_probs" in data:
            data["domain_probs"] = tuple(data["domain_probs"])
        unknown = set(data) - {f.name for f in cls.__dataclass_fields__.values()}
        if unknown:
            raise InvalidParameter(f"unknown synth fields: {sorted(unknown)}")
        params = cls(**data)
        params.validate()
        return params


@dataclass
class SynthTruth:
    user_ids: list[str]
    brand_ids: list[str]
    user_ses: np.ndarray
    brand_ses: np.ndarray
    user_activity: np.ndarray
    brand_popularity: np.ndarray
    planted_titles: dict[str, str] = field(default_factory=dict)
    n_resampled_users: int = 0
    n_forced_links: int = 0


def _stream(seed, tag, *key):
    return np.random.default_rng(np.random.SeedSequence(entropy=seed,
                                                        spawn_key=(tag, *key)))


def _follow_probs(params, user_ses, activity, brand_ses, popularity):
    d = user_ses[:, None] - brand_ses[None, :]
    prox = d * d if params.kernel == "quadratic" else np.abs(d)
    eta = (params.base_rate + activity[:, None] + popularity[None, :]
           - params.proximity_weight * prox)
    return special.expit(eta)


def generate(params: SynthParams):
    """Draw a follow graph; returns (EdgeStore, BrandCatalog,
    UserProfileStore, SynthTruth). Deterministic for a given seed."""
    params.validate()

    brand_rng = _stream(params.seed, _BRAND_STREAM)
    brand_ses = brand_rng.standard_normal(params.n_brands)
    popularity = (brand_rng.standard_normal(params.n_brands)
                  * params.popularity_spread)
    domains = brand_rng.choice(6, size=params.n_brands,
                               p=np.asarray(params.domain_probs))
    domains[:6] = np.arange(6)  # guarantee one brand per domain

    profile_rng = _stream(params.seed, _PROFILE_STREAM)
    user_ses = profile_rng.standard_normal(params.n_users)
    activity = profile_rng.standard_normal(params.n_users) * params.activity_spread

    pilot = min(params.n_users, 512)
    expected = _follow_probs(params, user_ses[:pilot], activity[:pilot],
                             brand_ses, popularity).sum(axis=1).mean()
    if expected < 1.0:
        raise DegenerateParams(
            f"expected follows per user is {expected:.3f} < 1; "
            "raise base_rate or lower proximity_weight")

    users_out, brands_out = [], []
    n_resampled = n_forced = 0
    for block_idx, start in enumerate(range(0, params.n_users, _BLOCK)):
        stop = min(start + _BLOCK, params.n_users)
        p = _follow_probs(params, user_ses[start:stop], activity[start:stop],
                          brand_ses, popularity)
        rng = _stream(params.seed, _EDGE_STREAM, block_idx)
        follows = rng.random(p.shape) < p
        empty = np.flatnonzero(~follows.any(axis=1))
        for local in empty:
            n_resampled += 1
            user_rng = _stream(params.seed, _RESAMPLE_STREAM, start + int(local))
            row = None
            for _ in range(_MAX_RESAMPLE_ATTEMPTS):
                draw = user_rng.random(params.n_brands) < p[local]
                if draw.any():
                    row = draw
                    break
            if row is None:
                # Deterministic fallback: link the closest brand.
                row = np.zeros(params.n_brands, dtype=bool)
                row[int(np.argmax(p[local]))] = True
                n_forced += 1
            follows[local] = row
        bi, bj = np.nonzero(follows)
        users_out.append(bi.astype(np.int64) + start)
        brands_out.append(bj.astype(np.int64))

    u = np.concatenate(users_out)
    b = np.concatenate(brands_out)

    width = len(str(max(params.n_users, params.n_brands) - 1))
    user_tokens = [f"u{i:0{width}d}" for i in range(params.n_users)]
    brand_tokens = [f"b{j:0{width}d}" for j in range(params.n_brands)]

    follower_counts = np.bincount(b, minlength=params.n_brands)
    catalog = BrandCatalog([
        BrandEntry(brand_tokens[j], f"brand_{brand_tokens[j]}",
                   DOMAINS[domains[j]], int(follower_counts[j]))
        for j in range(params.n_brands)
    ])
    edges = EdgeStore(IdMap(user_tokens), catalog.ids, u, b)

    profiles, planted = _make_profiles(params, user_tokens, user_ses, profile_rng)
    truth = SynthTruth(
        user_ids=user_tokens,
        brand_ids=brand_tokens,
        user_ses=user_ses,
        brand_ses=brand_ses,
        user_activity=activity,
        brand_popularity=popularity,
        planted_titles=planted,
        n_resampled_users=n_resampled,
        n_forced_links=n_forced,
    )
    return edges, catalog, profiles, truth


def _make_profiles(params, user_tokens, user_ses, rng):
    n = params.n_users
    statuses = 100 + rng.poisson(150, size=n)
    followers = 25 + rng.poisson(75, size=n)
    day0 = np.datetime64("2020-01-01", "D")
    active = day0 + rng.integers(0, 150, size=n)
    blank_location = rng.random(n) < 0.05
    location = np.where(blank_location, "", "US")

    titles_by_salary = sorted(PLANTED_TITLES, key=lambda e: e.mean_annual_salary)
    title_rng = _stream(params.seed, _TITLE_STREAM)
    plant = title_rng.random(n) < params.plant_titles_fraction
    quantile = special.ndtr(user_ses) + title_rng.standard_normal(n) * params.plant_noise
    slot = np.clip((quantile * len(titles_by_salary)).astype(int),
                   0, len(titles_by_salary) - 1)
    decoy = ~plant & (title_rng.random(n) < 0.02)
    filler_pick = title_rng.integers(0, len(_FILLERS), size=n)
    decoy_pick = title_rng.integers(0, len(_DECOYS), size=n)

    planted: dict[str, str] = {}
    descriptions = []
    for i in range(n):
        if plant[i]:
            title = titles_by_salary[slot[i]].title
            planted[user_tokens[i]] = title
            descriptions.append(f"{title} | {_FILLERS[filler_pick[i]]}")
        elif decoy[i]:
            descriptions.append(_DECOYS[decoy_pick[i]])
        else:
            descriptions.append(_FILLERS[filler_pick[i]])

    store = UserProfileStore(
        IdMap(user_tokens), statuses, followers, active, location, descriptions)
    return store, planted


def planted_lexicon() -> TitleLexicon:
    """The lexicon matching :data:`PLANTED_TITLES`."""
    return TitleLexicon.from_rows(PLANTED_TITLES)


def evaluate_recovery(estimates: ca.ScoreTable, truth: SynthTruth) -> CorrelationResult:
    """|Spearman| between estimated and latent scores, sign-aligned.

    The scale polarity is arbitrary, so the absolute correlation is
    reported with the observed sign in the method note. Estimates must
    cover at least 90% of the ground-truth entities.
    """
    if estimates.kind == "user":
        truth_ids, truth_vals = truth.user_ids, truth.user_ses
    elif estimates.kind == "brand":
        truth_ids, truth_vals = truth.brand_ids, truth.brand_ses
    else:
        raise InvalidParameter(f"unknown score kind {estimates.kind!r}")
    have = {t: i for i, t in enumerate(estimates.ids)}
    matched = [(have[t], i) for i, t in enumerate(truth_ids) if t in have]
    coverage = len(matched) / len(truth_ids)
    if coverage < 0.9:
        raise InsufficientCoverage(
            f"estimates cover {coverage:.1%} of {estimates.kind}s (< 90%)")
    est_idx, truth_idx = map(np.array, zip(*matched))
    result = spearman(estimates.ses[est_idx], truth_vals[truth_idx])
    note = (f"sign-aligned |spearman|; observed sign "
            f"{'+' if result.rho >= 0 else '-'}; coverage {coverage:.3f}")
    return CorrelationResult(abs(result.rho), result.n, result.p_value, note)


def run_recovery_benchmark(params: SynthParams | None = None, k_dims: int = 3,
                           svd_params: ca.SvdParams | None = None) -> dict:
    """Generate, fit on the full matrix, project, standardize, and compare
    against the latent truth. The shared end-to-end regression benchmark."""
    params = params or SynthParams()
    t0 = time.perf_counter()
    edges, catalog, profiles, truth = generate(params)
    t_gen = time.perf_counter()

    follower_counts = np.bincount(edges.b, minlength=params.n_brands)
    kept = np.flatnonzero(follower_counts > 0)
    col_lookup = np.full(params.n_brands, -1, dtype=np.int64)
    col_lookup[kept] = np.arange(len(kept))
    matrix = ca.matrix_from_edges(
        edges.u, col_lookup[edges.b],
        row_ids=edges.user_ids.tokens,
        col_ids=[edges.brand_ids.tokens[j] for j in kept],
    )
    sp = svd_params or ca.SvdParams(seed=params.seed)
    model = ca.fit_ca(matrix, k_dims=k_dims, svd_params=sp)
    t_fit = time.perf_counter()

    brand_coords, _ = ca.project_columns(model, matrix.csr)
    user_coords, _ = ca.project_rows(model, matrix.csr)
    users = ca.standardize(model.row_ids, user_coords[:, 0], "user")
    brands = ca.standardize(model.col_ids, brand_coords[:, 0], "brand")
    t_done = time.perf_counter()

    return {
        "user": evaluate_recovery(users, truth),
        "brand": evaluate_recovery(brands, truth),
        "user_scores": users,
        "brand_scores": brands,
        "model": model,
        "truth": truth,
        "n_edges": edges.n_edges,
        "n_brands_kept": len(kept),
        "seconds": {
            "generate": t_gen - t0,
            "fit": t_fit - t_gen,
            "project_score": t_done - t_fit,
            "total": t_done - t0,
        },
    }
