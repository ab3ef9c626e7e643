"""Statistical validation battery.

Rank correlation, two-sample and k-sample mean tests, grouped medians
with bootstrap standard errors, and job-title lexicon matching over
profile descriptions. All statistics are implemented directly (scipy is
used only for distribution tail probabilities) so they can be checked
against independent reference implementations.
"""

from __future__ import annotations

import csv
import itertools
import math
import re
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .errors import (
    InvalidParameter,
    LengthMismatch,
    MalformedRow,
    TooFewGroups,
    TooFewObservations,
    UnknownEntity,
    ZeroVariance,
)
from .ingest import UserProfileStore


@dataclass(frozen=True)
class CorrelationResult:
    rho: float
    n: int
    p_value: float
    method: str

    def as_dict(self) -> dict:
        return {"rho": self.rho, "n": self.n, "p_value": self.p_value,
                "method": self.method}


@dataclass(frozen=True)
class TTestResult:
    t: float
    df: float
    p_value: float
    degenerate: bool = False


@dataclass(frozen=True)
class AnovaResult:
    f: float
    df1: int
    df2: int
    p_value: float


def _t_sf(t, df):
    # Survival function of Student's t via the regularized incomplete beta.
    x = df / (df + t * t)
    p = 0.5 * special.betainc(df / 2.0, 0.5, x)
    return p if t >= 0 else 1.0 - p


def _f_sf(f, df1, df2):
    x = df2 / (df2 + df1 * f)
    return float(special.betainc(df2 / 2.0, df1 / 2.0, x))


def midranks(values) -> np.ndarray:
    """1-based ranks with average-rank treatment of ties."""
    a = np.asarray(values, dtype=np.float64)
    order = np.argsort(a, kind="stable")
    sorted_a = a[order]
    boundary = np.empty(len(a), dtype=bool)
    boundary[0] = True
    boundary[1:] = sorted_a[1:] != sorted_a[:-1]
    group = np.cumsum(boundary) - 1
    counts = np.bincount(group)
    ends = np.cumsum(counts)
    starts = ends - counts
    avg = (starts + 1 + ends) / 2.0
    ranks = np.empty(len(a))
    ranks[order] = avg[group]
    return ranks


def spearman(x, y, p_method: str = "t") -> CorrelationResult:
    """Spearman rank correlation with a two-sided p-value.

    Ties get mid-ranks; rho is the Pearson correlation of the ranks. The
    default p-value uses t = rho * sqrt((n-2)/(1-rho^2)) on n-2 degrees
    of freedom; ``p_method="exact"`` enumerates all permutations (n <= 10
    only). rho = +-1 yields p = 0.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 1 or y.ndim != 1 or len(x) != len(y):
        raise LengthMismatch(f"got lengths {len(x)} and {len(y)}")
    n = len(x)
    if n < 3:
        raise TooFewObservations("need n >= 3 for a rank correlation p-value")
    rx = midranks(x)
    ry = midranks(y)
    dx = rx - rx.mean()
    dy = ry - ry.mean()
    sxx = float(dx @ dx)
    syy = float(dy @ dy)
    if sxx == 0.0 or syy == 0.0:
        raise ZeroVariance("an input vector is constant")
    rho = float(dx @ dy) / math.sqrt(sxx * syy)
    rho = max(-1.0, min(1.0, rho))

    if p_method == "exact":
        if n > 10:
            raise InvalidParameter("exact permutation p-value limited to n <= 10")
        p = _exact_permutation_p(dx, dy, abs(rho), math.sqrt(sxx * syy))
        return CorrelationResult(rho, n, p, "spearman/exact-permutation")
    if p_method != "t":
        raise InvalidParameter(f"unknown p_method {p_method!r}")
    if abs(rho) == 1.0:
        p = 0.0
    else:
        t = rho * math.sqrt((n - 2) / (1.0 - rho * rho))
        p = float(2.0 * _t_sf(abs(t), n - 2))
    return CorrelationResult(rho, n, p, "spearman/t-approximation")


def _exact_permutation_p(dx, dy, abs_rho, denom, chunk=100_000):
    # Permutation of y ranks leaves the denominator unchanged, so only the
    # cross product varies. Two-sided: count |rho_perm| >= |rho_obs|.
    n = len(dx)
    threshold = abs_rho * denom - 1e-12
    total = math.factorial(n)
    hits = 0
    perms = itertools.permutations(range(n))
    while True:
        block = np.array(list(itertools.islice(perms, chunk)), dtype=np.intp)
        if block.size == 0:
            break
        cross = dy[block] @ dx
        hits += int((np.abs(cross) >= threshold).sum())
    return hits / total


def welch_t(a, b) -> TTestResult:
    """Unequal-variance two-sample t-test (Welch-Satterthwaite df).

    When both groups are constant the statistic degenerates: equal
    constants give t = 0, p = 1; different constants give t = +-inf,
    p = 0, with ``degenerate`` set either way.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na, nb = len(a), len(b)
    if na < 2 or nb < 2:
        raise TooFewObservations("each group needs n >= 2")
    ma, mb = float(a.mean()), float(b.mean())
    va, vb = float(a.var(ddof=1)), float(b.var(ddof=1))
    se2 = va / na + vb / nb
    if se2 == 0.0:
        if ma == mb:
            return TTestResult(0.0, math.nan, 1.0, degenerate=True)
        return TTestResult(math.copysign(math.inf, ma - mb), math.nan, 0.0,
                           degenerate=True)
    t = (ma - mb) / math.sqrt(se2)
    df = se2 ** 2 / ((va / na) ** 2 / (na - 1) + (vb / nb) ** 2 / (nb - 1))
    p = float(2.0 * _t_sf(abs(t), df))
    return TTestResult(float(t), float(df), p)


def one_way_anova(groups) -> AnovaResult:
    """One-way fixed-effects analysis of variance.

    Raises :class:`ZeroVariance` when every observation is identical
    (F is undefined); a perfect separation with zero within-group
    variance yields F = inf, p = 0.
    """
    groups = [np.asarray(g, dtype=np.float64) for g in groups]
    if len(groups) < 2:
        raise TooFewGroups("need at least two groups")
    for g in groups:
        if len(g) < 2:
            raise TooFewObservations("each group needs n >= 2")
    all_values = np.concatenate(groups)
    n_total = len(all_values)
    grand = float(all_values.mean())
    ssb = float(sum(len(g) * (g.mean() - grand) ** 2 for g in groups))
    ssw = float(sum(((g - g.mean()) ** 2).sum() for g in groups))
    df1 = len(groups) - 1
    df2 = n_total - len(groups)
    if ssw == 0.0:
        if ssb == 0.0:
            raise ZeroVariance("all observations identical; F undefined")
        return AnovaResult(math.inf, df1, df2, 0.0)
    f = (ssb / df1) / (ssw / df2)
    return AnovaResult(float(f), df1, df2, _f_sf(f, df1, df2))


@dataclass
class GroupEntry:
    n: int
    median: float
    se_median: float
    mean: float
    flagged_small: bool


@dataclass
class GroupStats:
    groups: dict[str, GroupEntry]
    n_boot: int
    seed: int

    def labels(self) -> list[str]:
        return sorted(self.groups)

    def medians(self) -> np.ndarray:
        return np.array([self.groups[g].median for g in self.labels()])


def group_median_se(scores: dict[str, float], assignment: dict[str, str],
                    n_boot: int = 1000, seed: int = 0,
                    small_group_floor: int = 10) -> GroupStats:
    """Per-group median with a seeded bootstrap standard error.

    ``scores`` maps entity id to score and ``assignment`` maps entity id
    to group label; every assigned entity must have a score. The standard
    error is the standard deviation of ``n_boot`` resample medians, with
    one derived random stream per group (label sort order), so results do
    not depend on evaluation schedule. Groups below ``small_group_floor``
    are flagged.
    """
    by_group: dict[str, list[float]] = {}
    for entity, label in assignment.items():
        if entity not in scores:
            raise UnknownEntity(f"no score for assigned entity {entity!r}")
        by_group.setdefault(label, []).append(scores[entity])

    out = {}
    for gi, label in enumerate(sorted(by_group)):
        values = np.array(by_group[label], dtype=np.float64)
        rng = np.random.default_rng(
            np.random.SeedSequence(entropy=seed, spawn_key=(gi,)))
        n = len(values)
        meds = np.empty(n_boot)
        chunk = max(1, min(n_boot, 4_000_000 // max(n, 1)))
        done = 0
        while done < n_boot:
            take = min(chunk, n_boot - done)
            idx = rng.integers(0, n, size=(take, n))
            meds[done:done + take] = np.median(values[idx], axis=1)
            done += take
        out[label] = GroupEntry(
            n=n,
            median=float(np.median(values)),
            se_median=float(meds.std(ddof=1)) if n_boot > 1 else 0.0,
            mean=float(values.mean()),
            flagged_small=n < small_group_floor,
        )
    return GroupStats(groups=out, n_boot=n_boot, seed=seed)


# --- job-title lexicon matching -----------------------------------------


@dataclass(frozen=True)
class TitleEntry:
    title: str
    occupational_class: int
    mean_annual_salary: float
    exclusion_patterns: tuple[str, ...] = ()


@dataclass
class TitleLexicon:
    entries: dict[str, TitleEntry]

    def __post_init__(self):
        for entry in self.entries.values():
            if not 1 <= entry.occupational_class <= 9:
                raise InvalidParameter(
                    f"title {entry.title!r}: class must be 1..9")
            if entry.mean_annual_salary <= 0:
                raise InvalidParameter(
                    f"title {entry.title!r}: salary must be positive")

    def __len__(self) -> int:
        return len(self.entries)

    @classmethod
    def from_rows(cls, rows) -> "TitleLexicon":
        return cls({r.title: r for r in rows})


def load_title_lexicon(path, delimiter: str = ",") -> TitleLexicon:
    """Read ``title,class,mean_salary_usd,exclusion_patterns`` (semicolon-
    separated exclusion list)."""
    entries = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh, delimiter=delimiter)
        header = next(reader, None)
        expected = ["title", "class", "mean_salary_usd", "exclusion_patterns"]
        if header is None or [c.strip() for c in header] != expected:
            raise MalformedRow(1, f"{path}: expected header {','.join(expected)}")
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 4:
                raise MalformedRow(line, f"expected 4 columns, got {len(row)}")
            title = row[0].strip()
            try:
                klass = int(row[1])
                salary = float(row[2])
            except ValueError:
                raise MalformedRow(line, "class/salary not numeric") from None
            patterns = tuple(p.strip() for p in row[3].split(";") if p.strip())
            entries[title] = TitleEntry(title, klass, salary, patterns)
    return TitleLexicon(entries)


@dataclass
class TitleMatchResult:
    assignment: dict[str, str]      # user id -> title
    ambiguous: int
    counts: dict[str, int] = field(default_factory=dict)
    dropped_titles: list[str] = field(default_factory=list)


def match_job_titles(profiles: UserProfileStore, lexicon: TitleLexicon,
                     min_matches: int = 50) -> TitleMatchResult:
    """Assign users to job titles by whole-word search in descriptions.

    Matching is case-insensitive on word boundaries. A user matching more
    than one title is assigned to none (counted in ``ambiguous``); a user
    whose description contains one of a title's exclusion patterns is not
    assigned that title. Titles matched by fewer than ``min_matches``
    users are dropped from the output.
    """
    if len(lexicon) == 0:
        raise InvalidParameter("empty title lexicon")
    compiled = []
    for title, entry in lexicon.entries.items():
        pattern = re.compile(r"(?<!\w)" + re.escape(title) + r"(?!\w)",
                             re.IGNORECASE)
        exclusions = tuple(p.lower() for p in entry.exclusion_patterns)
        compiled.append((title, pattern, exclusions))

    assignment: dict[str, str] = {}
    ambiguous = 0
    for i, user_id in enumerate(profiles.ids.tokens):
        text = profiles.description[i]
        lowered = text.lower()
        found = None
        multiple = False
        for title, pattern, exclusions in compiled:
            if not pattern.search(text):
                continue
            if any(p in lowered for p in exclusions):
                continue
            if found is None:
                found = title
            else:
                multiple = True
                break
        if multiple:
            ambiguous += 1
        elif found is not None:
            assignment[user_id] = found

    counts: dict[str, int] = {}
    for title in assignment.values():
        counts[title] = counts.get(title, 0) + 1
    dropped = sorted(t for t, k in counts.items() if k < min_matches)
    if dropped:
        gone = set(dropped)
        assignment = {u: t for u, t in assignment.items() if t not in gone}
        counts = {t: k for t, k in counts.items() if t not in gone}
    return TitleMatchResult(assignment=assignment, ambiguous=ambiguous,
                            counts=counts, dropped_titles=dropped)
