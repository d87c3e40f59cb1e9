"""Descriptive statistics, Mann-Whitney U, BC/EMD tables and grouped means."""
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .mapsim import DEFAULT_EMD_GRID, bhattacharyya, emd_downsampled
from .prng import Xoshiro256, stable_hash

log = logging.getLogger(__name__)

SAME_IDENTITY = "same-identity"
DIFFERENT_IDENTITY = "different-identity"


@dataclass(frozen=True)
class SeriesSummary:
    n: int
    std: float
    mean: float
    min: float
    max: float
    cv: float  # nan when the mean is not positive


def coefficient_of_variation(std, mean):
    """std / mean * 100, or nan for a (near-)zero or negative mean."""
    return std / mean * 100.0 if mean > 1e-12 else float("nan")


def summarize(series):
    values = np.sort(np.asarray(list(series), dtype=np.float64))
    if values.size == 0:
        raise ValueError("cannot summarize an empty series")
    mean = float(values.mean())
    std = float(np.sqrt(np.mean((values - mean) ** 2)))
    return SeriesSummary(int(values.size), std, mean, float(values[0]), float(values[-1]),
                         coefficient_of_variation(std, mean))


# -- Mann-Whitney U ------------------------------------------------------------

@dataclass(frozen=True)
class MannWhitneyResult:
    u: float
    p: float
    method: str


def _midranks(values):
    order = np.argsort(values, kind="mergesort")
    ranks = np.empty(len(values))
    sorted_vals = values[order]
    i = 0
    n = len(values)
    while i < n:
        j = i
        while j + 1 < n and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i:j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def u_statistic(x, y):
    """#{x_i > y_j} + 0.5 * #{x_i == y_j}."""
    x, y = np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64)
    ranks = _midranks(np.concatenate([x, y]))
    n = len(x)
    return float(ranks[:n].sum() - n * (n + 1) / 2.0)


def u_distribution(n, m):
    """Counts of each U value (0..n*m) over all C(n+m, n) orderings without ties."""
    # f[i][j] holds the count polynomial for sample sizes i, j
    f = [[None] * (m + 1) for _ in range(n + 1)]
    for i in range(n + 1):
        for j in range(m + 1):
            if i == 0 or j == 0:
                f[i][j] = np.zeros(i * j + 1, dtype=object)
                f[i][j][0] = 1
                continue
            out = np.zeros(i * j + 1, dtype=object)
            # largest observation from x beats all j ys; or it comes from y
            out[j:j + len(f[i - 1][j])] += f[i - 1][j]
            out[:len(f[i][j - 1])] += f[i][j - 1]
            f[i][j] = out
    return f[n][m]


def mann_whitney_u(x, y, alternative="two-sided", method="auto"):
    """U statistic of ``x`` against ``y`` with its p-value.

    ``alternative="greater"`` tests whether x tends to exceed y. Exact
    p-values are used for n + m <= 12 without ties (``method="auto"``);
    otherwise the normal approximation with tie and continuity corrections.
    """
    x, y = np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64)
    n, m = len(x), len(y)
    if n == 0 or m == 0:
        raise ValueError("both samples must be nonempty")
    if alternative not in ("two-sided", "greater", "less"):
        raise ValueError(f"unknown alternative {alternative!r}")
    u = u_statistic(x, y)
    combined = np.concatenate([x, y])
    ties = len(np.unique(combined)) < len(combined)
    if method == "auto":
        method = "exact" if n + m <= 12 and not ties else "asymptotic"
    if method == "exact":
        if ties:
            raise ValueError("exact Mann-Whitney p-values require tie-free samples")
        counts = u_distribution(n, m)
        total = math.comb(n + m, n)
        k = int(round(u))
        p_le = float(sum(counts[:k + 1])) / total
        p_ge = float(sum(counts[k:])) / total
        p = {"greater": p_ge, "less": p_le, "two-sided": min(1.0, 2.0 * min(p_le, p_ge))}[alternative]
        return MannWhitneyResult(u, p, "exact")
    N = n + m
    _, tcounts = np.unique(combined, return_counts=True)
    tie_term = float(np.sum(tcounts ** 3 - tcounts)) / (N * (N - 1)) if N > 1 else 0.0
    var = n * m / 12.0 * ((N + 1) - tie_term)
    mu = n * m / 2.0
    if var <= 0:
        return MannWhitneyResult(u, 1.0, "asymptotic")
    sigma = math.sqrt(var)
    if alternative == "greater":
        p = _norm_sf((u - mu - 0.5) / sigma)
    elif alternative == "less":
        p = _norm_sf((mu - u - 0.5) / sigma)
    else:
        p = 2.0 * _norm_sf((abs(u - mu) - 0.5) / sigma)
    return MannWhitneyResult(u, min(1.0, max(0.0, p)), "asymptotic")


def _norm_sf(z):
    return 0.5 * math.erfc(z / math.sqrt(2.0))


# -- BC / EMD tables -----------------------------------------------------------

@dataclass(frozen=True)
class SimilarityRow:
    kind: str
    layer: str
    model: str
    pairs: int
    mean_bc: float
    mean_emd: float
    emd_grid: int
    sample_size: int
    seed: int


def _pair_metrics(job):
    p, q, grid, with_emd = job
    bc = bhattacharyya(p, q)
    d = emd_downsampled(p, q, grid).distance if with_emd else float("nan")
    return bc, d


def _pairs_for(kind, groups, layer, model, sample, seed):
    idents = sorted(i for (i, l, mo) in groups if l == layer and mo == model)
    out = []
    if kind == SAME_IDENTITY:
        for ident in idents:
            maps = groups[(ident, layer, model)]
            if len(maps) < 2:
                log.warning("identity %s has fewer than 2 maps for %s/%s; skipped", ident, model, layer)
                continue
            out.extend((maps[i], maps[j]) for i, j in combinations(range(len(maps)), 2))
        return out
    chosen = set()
    for ident in idents:
        others = [o for o in idents if o != ident]
        rng = Xoshiro256(seed ^ stable_hash(layer, model, ident))
        for other in rng.sample(others, min(sample, len(others))):
            chosen.add(tuple(sorted((ident, other))))
    for a, b in sorted(chosen):
        for p in groups[(a, layer, model)]:
            for q in groups[(b, layer, model)]:
                out.append((p, q))
    return out


def pairwise_bc_emd_table(groups, kind, emd_grid=DEFAULT_EMD_GRID, sample=10, seed=0, with_emd=True,
                          jobs=1):
    """Mean BC and EMD per (layer, model).

    ``groups`` maps ``(identity, layer, model)`` to a list of aligned
    probability maps. Same-identity rows average over all unordered
    within-identity pairs; different-identity rows over all image pairs of
    ``sample`` seeded counterpart identities per identity.
    """
    if kind not in (SAME_IDENTITY, DIFFERENT_IDENTITY):
        raise ValueError(f"unknown pair kind {kind!r}")
    keys = sorted({(layer, model) for (_, layer, model) in groups})
    rows = []
    for layer, model in keys:
        pairs = _pairs_for(kind, groups, layer, model, sample, seed)
        jobs_list = [(p, q, emd_grid, with_emd) for p, q in pairs]
        if jobs > 1 and len(jobs_list) > 1:
            with ProcessPoolExecutor(max_workers=jobs) as pool:
                metrics = list(pool.map(_pair_metrics, jobs_list, chunksize=8))
        else:
            metrics = [_pair_metrics(j) for j in jobs_list]
        if metrics:
            bcs, emds = zip(*metrics)
            mean_bc, mean_emd = float(np.mean(bcs)), float(np.mean(emds))
        else:
            mean_bc = mean_emd = float("nan")
        rows.append(SimilarityRow(kind, layer, model, len(pairs), mean_bc, mean_emd, emd_grid,
                                  sample if kind == DIFFERENT_IDENTITY else 0, seed))
    return rows


# -- grouping ------------------------------------------------------------------

@dataclass(frozen=True)
class GroupStat:
    stratum: tuple
    group: str
    count: int
    mean: float


@dataclass(frozen=True)
class Grouped:
    key: str
    groups: tuple
    excluded: int


def age_bucket(age_a, age_b, width=5):
    diff = abs(int(age_a) - int(age_b))
    lo = diff // width * width
    return f"{lo}-{lo + width - 1}"


def group_value(record, key):
    """Group label of ``record`` under ``key``, or None when unavailable."""
    if key in ("age-difference", "age_difference"):
        a, b = record.get("age_anchor"), record.get("age_positive")
        if a in (None, "") or b in (None, ""):
            return None
        return age_bucket(a, b)
    value = record.get(key)
    return None if value in (None, "") else str(value)


def group_by(records, key, value="drop", within=()):
    """Mean of ``value`` per group of ``key``, stratified by ``within`` fields.

    Records missing the key (or with a non-finite value) are excluded and
    counted. Groups with no records are never emitted.
    """
    sums = {}
    excluded = 0
    for rec in records:
        group = group_value(rec, key)
        try:
            v = float(rec[value])
        except (KeyError, TypeError, ValueError):
            v = float("nan")
        if group is None or not math.isfinite(v):
            excluded += 1
            continue
        stratum = tuple(rec.get(w) for w in within)
        acc = sums.setdefault((stratum, group), [0, 0.0])
        acc[0] += 1
        acc[1] += v
    stats = tuple(GroupStat(s, g, n, total / n) for (s, g), (n, total) in
                  sorted(sums.items(), key=lambda kv: (tuple(str(x) for x in kv[0][0]), kv[0][1])))
    return Grouped(key, stats, excluded)
