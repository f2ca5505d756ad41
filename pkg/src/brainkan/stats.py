"""Nonparametric comparison of model configurations: Kruskal-Wallis omnibus
test with tie correction, followed by Dunn's pairwise test with Bonferroni
adjustment.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import chi2, norm, rankdata


@dataclass
class KruskalResult:
    h: float
    p_value: float
    df: int


@dataclass
class DunnPair:
    group_a: int
    group_b: int
    z: float
    p_raw: float
    p_adjusted: float
    significant: bool


def _check_groups(groups) -> list[np.ndarray]:
    arrays = [np.asarray(g, dtype=np.float64).ravel() for g in groups]
    if len(arrays) < 2:
        raise ValueError(f"need at least 2 groups, got {len(arrays)}")
    for i, g in enumerate(arrays):
        if g.size < 2:
            raise ValueError(f"group {i} has {g.size} samples; each group needs at least 2")
        if not np.isfinite(g).all():
            raise ValueError(f"group {i} contains non-finite values")
    return arrays


def _tie_term(pooled: np.ndarray) -> float:
    """Sum of t^3 - t over tied-value groups."""
    _, counts = np.unique(pooled, return_counts=True)
    return float(np.sum(counts.astype(np.float64) ** 3 - counts))


def kruskal_wallis(groups) -> KruskalResult:
    """Rank-based H with tie correction; p from the chi-square approximation."""
    arrays = _check_groups(groups)
    pooled = np.concatenate(arrays)
    n_total = pooled.size
    ranks = rankdata(pooled)
    h = 0.0
    start = 0
    for g in arrays:
        r_sum = ranks[start : start + g.size].sum()
        h += r_sum * r_sum / g.size
        start += g.size
    h = 12.0 / (n_total * (n_total + 1)) * h - 3.0 * (n_total + 1)
    correction = 1.0 - _tie_term(pooled) / (n_total**3 - n_total)
    if correction <= 0.0:  # every pooled value identical
        return KruskalResult(h=0.0, p_value=1.0, df=len(arrays) - 1)
    h /= correction
    df = len(arrays) - 1
    return KruskalResult(h=float(h), p_value=float(chi2.sf(h, df)), df=df)


def dunn_test(groups, alpha: float = 0.05) -> list[DunnPair]:
    """Dunn's pairwise z on mean ranks, Bonferroni-adjusted across all pairs."""
    arrays = _check_groups(groups)
    pooled = np.concatenate(arrays)
    n_total = pooled.size
    ranks = rankdata(pooled)
    mean_ranks = []
    start = 0
    for g in arrays:
        mean_ranks.append(ranks[start : start + g.size].mean())
        start += g.size
    variance_base = n_total * (n_total + 1) / 12.0 - _tie_term(pooled) / (12.0 * (n_total - 1))

    k = len(arrays)
    n_pairs = k * (k - 1) // 2
    results = []
    for a in range(k):
        for b in range(a + 1, k):
            var = variance_base * (1.0 / arrays[a].size + 1.0 / arrays[b].size)
            if var <= 0.0:
                z = 0.0
            else:
                z = (mean_ranks[a] - mean_ranks[b]) / np.sqrt(var)
            p_raw = float(2.0 * norm.sf(abs(z)))
            p_adj = min(1.0, p_raw * n_pairs)
            results.append(
                DunnPair(
                    group_a=a,
                    group_b=b,
                    z=float(z),
                    p_raw=p_raw,
                    p_adjusted=p_adj,
                    significant=p_adj < alpha,
                )
            )
    return results


def stats_report(groups, group_names=None, alpha: float = 0.05) -> dict:
    """JSON-ready omnibus + post-hoc report for the CLI and result files."""
    arrays = _check_groups(groups)
    names = list(group_names) if group_names else [f"group{i}" for i in range(len(arrays))]
    if len(names) != len(arrays):
        raise ValueError(f"{len(names)} names for {len(arrays)} groups")
    kw = kruskal_wallis(arrays)
    pairs = dunn_test(arrays, alpha=alpha)
    return {
        "kruskal_wallis": {"h": kw.h, "p_value": kw.p_value, "df": kw.df},
        "alpha": alpha,
        "dunn": [
            {
                "pair": [names[p.group_a], names[p.group_b]],
                "z": p.z,
                "p_raw": p.p_raw,
                "p_adjusted": p.p_adjusted,
                "significant": p.significant,
            }
            for p in pairs
        ],
        "group_sizes": {names[i]: int(arrays[i].size) for i in range(len(arrays))},
    }
