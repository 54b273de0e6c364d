"""Correlation screening and neighborhood reduction.

The screen keeps variable pairs whose marginal correlation survives a multiple
test at level alpha1, then caps each variable's neighbor list at
floor(n / (xi * ln n)) keeping the strongest correlations. The reduced
neighborhoods later define the conditioning sets for edge scoring.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import detection
from .errors import ValidationError

logger = logging.getLogger(__name__)

CORR_CLAMP = 1e-15


@dataclass
class CorrelationSummary:
    corr: np.ndarray  # (p, p) symmetric, unit diagonal
    n: int

    @property
    def p(self) -> int:
        return self.corr.shape[0]


@dataclass
class ScreeningResult:
    screened: np.ndarray   # bool over pairs, row-major upper triangle
    pvalues: np.ndarray
    zscores: np.ndarray
    method: str
    fallback: bool = False
    rvalues: np.ndarray | None = None  # pair correlations, for debug dumps


@dataclass
class ReducedNeighborhoods:
    neighbors: list[np.ndarray]  # per variable, ordered by |r| descending
    cap: int


def empirical_correlations(values: np.ndarray) -> CorrelationSummary:
    """Sample correlation matrix, symmetrized with an exactly unit diagonal."""
    values = np.asarray(values, dtype=float)
    if values.ndim != 2:
        raise ValidationError(f"expected a 2-d sample matrix, got shape {values.shape}")
    n, p = values.shape
    if n < 2 or p < 2:
        raise ValidationError(f"need at least 2 samples and 2 variables, got {values.shape}")
    corr = np.corrcoef(values, rowvar=False)
    corr = np.clip((corr + corr.T) / 2.0, -1.0, 1.0)
    np.fill_diagonal(corr, 1.0)
    return CorrelationSummary(corr=corr, n=n)


def correlation_pvalues(summary: CorrelationSummary) -> tuple[np.ndarray, np.ndarray]:
    """Fisher z statistics and two-sided p-values for every variable pair.

    z = sqrt(n - 3) * atanh(r), which is approximately standard normal when
    the true correlation is zero. Correlations are clamped away from +-1 so
    the transform stays finite.
    """
    if summary.n <= 3:
        raise ValidationError(f"Fisher transform needs n > 3, got n = {summary.n}")
    iu = np.triu_indices(summary.p, 1)
    r = np.clip(summary.corr[iu], -1.0 + CORR_CLAMP, 1.0 - CORR_CLAMP)
    z = math.sqrt(summary.n - 3) * np.arctanh(r)
    return z, detection.normal_pvalues(z)


def screen_edges(pvalues: np.ndarray, alpha1: float = 0.2,
                 method: str = detection.METHOD_EB,
                 zscores: np.ndarray | None = None) -> ScreeningResult:
    """Multiple test on pair p-values; returns the retained-pair mask.

    The empirical-Bayes route needs the signed z-scores. If they are not
    supplied, magnitudes are reconstructed from the p-values, which loses the
    correlation signs and slightly weakens the mixture fit.
    """
    pvalues = np.asarray(pvalues, dtype=float).ravel()
    if zscores is None:
        from scipy import stats
        zscores = stats.norm.isf(np.clip(pvalues, 1e-300, 1.0) / 2.0)
        logger.debug("screen_edges: reconstructing |z| from p-values")
    else:
        zscores = np.asarray(zscores, dtype=float).ravel()
        if zscores.shape != pvalues.shape:
            raise ValidationError(
                f"{zscores.size} z-scores for {pvalues.size} p-values"
            )
    result = detection.multiple_test(zscores, alpha1, method)
    return ScreeningResult(
        screened=result.reject,
        pvalues=pvalues,
        zscores=zscores,
        method=result.method,
        fallback=result.fallback,
    )


def neighborhood_cap(n: int, xi: float = 1.0) -> int:
    """Largest allowed neighbor count, floor(n / (xi * ln n))."""
    if n < 2:
        raise ValidationError(f"need n >= 2 for the neighborhood cap, got {n}")
    if xi <= 0:
        raise ValidationError(f"xi must be positive, got {xi}")
    return int(n / (xi * math.log(n)))


def reduce_neighborhoods(summary: CorrelationSummary, screened: np.ndarray,
                         xi: float = 1.0) -> ReducedNeighborhoods:
    """Cap each screened neighbor list, keeping the largest |r| first.

    Ties in |r| are broken toward the smaller variable index so results do not
    depend on iteration order.
    """
    p = summary.p
    screened = np.asarray(screened, dtype=bool).ravel()
    iu = np.triu_indices(p, 1)
    if screened.size != iu[0].size:
        raise ValidationError(
            f"screened mask has {screened.size} entries, expected {iu[0].size}"
        )
    cap = neighborhood_cap(summary.n, xi)
    lists: list[list[int]] = [[] for _ in range(p)]
    for i, j in zip(iu[0][screened], iu[1][screened]):
        lists[i].append(j)
        lists[j].append(i)
    neighbors = []
    for i, cand in enumerate(lists):
        ordered = sorted(cand, key=lambda j: (-abs(summary.corr[i, j]), j))
        neighbors.append(np.asarray(ordered[:cap], dtype=int))
    return ReducedNeighborhoods(neighbors=neighbors, cap=cap)


def write_screened_csv(screen: ScreeningResult, path: str | Path) -> None:
    """Debug dump of the screened pairs: i,j,r,p (1-based indices)."""
    if screen.rvalues is None:
        raise ValidationError("screening result carries no correlation values")
    count = screen.screened.size
    p = int((1 + math.isqrt(1 + 8 * count)) // 2)
    if p * (p - 1) // 2 != count:
        raise ValidationError(f"{count} pair entries do not form a full pair set")
    iu = np.triu_indices(p, 1)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["i", "j", "r", "p"])
        for idx in np.flatnonzero(screen.screened):
            i, j = iu[0][idx], iu[1][idx]
            writer.writerow([
                i + 1, j + 1,
                f"{screen.rvalues[idx]:.17g}",
                f"{screen.pvalues[idx]:.17g}",
            ])
