"""Edge-wise partial-correlation z-scores over reduced conditioning sets.

For each variable pair (i, j) the conditioning set is the union of the two
reduced neighborhoods. The partial correlation of i and j given that set is
read off the inverse of the corresponding correlation submatrix and mapped
through a Fisher transform scaled by the effective sample size, giving a
score that is approximately standard normal when the edge is absent.

An alternative regression route adjusts for external covariates: regress x_i
on the covariates, x_j and the conditioning variables, and convert the
two-sided t-test p-value of the x_j coefficient back to a signed normal score.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import os
import struct
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import linalg, stats

from .data import ConditionedDataset
from .errors import EstimationError, ParseError, ValidationError
from .screening import (CorrelationSummary, ReducedNeighborhoods, ScreeningResult,
                        correlation_pvalues, empirical_correlations,
                        reduce_neighborhoods, screen_edges)

logger = logging.getLogger(__name__)

RIDGE = 1e-8
PCOR_CLAMP = 1e-15
MIN_PVALUE = 1e-300
CACHE_MAGIC = b"JGGMSC01"


def pair_index(i: int, j: int, p: int) -> int:
    """Row-major rank of the unordered pair (i, j), 0-based, i < j < p."""
    if not 0 <= i < j < p:
        raise ValidationError(f"need 0 <= i < j < p, got i={i}, j={j}, p={p}")
    return i * (2 * p - i - 1) // 2 + (j - i - 1)


def pair_from_index(index: int, p: int) -> tuple[int, int]:
    """Inverse of pair_index."""
    n_pairs = p * (p - 1) // 2
    if not 0 <= index < n_pairs:
        raise ValidationError(f"pair index {index} out of range for p={p}")
    i = int((2 * p - 1 - math.sqrt((2 * p - 1) ** 2 - 8 * index)) // 2)
    while i * (2 * p - i - 1) // 2 > index:
        i -= 1
    while (i + 1) * (2 * p - i - 2) // 2 <= index:
        i += 1
    j = index - i * (2 * p - i - 1) // 2 + i + 1
    return i, j


def all_pairs(p: int) -> tuple[np.ndarray, np.ndarray]:
    """Upper-triangle pair arrays in the same row-major order as pair_index."""
    return np.triu_indices(p, 1)


def separator(i: int, j: int, neighborhoods: ReducedNeighborhoods,
              summary: CorrelationSummary) -> np.ndarray:
    """Conditioning set for pair (i, j): the union of both reduced neighborhoods.

    i and j themselves are removed. If the union is so large that the effective
    sample size n - |S| - 3 would drop below 1, the weakest members (smallest
    max(|r_im|, |r_jm|)) are dropped until it fits. Returned sorted ascending.
    """
    union = set(neighborhoods.neighbors[i].tolist())
    union.update(neighborhoods.neighbors[j].tolist())
    union.discard(i)
    union.discard(j)
    limit = summary.n - 4
    if len(union) > limit:
        corr = summary.corr
        ranked = sorted(
            union,
            key=lambda m: (-max(abs(corr[i, m]), abs(corr[j, m])), m),
        )
        union = set(ranked[:limit])
    return np.asarray(sorted(union), dtype=int)


def partial_correlation(summary: CorrelationSummary, i: int, j: int,
                        sep: np.ndarray, ridge: float = RIDGE) -> float:
    """Partial correlation of i and j given sep, from the inverse correlation submatrix.

    A singular submatrix gets a ridge of ridge * I added once; if inversion
    still fails an EstimationError is raised.
    """
    idx = np.concatenate(([i, j], np.asarray(sep, dtype=int)))
    sub = summary.corr[np.ix_(idx, idx)]
    try:
        omega = np.linalg.inv(sub)
    except np.linalg.LinAlgError:
        logger.debug("pair (%d, %d): singular submatrix, adding ridge %g", i, j, ridge)
        try:
            omega = np.linalg.inv(sub + ridge * np.eye(len(idx)))
        except np.linalg.LinAlgError:
            raise EstimationError(
                f"pair ({i}, {j}): correlation submatrix singular even after "
                f"ridge {ridge:g}"
            ) from None
    denom = omega[0, 0] * omega[1, 1]
    if denom <= 0 or not np.isfinite(denom):
        raise EstimationError(
            f"pair ({i}, {j}): inverse correlation submatrix is not positive definite"
        )
    return float(-omega[0, 1] / math.sqrt(denom))


def edge_zscore(pcor: float, n: int, sep_size: int) -> float:
    """Fisher-transformed partial correlation scaled by the effective sample size.

    score = sqrt(n - |S| - 3) / 2 * ln((1 + r) / (1 - r)).
    """
    effective = n - sep_size - 3
    if effective < 1:
        raise ValidationError(
            f"effective sample size {effective} < 1 (n={n}, |S|={sep_size})"
        )
    r = min(max(pcor, -1.0 + PCOR_CLAMP), 1.0 - PCOR_CLAMP)
    return math.sqrt(effective) * math.atanh(r)


def adjusted_edge_zscore(y: np.ndarray, x_edge: np.ndarray,
                         covariates: np.ndarray | None,
                         conditioning: np.ndarray | None,
                         signed: bool = True) -> float:
    """Regression-based edge score with covariate adjustment.

    Fits y ~ intercept + covariates + x_edge + conditioning by least squares,
    takes the two-sided t-test p-value of the x_edge coefficient and returns
    sign(coef) * isf(p / 2) so magnitudes stay comparable with edge_zscore.
    With signed=False the score is the unsigned isf(p) variant.

    Collinear columns other than x_edge are dropped with a warning. If x_edge
    itself is collinear with the rest, the coefficient is unidentifiable and
    the score is 0. Zero residual degrees of freedom raise an EstimationError.
    """
    y = np.asarray(y, dtype=float).ravel()
    n = y.size
    edge = np.asarray(x_edge, dtype=float).ravel()
    if edge.size != n:
        raise ValidationError(f"edge column has {edge.size} samples, y has {n}")
    cols: list[np.ndarray] = [np.ones(n)]
    if covariates is not None and np.asarray(covariates).size:
        cov = np.atleast_2d(np.asarray(covariates, dtype=float))
        if cov.shape[0] != n:
            cov = cov.T
        if cov.shape[0] != n:
            raise ValidationError(
                f"covariates have {cov.shape} shape for {n} samples"
            )
        cols.extend(cov.T)
    if conditioning is not None and np.asarray(conditioning).size:
        cond = np.atleast_2d(np.asarray(conditioning, dtype=float))
        if cond.shape[0] != n:
            cond = cond.T
        cols.extend(cond.T)
    others = np.column_stack(cols)

    # reduce the nuisance block to independent columns first
    q, r, piv = linalg.qr(others, mode="economic", pivoting=True)
    diag = np.abs(np.diag(np.atleast_2d(r)))
    tol = diag[0] * max(others.shape) * np.finfo(float).eps if diag[0] > 0 else 0.0
    rank = int((diag > tol).sum())
    if rank < others.shape[1]:
        kept = np.sort(piv[:rank])
        logger.warning(
            "dropping %d collinear design column(s)", others.shape[1] - rank
        )
        others = others[:, kept]
        q = np.linalg.qr(others)[0]
    else:
        q = q[:, :rank]

    # a score only exists when the edge column adds direction beyond the rest
    resid_edge = edge - q @ (q.T @ edge)
    edge_norm = float(np.linalg.norm(edge))
    if edge_norm == 0.0 or np.linalg.norm(resid_edge) <= 1e-10 * max(edge_norm, 1.0):
        logger.warning(
            "edge column is collinear with the remaining design, score set to 0"
        )
        return 0.0
    design = np.column_stack([others, edge])
    edge_col = design.shape[1] - 1

    dof = n - design.shape[1]
    if dof < 1:
        raise EstimationError(
            f"no residual degrees of freedom (n={n}, design columns={design.shape[1]})"
        )
    q, r = np.linalg.qr(design)
    beta = linalg.solve_triangular(r, q.T @ y)
    resid = y - design @ beta
    sigma2 = float(resid @ resid) / dof
    # se_j = sigma * ||R^{-T} e_j||
    w = linalg.solve_triangular(r, np.eye(design.shape[1])[:, edge_col],
                                trans="T", lower=False)
    se = math.sqrt(max(sigma2, 0.0)) * float(np.linalg.norm(w))
    if se == 0.0:
        return 0.0
    t_stat = float(beta[edge_col]) / se
    pvalue = max(2.0 * stats.t.sf(abs(t_stat), dof), MIN_PVALUE)
    if signed:
        return float(math.copysign(stats.norm.isf(pvalue / 2.0), t_stat))
    return float(stats.norm.isf(min(pvalue, 1 - 1e-16)))


@dataclass
class EdgeScoreMatrix:
    """Edge scores for all pairs across conditions, with bookkeeping arrays."""

    variables: list[str]
    labels: list[str]
    scores: np.ndarray           # (N, K) float
    separator_sizes: np.ndarray  # (N, K) int
    effective_n: np.ndarray      # (N, K) int
    n_per_condition: list[int]
    adjusted: bool = False

    @property
    def n_pairs(self) -> int:
        return self.scores.shape[0]

    @property
    def k(self) -> int:
        return self.scores.shape[1]

    def pairs(self) -> np.ndarray:
        iu = all_pairs(len(self.variables))
        return np.column_stack(iu)

    def write_csv(self, path: str | Path) -> None:
        """Header: i,j,<label per condition>,sep_<label per condition>. 1-based i,j."""
        iu = all_pairs(len(self.variables))
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(
                ["i", "j"] + self.labels + [f"sep_{lab}" for lab in self.labels]
            )
            for idx in range(self.n_pairs):
                writer.writerow(
                    [iu[0][idx] + 1, iu[1][idx] + 1]
                    + [f"{v:.17g}" for v in self.scores[idx]]
                    + [int(s) for s in self.separator_sizes[idx]]
                )

    def write_cache(self, path: str | Path, config_key: str = "") -> None:
        """Versioned binary cache: magic, JSON header, little-endian arrays."""
        header = json.dumps({
            "variables": self.variables,
            "labels": self.labels,
            "n_per_condition": self.n_per_condition,
            "adjusted": self.adjusted,
            "config_key": config_key,
            "shape": list(self.scores.shape),
        }).encode()
        with open(path, "wb") as fh:
            fh.write(CACHE_MAGIC)
            fh.write(struct.pack("<I", len(header)))
            fh.write(header)
            fh.write(self.scores.astype("<f8").tobytes())
            fh.write(self.separator_sizes.astype("<i4").tobytes())
            fh.write(self.effective_n.astype("<i4").tobytes())

    @classmethod
    def read_cache(cls, path: str | Path) -> tuple["EdgeScoreMatrix", str]:
        with open(path, "rb") as fh:
            magic = fh.read(len(CACHE_MAGIC))
            if magic != CACHE_MAGIC:
                raise ParseError(f"{path}: not an edge-score cache (bad magic)")
            (hlen,) = struct.unpack("<I", fh.read(4))
            header = json.loads(fh.read(hlen).decode())
            n, k = header["shape"]
            scores = np.frombuffer(fh.read(n * k * 8), dtype="<f8").reshape(n, k)
            seps = np.frombuffer(fh.read(n * k * 4), dtype="<i4").reshape(n, k)
            eff = np.frombuffer(fh.read(n * k * 4), dtype="<i4").reshape(n, k)
        matrix = cls(
            variables=header["variables"],
            labels=header["labels"],
            scores=scores.astype(float),
            separator_sizes=seps.astype(int),
            effective_n=eff.astype(int),
            n_per_condition=header["n_per_condition"],
            adjusted=header["adjusted"],
        )
        return matrix, header.get("config_key", "")


def _score_range(args) -> tuple[np.ndarray, np.ndarray]:
    """Score one slice of pairs for one condition (worker for the process pool)."""
    (corr, n, neighbor_lists, pair_i, pair_j, ridge, adjust, signed,
     values, covariates) = args
    summary = CorrelationSummary(corr=corr, n=n)
    neighborhoods = ReducedNeighborhoods(neighbors=neighbor_lists, cap=0)
    scores = np.empty(pair_i.size)
    seps = np.empty(pair_i.size, dtype=int)
    for idx, (i, j) in enumerate(zip(pair_i, pair_j)):
        sep = separator(int(i), int(j), neighborhoods, summary)
        seps[idx] = sep.size
        if adjust:
            scores[idx] = adjusted_edge_zscore(
                values[:, i], values[:, j], covariates, values[:, sep], signed=signed,
            )
        else:
            pcor = partial_correlation(summary, int(i), int(j), sep, ridge)
            scores[idx] = edge_zscore(pcor, n, sep.size)
    return scores, seps


def compute_edge_scores(
    dataset: ConditionedDataset,
    alpha1: float = 0.2,
    xi: float = 1.0,
    screen_method: str = "empirical-bayes",
    adjust: bool = False,
    signed: bool = True,
    ridge: float = RIDGE,
    threads: int | None = 1,
) -> tuple[EdgeScoreMatrix, list[ScreeningResult]]:
    """Screen, reduce neighborhoods and score every pair in every condition.

    Returns the (N x K) score matrix plus the per-condition screening results.
    With threads > 1 the pair loop is split across a process pool; results are
    reassembled in order, so the outputs do not depend on the worker count.
    """
    p = dataset.p
    iu = all_pairs(p)
    n_pairs = iu[0].size
    scores = np.empty((n_pairs, dataset.k))
    sep_sizes = np.empty((n_pairs, dataset.k), dtype=int)
    eff = np.empty((n_pairs, dataset.k), dtype=int)
    screens: list[ScreeningResult] = []
    if threads is None:
        threads = os.cpu_count() or 1

    for k, block in enumerate(dataset.conditions):
        if adjust and block.covariates is None:
            logger.info(
                "condition %r has no covariate table, adjusting with intercept only",
                block.label,
            )
        summary = empirical_correlations(block.values)
        zscores, pvalues = correlation_pvalues(summary)
        screen = screen_edges(pvalues, alpha1, screen_method, zscores=zscores)
        screen.rvalues = summary.corr[iu]
        screens.append(screen)
        neighborhoods = reduce_neighborhoods(summary, screen.screened, xi)
        logger.info(
            "condition %r: screened %d of %d pairs, neighborhood cap %d",
            block.label, int(screen.screened.sum()), n_pairs, neighborhoods.cap,
        )
        args = (summary.corr, block.n, neighborhoods.neighbors, ridge,
                adjust, signed, block.values, block.covariates)
        if threads > 1 and n_pairs > 512:
            chunks = np.array_split(np.arange(n_pairs), threads * 4)
            tasks = [
                (args[0], args[1], args[2], iu[0][c], iu[1][c], args[3],
                 args[4], args[5], args[6], args[7])
                for c in chunks if c.size
            ]
            with ProcessPoolExecutor(max_workers=threads) as pool:
                parts = list(pool.map(_score_range, tasks))
            scores[:, k] = np.concatenate([part[0] for part in parts])
            sep_sizes[:, k] = np.concatenate([part[1] for part in parts])
        else:
            col, seps = _score_range(
                (args[0], args[1], args[2], iu[0], iu[1], args[3],
                 args[4], args[5], args[6], args[7])
            )
            scores[:, k] = col
            sep_sizes[:, k] = seps
        eff[:, k] = block.n - sep_sizes[:, k] - 3

    if (eff < 1).any():
        raise EstimationError("effective sample size dropped below 1")
    matrix = EdgeScoreMatrix(
        variables=list(dataset.variables),
        labels=dataset.labels,
        scores=scores,
        separator_sizes=sep_sizes,
        effective_n=eff,
        n_per_condition=[b.n for b in dataset.conditions],
        adjusted=adjust,
    )
    return matrix, screens
