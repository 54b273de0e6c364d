"""Multiple-hypothesis testing of edge scores and graph assembly.

Two testing routes are provided. The default fits a two-group empirical-Bayes
mixture to the pooled scores, computes local false discovery rates and rejects
the largest prefix of sorted lfdr values whose running mean stays below the
target level. The alternative is the Benjamini-Yekutieli step-up procedure,
valid under arbitrary dependence, applied to two-sided normal p-values. If the
mixture fit fails to converge the test falls back to Benjamini-Yekutieli with
a warning.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats

from .errors import ValidationError

logger = logging.getLogger(__name__)

EB_MIN_SCORES = 10
EM_MAX_ITER = 500
EM_REL_TOL = 1e-8
VARIANCE_FLOOR = 1e-6

METHOD_EB = "empirical-bayes"
METHOD_BY = "benjamini-yekutieli"


@dataclass
class MultipleTestResult:
    reject: np.ndarray       # bool, one flag per score
    uncertainty: np.ndarray  # lfdr (empirical-bayes) or adjusted p-value (BY)
    method: str              # method actually used, after any fallback
    fallback: bool = False
    mixture: dict | None = None


def normal_pvalues(zscores: np.ndarray) -> np.ndarray:
    """Two-sided p-values for z-like scores under a standard normal null."""
    return 2.0 * stats.norm.sf(np.abs(zscores))


def by_adjust(pvalues: np.ndarray) -> np.ndarray:
    """Benjamini-Yekutieli adjusted p-values (step-up with the sum-1/i factor)."""
    p = np.asarray(pvalues, dtype=float)
    if p.ndim != 1 or p.size == 0:
        raise ValidationError(f"expected a non-empty 1-d p-value vector, got shape {p.shape}")
    if (p < 0).any() or (p > 1).any():
        raise ValidationError("p-values must lie in [0, 1]")
    m = p.size
    c_m = np.sum(1.0 / np.arange(1, m + 1))
    order = np.argsort(p, kind="stable")
    scaled = p[order] * m * c_m / np.arange(1, m + 1)
    adjusted = np.minimum.accumulate(scaled[::-1])[::-1]
    out = np.empty(m)
    out[order] = np.minimum(adjusted, 1.0)
    return out


def fit_two_group_mixture(zscores: np.ndarray) -> tuple[dict, bool]:
    """Fit null + symmetric pair of alternative normals by EM.

    Model: pi0 N(mu0, s0^2) + pi_pos N(m1, s1^2) + pi_neg N(-m1, s1^2).
    Returns the parameter dict and a convergence flag.
    """
    z = np.asarray(zscores, dtype=float)
    n = z.size
    pi = np.array([0.9, 0.05, 0.05])
    mu0 = float(np.median(z))
    s0 = max(float(np.std(z)) * 0.8, 0.5)
    m1 = float(np.quantile(np.abs(z - mu0), 0.98)) + 1.0
    s1 = max(s0, 1.0)

    ll_old = -np.inf
    converged = False
    for _ in range(EM_MAX_ITER):
        comp = np.stack([
            stats.norm.pdf(z, mu0, s0),
            stats.norm.pdf(z, m1, s1),
            stats.norm.pdf(z, -m1, s1),
        ])
        weighted = comp * pi[:, None]
        f = weighted.sum(axis=0) + 1e-300
        ll = float(np.log(f).sum())
        resp = weighted / f

        pi = resp.mean(axis=1)
        pi = np.maximum(pi, 1e-12)
        pi /= pi.sum()
        w0 = resp[0].sum()
        mu0 = float(resp[0] @ z) / w0
        s0 = math.sqrt(max(float(resp[0] @ (z - mu0) ** 2) / w0, VARIANCE_FLOOR))
        w_alt = resp[1].sum() + resp[2].sum()
        m1 = max(float(resp[1] @ z - resp[2] @ z) / w_alt, 1e-3)
        s1 = math.sqrt(
            max((float(resp[1] @ (z - m1) ** 2) + float(resp[2] @ (z + m1) ** 2)) / w_alt,
                VARIANCE_FLOOR)
        )
        if abs(ll - ll_old) < EM_REL_TOL * (abs(ll_old) + 1.0):
            converged = True
            break
        ll_old = ll

    params = {
        "pi0": float(pi[0]), "pi_pos": float(pi[1]), "pi_neg": float(pi[2]),
        "mu0": mu0, "sigma0": s0, "mu1": m1, "sigma1": s1,
        "loglik": ll,
    }
    return params, converged


def local_fdr(zscores: np.ndarray, params: dict) -> np.ndarray:
    """lfdr(z) = pi0 f0(z) / f(z) under the fitted two-group mixture."""
    z = np.asarray(zscores, dtype=float)
    null = params["pi0"] * stats.norm.pdf(z, params["mu0"], params["sigma0"])
    alt = (params["pi_pos"] * stats.norm.pdf(z, params["mu1"], params["sigma1"])
           + params["pi_neg"] * stats.norm.pdf(z, -params["mu1"], params["sigma1"]))
    return null / (null + alt + 1e-300)


def _lfdr_reject(lfdr: np.ndarray, alpha: float) -> np.ndarray:
    # reject the largest prefix of sorted lfdr whose running mean stays <= alpha
    order = np.argsort(lfdr, kind="stable")
    running = np.cumsum(lfdr[order]) / np.arange(1, lfdr.size + 1)
    below = np.flatnonzero(running <= alpha)
    reject = np.zeros(lfdr.size, dtype=bool)
    if below.size:
        reject[order[: below[-1] + 1]] = True
    return reject


def multiple_test(zscores: np.ndarray, alpha: float,
                  method: str = METHOD_EB) -> MultipleTestResult:
    """Test z-like scores against a zero null at significance level alpha."""
    z = np.asarray(zscores, dtype=float).ravel()
    if z.size == 0:
        raise ValidationError("no scores to test")
    if not 0 < alpha < 1:
        raise ValidationError(f"alpha must be in (0, 1), got {alpha}")
    if method not in (METHOD_EB, METHOD_BY):
        raise ValidationError(f"unknown multiple-test method {method!r}")

    if method == METHOD_EB:
        degenerate = z.size < EB_MIN_SCORES or np.ptp(z) == 0.0
        if not degenerate:
            params, converged = fit_two_group_mixture(z)
            if converged:
                lfdr = local_fdr(z, params)
                return MultipleTestResult(
                    reject=_lfdr_reject(lfdr, alpha),
                    uncertainty=lfdr,
                    method=METHOD_EB,
                    mixture=params,
                )
            logger.warning(
                "two-group mixture EM did not converge in %d iterations, "
                "falling back to Benjamini-Yekutieli", EM_MAX_ITER,
            )
        else:
            logger.warning(
                "empirical-Bayes test needs at least %d distinct scores, "
                "falling back to Benjamini-Yekutieli", EB_MIN_SCORES,
            )
        adj = by_adjust(normal_pvalues(z))
        return MultipleTestResult(
            reject=adj <= alpha, uncertainty=adj, method=METHOD_BY, fallback=True,
        )

    adj = by_adjust(normal_pvalues(z))
    return MultipleTestResult(reject=adj <= alpha, uncertainty=adj, method=METHOD_BY)


@dataclass
class GraphEstimate:
    """Detected edges across conditions, with scores and per-cell uncertainty."""

    variables: list[str]
    labels: list[str]
    pairs: np.ndarray        # (N, 2) int, 0-based variable indices, row-major i<j
    scores: np.ndarray       # (N, K) integrated scores
    uncertainty: np.ndarray  # (N, K) lfdr or adjusted p
    reject: np.ndarray       # (N, K) bool
    status: np.ndarray       # (N, K) int: sign of the score where rejected, else 0
    alpha: float
    method: str
    fallback: bool = False
    mixture: dict | None = field(default=None, repr=False)

    def edge_list(self, condition: int) -> list[tuple[int, int]]:
        rows = np.flatnonzero(self.reject[:, condition])
        return [(int(i), int(j)) for i, j in self.pairs[rows]]

    def degrees(self, condition: int) -> dict[str, int]:
        deg = np.zeros(len(self.variables), dtype=int)
        for i, j in self.edge_list(condition):
            deg[i] += 1
            deg[j] += 1
        return {name: int(d) for name, d in zip(self.variables, deg)}


def detect_edges(scores: np.ndarray, variables: list[str], labels: list[str],
                 alpha: float = 0.05, method: str = METHOD_EB) -> GraphEstimate:
    """Run one pooled multiple test over all (edge, condition) scores.

    Pooling shares the empirical null across conditions, so a given score
    magnitude means the same thing in every condition.
    """
    scores = np.asarray(scores, dtype=float)
    n_pairs = len(variables) * (len(variables) - 1) // 2
    if scores.shape != (n_pairs, len(labels)):
        raise ValidationError(
            f"score matrix shape {scores.shape} does not match "
            f"{n_pairs} pairs x {len(labels)} conditions"
        )
    result = multiple_test(scores.ravel(), alpha, method)
    reject = result.reject.reshape(scores.shape)
    uncertainty = result.uncertainty.reshape(scores.shape)
    status = np.where(reject, np.sign(scores).astype(int), 0)
    iu = np.triu_indices(len(variables), 1)
    return GraphEstimate(
        variables=list(variables),
        labels=list(labels),
        pairs=np.column_stack(iu),
        scores=scores,
        uncertainty=uncertainty,
        reject=reject,
        status=status,
        alpha=alpha,
        method=result.method,
        fallback=result.fallback,
        mixture=result.mixture,
    )


def change_report(graph: GraphEstimate) -> list[dict]:
    """Partition each condition's edges into new / persisting, plus disappearing.

    Comparisons follow the condition order: an edge is new if absent from the
    previous condition, persisting otherwise, and disappearing if it is absent
    from the next condition. For every condition, new and persisting partition
    the current edge set exactly.
    """
    per_condition = [set(graph.edge_list(k)) for k in range(len(graph.labels))]
    report = []
    for k, current in enumerate(per_condition):
        previous = per_condition[k - 1] if k > 0 else set()
        nxt = per_condition[k + 1] if k + 1 < len(per_condition) else current
        report.append({
            "label": graph.labels[k],
            "new": sorted(current - previous),
            "persisting": sorted(current & previous) if k > 0 else [],
            "disappearing": sorted(current - nxt),
        })
        if k == 0:
            report[-1]["new"] = sorted(current)
    return report


def write_graph_csv(graph: GraphEstimate, out_dir: str | Path) -> list[Path]:
    """One CSV per condition listing detected edges: i,j,name_i,name_j,score,lfdr,status."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for k, label in enumerate(graph.labels):
        path = out_dir / f"graph_{label.replace(':', '_')}.csv"
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["i", "j", "name_i", "name_j", "score", "lfdr", "status"])
            for row in np.flatnonzero(graph.reject[:, k]):
                i, j = graph.pairs[row]
                writer.writerow([
                    i + 1, j + 1,
                    graph.variables[i], graph.variables[j],
                    f"{graph.scores[row, k]:.17g}",
                    f"{graph.uncertainty[row, k]:.17g}",
                    graph.status[row, k],
                ])
        written.append(path)
    return written


def write_hub_ranking(graph: GraphEstimate, path: str | Path) -> None:
    """Aggregate JSON: per-condition node degrees and degree-ranked hub list."""
    payload = {"alpha": graph.alpha, "method": graph.method, "conditions": []}
    for k, label in enumerate(graph.labels):
        degrees = graph.degrees(k)
        ranked = sorted(
            ((name, deg) for name, deg in degrees.items() if deg > 0),
            key=lambda item: (-item[1], item[0]),
        )
        payload["conditions"].append({
            "label": label,
            "degrees": degrees,
            "hubs": [[name, deg] for name, deg in ranked],
        })
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
