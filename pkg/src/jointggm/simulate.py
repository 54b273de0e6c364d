"""Synthetic precision-matrix families and Gaussian samples for benchmarks.

Families are built from a base precision matrix (banded AR(2), scale-free
tree, or hub groups) whose conditions are linked either as a chain (temporal:
each condition perturbs the previous one) or a star (spatial: every condition
independently perturbs a common ancestor). A perturbation swaps a fixed
fraction of edges, keeping the edge count constant, and then restores positive
definiteness by resetting the diagonal.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import write_table
from .errors import EstimationError, ValidationError

logger = logging.getLogger(__name__)

KINDS = ("ar2", "scalefree", "hub")
LINEAGES = ("temporal", "spatial")
DEFAULT_MAGNITUDE = 0.3
DEFAULT_HUB_SIZE = 20
REPAIR_DELTA = 0.1
REPAIR_ATTEMPTS = 5
PERTURB_RANGE = (0.1, 0.3)
MIN_EIGENVALUE = 1e-10


def ar2_precision(p: int) -> np.ndarray:
    """Banded precision: 1 on the diagonal, 0.5 at lag 1, 0.25 at lag 2."""
    if p < 3:
        raise ValidationError(f"AR(2) precision needs p >= 3, got {p}")
    om = np.eye(p)
    idx = np.arange(p - 1)
    om[idx, idx + 1] = om[idx + 1, idx] = 0.5
    idx = np.arange(p - 2)
    om[idx, idx + 2] = om[idx + 2, idx] = 0.25
    return om


def pd_repair(off_diagonal: np.ndarray, delta: float = REPAIR_DELTA,
              attempts: int = REPAIR_ATTEMPTS) -> np.ndarray:
    """Set the diagonal to |smallest eigenvalue| + delta to force positive definiteness.

    If the result is still numerically non-definite the constant is doubled,
    up to the given number of attempts.
    """
    lam_min = float(np.linalg.eigvalsh(off_diagonal)[0])
    shift = delta
    for attempt in range(attempts):
        om = off_diagonal + (abs(lam_min) + shift) * np.eye(off_diagonal.shape[0])
        if float(np.linalg.eigvalsh(om)[0]) > MIN_EIGENVALUE:
            if attempt:
                logger.debug("pd_repair succeeded on attempt %d (delta %g)",
                             attempt + 1, shift)
            return om
        shift *= 2
    raise EstimationError(
        f"pd_repair failed after {attempts} attempts (last delta {shift / 2:g})"
    )


def structured_precision(kind: str, p: int, rng: np.random.Generator,
                         magnitude: float = DEFAULT_MAGNITUDE,
                         hub_size: int = DEFAULT_HUB_SIZE,
                         delta: float = REPAIR_DELTA) -> np.ndarray:
    """Scale-free or hub precision matrix with +-magnitude off-diagonals.

    scalefree: a preferential-attachment tree, each new node linking to an
    existing node with probability proportional to its degree (p - 1 edges).
    hub: nodes split into groups of roughly hub_size, every group member tied
    to its group's first node.
    """
    if p < 3:
        raise ValidationError(f"structured precision needs p >= 3, got {p}")
    off = np.zeros((p, p))
    if kind == "scalefree":
        degree = np.zeros(p)
        for v in range(1, p):
            if v == 1:
                target = 0
            else:
                weights = degree[:v] / degree[:v].sum()
                target = int(rng.choice(v, p=weights))
            value = magnitude * float(rng.choice([-1.0, 1.0]))
            off[target, v] = off[v, target] = value
            degree[target] += 1
            degree[v] += 1
    elif kind == "hub":
        n_groups = max(1, round(p / hub_size))
        bounds = np.linspace(0, p, n_groups + 1).astype(int)
        for g in range(n_groups):
            lo, hi = int(bounds[g]), int(bounds[g + 1])
            for member in range(lo + 1, hi):
                value = magnitude * float(rng.choice([-1.0, 1.0]))
                off[lo, member] = off[member, lo] = value
    else:
        raise ValidationError(f"unknown structured kind {kind!r}")
    return pd_repair(off, delta)


def perturb(om: np.ndarray, frac: float, rng: np.random.Generator,
            magnitude_range: tuple[float, float] = PERTURB_RANGE,
            delta: float = REPAIR_DELTA) -> np.ndarray:
    """Swap round(frac * |E|) edges for new ones of magnitude 0.1 to 0.3.

    Removed edges are chosen uniformly among existing ones, additions
    uniformly among empty slots, so the edge count is preserved exactly.
    The diagonal is then rebuilt with pd_repair.
    """
    if not 0 <= frac <= 1:
        raise ValidationError(f"frac must be in [0, 1], got {frac}")
    p = om.shape[0]
    off = om.copy()
    np.fill_diagonal(off, 0.0)
    iu = np.triu_indices(p, 1)
    values = off[iu].copy()
    present = np.flatnonzero(values != 0)
    absent = np.flatnonzero(values == 0)
    count = int(round(frac * present.size))
    if count > absent.size:
        raise ValidationError(
            f"cannot add {count} edges, only {absent.size} empty slots"
        )
    removed = rng.choice(present, size=count, replace=False)
    added = rng.choice(absent, size=count, replace=False)
    values[removed] = 0.0
    lo, hi = magnitude_range
    values[added] = rng.uniform(lo, hi, size=count) * rng.choice([-1.0, 1.0], size=count)
    out = np.zeros((p, p))
    out[iu] = values
    out = out + out.T
    return pd_repair(out, delta)


def make_family(kind: str, p: int, k: int, lineage: str,
                frac: float, rng: np.random.Generator,
                magnitude: float = DEFAULT_MAGNITUDE,
                hub_size: int = DEFAULT_HUB_SIZE,
                delta: float = REPAIR_DELTA) -> list[np.ndarray]:
    """List of K precision matrices linked by the requested lineage.

    temporal: the base matrix is condition 1 and each later condition perturbs
    its predecessor. spatial: the base is a hidden ancestor and every
    condition is an independent perturbation of it.
    """
    if kind not in KINDS:
        raise ValidationError(f"kind must be one of {KINDS}, got {kind!r}")
    if lineage not in LINEAGES:
        raise ValidationError(f"lineage must be one of {LINEAGES}, got {lineage!r}")
    if k < 1:
        raise ValidationError(f"need at least one condition, got k={k}")
    if kind == "ar2":
        base = ar2_precision(p)
    else:
        base = structured_precision(kind, p, rng, magnitude, hub_size, delta)
    if lineage == "temporal":
        family = [base]
        for _ in range(k - 1):
            family.append(perturb(family[-1], frac, rng, delta=delta))
        return family
    return [perturb(base, frac, rng, delta=delta) for _ in range(k)]


def edge_mask(om: np.ndarray) -> np.ndarray:
    """Boolean edge indicator over the row-major upper triangle."""
    iu = np.triu_indices(om.shape[0], 1)
    return om[iu] != 0


def true_partial_correlations(om: np.ndarray) -> np.ndarray:
    """Population partial correlations -omega_ij / sqrt(omega_ii * omega_jj)."""
    d = np.sqrt(np.diag(om))
    iu = np.triu_indices(om.shape[0], 1)
    return -om[iu] / (d[iu[0]] * d[iu[1]])


def sample_mvn(om: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    """n draws from N(0, om^{-1}) via the Cholesky factor of om.

    With om = L L^T, x = L^{-T} z has covariance om^{-1} for standard normal z.
    """
    if n < 1:
        raise ValidationError(f"need n >= 1 samples, got {n}")
    try:
        chol = np.linalg.cholesky(om)
    except np.linalg.LinAlgError:
        raise EstimationError("precision matrix is not positive definite") from None
    z = rng.standard_normal((n, om.shape[0]))
    return np.linalg.solve(chol.T, z.T).T


@dataclass
class Replicate:
    variables: list[str]
    labels: list[str]
    samples: list[np.ndarray]
    precisions: list[np.ndarray]


def simulate_replicate(kind: str, p: int, n: int, k: int, lineage: str,
                       frac: float, seed: int) -> Replicate:
    """Generate one seeded replicate: K precision matrices plus samples."""
    rng = np.random.default_rng(seed)
    family = make_family(kind, p, k, lineage, frac, rng)
    samples = [sample_mvn(om, n, rng) for om in family]
    return Replicate(
        variables=[f"V{i + 1}" for i in range(p)],
        labels=[f"cond{i + 1}" for i in range(k)],
        samples=samples,
        precisions=family,
    )


def write_replicate(out_dir: str | Path, rep: Replicate, meta: dict) -> Path:
    """Write one replicate directory: data CSVs, truth files and a manifest."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    conditions = []
    iu = np.triu_indices(len(rep.variables), 1)
    for label, data, om in zip(rep.labels, rep.samples, rep.precisions):
        data_name = f"data_{label}.csv"
        write_table(out_dir / data_name, rep.variables, data)
        prec_name = f"truth_precision_{label}.csv"
        write_table(out_dir / prec_name, rep.variables, om)
        edges_name = f"truth_edges_{label}.csv"
        rows = np.flatnonzero(om[iu] != 0)
        with open(out_dir / edges_name, "w", newline="") as fh:
            fh.write("i,j,value\n")
            for r in rows:
                i, j = int(iu[0][r]), int(iu[1][r])
                fh.write(f"{i + 1},{j + 1},{om[i, j]:.17g}\n")
        conditions.append({
            "label": label,
            "data": data_name,
            "n": int(data.shape[0]),
            "truth_precision": prec_name,
            "truth_edges": edges_name,
        })
    manifest = dict(meta)
    manifest["conditions"] = conditions
    path = out_dir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path
