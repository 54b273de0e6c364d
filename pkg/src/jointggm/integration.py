"""Bayesian clustering of per-condition edge scores and score integration.

Each edge has one latent status per condition (present/absent, or signed
present for the three-state variant). A configuration is the length-K status
vector. Its unnormalized log posterior combines a smoothness prior over the
condition sequence (changes are penalized through a conjugate Beta or
Dirichlet factor) with a marginal likelihood that treats the scores in each
status group as draws from a common normal whose mean is integrated out under
a flat prior and whose variance is integrated out under an inverse gamma.

Scores are then combined within status groups by Stouffer's rule and averaged
over configurations with posterior weights, which boosts shared edges by up
to sqrt(K) while leaving condition-specific edges essentially untouched.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import os
import struct
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from itertools import product
from pathlib import Path

import numpy as np
from scipy.special import gammaln, logsumexp

from .errors import ParseError, ValidationError

logger = logging.getLogger(__name__)

LOG_2PI = math.log(2.0 * math.pi)
ENUMERATION_CAP = 2 ** 14
DEFAULT_SWEEPS = 5000
DEFAULT_BURN_IN = 500
PRIOR_TEMPORAL = "temporal"
PRIOR_SPATIAL = "spatial"
INTEGRATED_MAGIC = b"JGGMIN01"


@dataclass(frozen=True)
class Hyperparams:
    """Prior hyperparameters for clustering and integration.

    a1, b1: Beta prior on the status-change probability (two-state prior).
    a2, b2: inverse-gamma prior on the within-group score variances.
    alpha: Dirichlet prior over change magnitudes 0/1/2 (three-state prior);
    the heavy first component keeps status changes rare, mirroring the
    Beta(a1, b1) default.
    """

    a1: float = 1.0
    b1: float = 10.0
    a2: float = 1.0
    b2: float = 1.0
    alpha: tuple[float, float, float] = (10.0, 1.0, 1.0)

    def validate(self) -> "Hyperparams":
        for name in ("a1", "b1", "a2", "b2"):
            if getattr(self, name) <= 0:
                raise ValidationError(f"hyperparameter {name} must be positive")
        if len(self.alpha) != 3 or any(a <= 0 for a in self.alpha):
            raise ValidationError("alpha must be three positive Dirichlet weights")
        return self


def status_values(arity: int) -> tuple[int, ...]:
    if arity == 2:
        return (0, 1)
    if arity == 3:
        return (-1, 0, 1)
    raise ValidationError(f"arity must be 2 or 3, got {arity}")


def _mode(config, arity: int) -> int:
    """Majority status; ties prefer 0, then 1, then -1."""
    counts = {v: 0 for v in status_values(arity)}
    for v in config:
        counts[v] += 1
    if arity == 2:
        return 0 if counts[0] >= counts[1] else 1
    if counts[0] >= counts[1] and counts[0] >= counts[-1]:
        return 0
    return 1 if counts[1] >= counts[-1] else -1


def _log_prior_factor(config, prior_kind: str, hp: Hyperparams, arity: int) -> float:
    """Conjugate prior factor with the change probabilities integrated out.

    Two-state: Gamma(a1+k1) Gamma(b1+k2) / Gamma(a1+k1+b1+k2) where k1 counts
    status changes (between consecutive conditions for the temporal prior,
    against the majority status for the spatial one). Three-state: the
    analogous Dirichlet ratio over change magnitudes 0/1/2.
    """
    k = len(config)
    if prior_kind == PRIOR_TEMPORAL:
        deltas = [abs(config[d + 1] - config[d]) for d in range(k - 1)]
        total = k - 1
    elif prior_kind == PRIOR_SPATIAL:
        mode = _mode(config, arity)
        deltas = [abs(v - mode) for v in config]
        total = k
    else:
        raise ValidationError(f"unknown prior kind {prior_kind!r}")
    if arity == 2:
        k1 = sum(deltas)
        k2 = total - k1
        return (math.lgamma(hp.a1 + k1) + math.lgamma(hp.b1 + k2)
                - math.lgamma(hp.a1 + k1 + hp.b1 + k2))
    counts = [0, 0, 0]
    for d in deltas:
        counts[d] += 1
    tot = 0.0
    ssum = 0.0
    for a_i, n_i in zip(hp.alpha, counts):
        tot += math.lgamma(a_i + n_i)
        ssum += a_i + n_i
    return tot - math.lgamma(ssum)


def _log_group_term(ng: int, s: float, q: float, hp: Hyperparams,
                    pinned: bool = False) -> float:
    """Marginal likelihood factor of one nonempty status group.

    s and q are the group's score sum and sum of squares. pinned=True uses the
    variant where the group mean is fixed at zero instead of integrated out.
    """
    if ng == 0:
        return 0.0
    if pinned:
        shape = ng / 2.0 + hp.a2
        return (-(ng / 2.0) * LOG_2PI + math.lgamma(shape)
                - shape * math.log(0.5 * q + hp.b2))
    shape = (ng - 1) / 2.0 + hp.a2
    bracket = 0.5 * q - s * s / (2.0 * ng) + hp.b2
    return (-0.5 * math.log(ng) - (ng / 2.0) * LOG_2PI + math.lgamma(shape)
            - shape * math.log(bracket))


def log_marginal_config(scores, config, prior_kind: str = PRIOR_TEMPORAL,
                        hp: Hyperparams | None = None, arity: int = 2,
                        pin_null_mean: bool = False) -> float:
    """Unnormalized log posterior of one status configuration for one edge."""
    hp = (hp or Hyperparams()).validate()
    values = status_values(arity)
    if len(scores) != len(config):
        raise ValidationError(
            f"{len(scores)} scores for a length-{len(config)} configuration"
        )
    if any(v not in values for v in config):
        raise ValidationError(f"configuration {tuple(config)} invalid for arity {arity}")
    total = _log_prior_factor(config, prior_kind, hp, arity)
    for g in values:
        s = q = 0.0
        ng = 0
        for v, score in zip(config, scores):
            if v == g:
                ng += 1
                s += score
                q += score * score
        total += _log_group_term(ng, s, q, hp, pinned=pin_null_mean and g == 0)
    return total


@dataclass
class EdgePosterior:
    """Posterior over status configurations for a single edge."""

    configs: list[tuple[int, ...]]
    probs: np.ndarray
    method: str           # "exact" or "gibbs"
    prior_kind: str
    arity: int

    def top(self, count: int = 10) -> list[tuple[tuple[int, ...], float]]:
        order = np.argsort(-self.probs, kind="stable")[:count]
        return [(self.configs[i], float(self.probs[i])) for i in order]

    def prob_of(self, config) -> float:
        key = tuple(config)
        for cfg, pr in zip(self.configs, self.probs):
            if cfg == key:
                return float(pr)
        return 0.0


def enumerate_posterior(scores, prior_kind: str = PRIOR_TEMPORAL,
                        hp: Hyperparams | None = None, arity: int = 2,
                        cap: int = ENUMERATION_CAP,
                        pin_null_mean: bool = False) -> EdgePosterior:
    """Exact posterior by enumerating all arity**K configurations (capped)."""
    hp = (hp or Hyperparams()).validate()
    k = len(scores)
    n_configs = arity ** k
    if n_configs > cap:
        raise ValidationError(
            f"{n_configs} configurations exceed the enumeration cap {cap}; "
            "use the gibbs engine"
        )
    configs = [tuple(c) for c in product(status_values(arity), repeat=k)]
    logp = np.array([
        log_marginal_config(scores, c, prior_kind, hp, arity, pin_null_mean)
        for c in configs
    ])
    logp -= logsumexp(logp)
    return EdgePosterior(configs=configs, probs=np.exp(logp), method="exact",
                         prior_kind=prior_kind, arity=arity)


def _flip(config: list[int], arity: int) -> list[int]:
    # the posterior is invariant under this relabeling, see gibbs_posterior
    if arity == 2:
        return [1 - v for v in config]
    return [-v for v in config]


def gibbs_posterior(scores, prior_kind: str = PRIOR_TEMPORAL,
                    hp: Hyperparams | None = None, arity: int = 2,
                    seed=0, sweeps: int = DEFAULT_SWEEPS,
                    burn_in: int = DEFAULT_BURN_IN,
                    pin_null_mean: bool = False) -> EdgePosterior:
    """Posterior estimated by a systematic-scan single-site Gibbs sampler.

    After each sweep a global relabeling move flips the whole configuration
    (0<->1, or negation for arity 3). The posterior is exactly invariant under
    that map, so the move is always accepted; it restores mixing between the
    mirror modes that single-site updates cross only rarely. Configuration
    probabilities are the post-burn-in visit frequencies.

    The stream of random draws depends only on the seed, never on scheduling,
    so results are reproducible for any worker count.
    """
    hp = (hp or Hyperparams()).validate()
    if sweeps <= burn_in:
        raise ValidationError(f"sweeps ({sweeps}) must exceed burn_in ({burn_in})")
    values = status_values(arity)
    k = len(scores)
    scores = [float(v) for v in scores]
    rng = np.random.default_rng(seed)
    draws = rng.random((sweeps, k + 1))

    config = [0] * k
    counts: dict[tuple[int, ...], int] = {}
    for sweep in range(sweeps):
        for site in range(k):
            logps = []
            for v in values:
                config[site] = v
                logps.append(
                    log_marginal_config(scores, config, prior_kind, hp, arity,
                                        pin_null_mean)
                )
            peak = max(logps)
            weights = [math.exp(lp - peak) for lp in logps]
            total = sum(weights)
            u = draws[sweep, site] * total
            acc = 0.0
            chosen = values[-1]
            for v, w in zip(values, weights):
                acc += w
                if u <= acc:
                    chosen = v
                    break
            config[site] = chosen
        if draws[sweep, k] < 0.5:
            config = _flip(config, arity)
        if sweep >= burn_in:
            key = tuple(config)
            counts[key] = counts.get(key, 0) + 1

    kept = sweeps - burn_in
    configs = sorted(counts)
    probs = np.array([counts[c] / kept for c in configs], dtype=float)
    return EdgePosterior(configs=list(configs), probs=probs, method="gibbs",
                         prior_kind=prior_kind, arity=arity)


def stouffer_combine(scores, config, weights=None) -> np.ndarray:
    """Stouffer-combined score per condition over that condition's status group.

    For condition k the combined value is sum(w_i * s_i) / sqrt(sum(w_i^2))
    over all conditions i sharing status with k. Every member of a group gets
    the same combined value, and unit weights turn a g-member unanimous group
    into sqrt(g) times its mean score.
    """
    scores = np.asarray(scores, dtype=float)
    config = np.asarray(config)
    if weights is None:
        weights = np.ones(scores.size)
    else:
        weights = np.asarray(weights, dtype=float)
        if weights.shape != scores.shape:
            raise ValidationError(
                f"weights shape {weights.shape} does not match scores {scores.shape}"
            )
        if (weights <= 0).any():
            raise ValidationError("Stouffer weights must be positive")
    out = np.empty(scores.size)
    for g in np.unique(config):
        mask = config == g
        out[mask] = (weights[mask] @ scores[mask]) / math.sqrt(
            float(weights[mask] @ weights[mask])
        )
    return out


def bayes_average(scores, posterior: EdgePosterior, weights=None) -> np.ndarray:
    """Posterior-weighted average of the Stouffer-combined scores."""
    scores = np.asarray(scores, dtype=float)
    out = np.zeros(scores.size)
    for config, prob in zip(posterior.configs, posterior.probs):
        out += prob * stouffer_combine(scores, config, weights)
    return out


@dataclass
class IntegratedScores:
    """Integrated (N x K) score matrix plus provenance of the engine run."""

    variables: list[str]
    labels: list[str]
    scores: np.ndarray
    engine: str
    prior_kind: str
    arity: int

    def write_csv(self, path: str | Path) -> None:
        p = len(self.variables)
        iu = np.triu_indices(p, 1)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["i", "j"] + self.labels)
            for idx in range(self.scores.shape[0]):
                writer.writerow(
                    [iu[0][idx] + 1, iu[1][idx] + 1]
                    + [f"{v:.17g}" for v in self.scores[idx]]
                )

    def write_cache(self, path: str | Path, config_key: str = "") -> None:
        header = json.dumps({
            "variables": self.variables,
            "labels": self.labels,
            "engine": self.engine,
            "prior_kind": self.prior_kind,
            "arity": self.arity,
            "config_key": config_key,
            "shape": list(self.scores.shape),
        }).encode()
        with open(path, "wb") as fh:
            fh.write(INTEGRATED_MAGIC)
            fh.write(struct.pack("<I", len(header)))
            fh.write(header)
            fh.write(self.scores.astype("<f8").tobytes())

    @classmethod
    def read_cache(cls, path: str | Path) -> tuple["IntegratedScores", str]:
        with open(path, "rb") as fh:
            magic = fh.read(len(INTEGRATED_MAGIC))
            if magic != INTEGRATED_MAGIC:
                raise ParseError(f"{path}: not an integrated-score cache (bad magic)")
            (hlen,) = struct.unpack("<I", fh.read(4))
            header = json.loads(fh.read(hlen).decode())
            n, k = header["shape"]
            scores = np.frombuffer(fh.read(n * k * 8), dtype="<f8").reshape(n, k)
        obj = cls(
            variables=header["variables"], labels=header["labels"],
            scores=scores.astype(float), engine=header["engine"],
            prior_kind=header["prior_kind"], arity=header["arity"],
        )
        return obj, header.get("config_key", "")


def _config_table(k: int, arity: int) -> np.ndarray:
    return np.array(list(product(status_values(arity), repeat=k)), dtype=int)


def _log_prior_vector(configs: np.ndarray, prior_kind: str, hp: Hyperparams,
                      arity: int) -> np.ndarray:
    """Vectorized _log_prior_factor over a (D x K) configuration table."""
    d, k = configs.shape
    if prior_kind == PRIOR_TEMPORAL:
        deltas = np.abs(np.diff(configs, axis=1))
        total = k - 1
    else:
        counts = np.stack([(configs == v).sum(axis=1) for v in status_values(arity)])
        if arity == 2:
            mode = np.where(counts[0] >= counts[1], 0, 1)
        else:
            c_neg, c_zero, c_pos = counts
            mode = np.where(
                (c_zero >= c_pos) & (c_zero >= c_neg), 0,
                np.where(c_pos >= c_neg, 1, -1),
            )
        deltas = np.abs(configs - mode[:, None])
        total = k
    if arity == 2:
        k1 = deltas.sum(axis=1)
        k2 = total - k1
        return (gammaln(hp.a1 + k1) + gammaln(hp.b1 + k2)
                - gammaln(hp.a1 + k1 + hp.b1 + k2))
    out = np.zeros(d)
    ssum = np.zeros(d)
    for mag, a_i in enumerate(hp.alpha):
        n_i = (deltas == mag).sum(axis=1)
        out += gammaln(a_i + n_i)
        ssum += a_i + n_i
    return out - gammaln(ssum)


def _integrate_exact_block(scores: np.ndarray, configs: np.ndarray,
                           log_prior: np.ndarray, hp: Hyperparams, arity: int,
                           weights: np.ndarray,
                           pin_null_mean: bool) -> np.ndarray:
    """Vectorized enumeration for a block of edges. scores is (B, K)."""
    b, k = scores.shape
    logp = np.tile(log_prior, (b, 1))
    group_sums = {}
    group_sizes = {}
    wsq = weights ** 2
    for g in status_values(arity):
        mask = (configs == g).T.astype(float)           # K x D
        ng = mask.sum(axis=0)                           # D
        s = (scores * weights) @ mask                   # B x D
        q = (scores ** 2) @ mask
        denom = np.sqrt(np.maximum(wsq @ mask, 1e-300))
        pinned = pin_null_mean and g == 0
        with np.errstate(divide="ignore", invalid="ignore"):
            if pinned:
                shape = ng / 2.0 + hp.a2
                sraw = scores @ mask
                term = (-(ng / 2.0) * LOG_2PI + gammaln(shape)
                        - shape * np.log(0.5 * q + hp.b2))
            else:
                shape = (ng - 1) / 2.0 + hp.a2
                sraw = scores @ mask
                bracket = 0.5 * q - np.where(
                    ng > 0, sraw ** 2 / (2.0 * np.maximum(ng, 1)), 0.0
                ) + hp.b2
                term = (-0.5 * np.log(ng) - (ng / 2.0) * LOG_2PI + gammaln(shape)
                        - shape * np.log(bracket))
        logp += np.where(ng > 0, term, 0.0)
        group_sums[g] = (s, denom)
        group_sizes[g] = ng
    logp -= logsumexp(logp, axis=1, keepdims=True)
    probs = np.exp(logp)
    out = np.zeros((b, k))
    for g in status_values(arity):
        mask = (configs == g).T.astype(float)
        ng = group_sizes[g]
        s, denom = group_sums[g]
        contrib = np.where(ng > 0, probs * s / denom, 0.0)
        out += contrib @ mask.T
    return out


def _gibbs_rows(args) -> np.ndarray:
    (scores, rows, prior_kind, hp, arity, seed, sweeps, burn_in, weights,
     pin_null_mean) = args
    out = np.empty((rows.size, scores.shape[1]))
    for pos, row in enumerate(rows):
        posterior = gibbs_posterior(
            scores[row], prior_kind, hp, arity, seed=[seed, int(row)],
            sweeps=sweeps, burn_in=burn_in, pin_null_mean=pin_null_mean,
        )
        out[pos] = bayes_average(scores[row], posterior, weights)
    return out


def resolve_engine(engine: str, k: int, arity: int,
                   cap: int = ENUMERATION_CAP) -> str:
    """Map the requested engine to 'exact' or 'gibbs' given the problem size."""
    if engine not in ("auto", "exact", "gibbs"):
        raise ValidationError(f"unknown engine {engine!r}")
    if engine == "auto":
        return "exact" if arity ** k <= cap else "gibbs"
    if engine == "exact" and arity ** k > cap:
        raise ValidationError(
            f"exact engine refused: {arity}**{k} configurations exceed cap {cap}"
        )
    return engine


def integrate_matrix(
    scores: np.ndarray,
    variables: list[str],
    labels: list[str],
    prior_kind: str = PRIOR_TEMPORAL,
    hp: Hyperparams | None = None,
    arity: int = 2,
    engine: str = "auto",
    cap: int = ENUMERATION_CAP,
    seed: int = 0,
    sweeps: int = DEFAULT_SWEEPS,
    burn_in: int = DEFAULT_BURN_IN,
    weights=None,
    pin_null_mean: bool = False,
    threads: int | None = 1,
) -> IntegratedScores:
    """Integrate an (N x K) score matrix edge by edge.

    The exact engine enumerates configurations with fully vectorized algebra.
    The gibbs engine samples each edge with its own seed stream derived from
    (seed, edge index), so the result is identical for any thread count; rows
    are distributed over a process pool when threads > 1.
    """
    hp = (hp or Hyperparams()).validate()
    scores = np.asarray(scores, dtype=float)
    if scores.ndim != 2:
        raise ValidationError(f"expected an (N, K) score matrix, got {scores.shape}")
    n_rows, k = scores.shape
    if weights is None:
        wvec = np.ones(k)
    else:
        wvec = np.asarray(weights, dtype=float)
        if wvec.shape != (k,):
            raise ValidationError(f"need {k} weights, got shape {wvec.shape}")
        if (wvec <= 0).any():
            raise ValidationError("Stouffer weights must be positive")
    mode = resolve_engine(engine, k, arity, cap)
    if threads is None:
        threads = os.cpu_count() or 1

    if mode == "exact":
        configs = _config_table(k, arity)
        log_prior = _log_prior_vector(configs, prior_kind, hp, arity)
        block = max(1, int(4_000_000 / max(len(configs), 1)))
        out = np.empty_like(scores)
        for start in range(0, n_rows, block):
            stop = min(start + block, n_rows)
            out[start:stop] = _integrate_exact_block(
                scores[start:stop], configs, log_prior, hp, arity, wvec,
                pin_null_mean,
            )
    else:
        rows = np.arange(n_rows)
        if threads > 1 and n_rows > 8:
            chunks = [c for c in np.array_split(rows, threads * 4) if c.size]
            tasks = [
                (scores, c, prior_kind, hp, arity, seed, sweeps, burn_in, wvec,
                 pin_null_mean)
                for c in chunks
            ]
            with ProcessPoolExecutor(max_workers=threads) as pool:
                parts = list(pool.map(_gibbs_rows, tasks))
            out = np.concatenate(parts, axis=0)
        else:
            out = _gibbs_rows(
                (scores, rows, prior_kind, hp, arity, seed, sweeps, burn_in,
                 wvec, pin_null_mean)
            )
    return IntegratedScores(
        variables=list(variables), labels=list(labels), scores=out,
        engine=mode, prior_kind=prior_kind, arity=arity,
    )
