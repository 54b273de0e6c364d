"""End-to-end orchestration: scores -> integration -> detection, with caching.

A fit is deterministic given (data, config): edge scoring is closed-form and
the sampler derives every edge's random stream from (seed, edge index), so the
worker count never changes the result. Intermediate matrices are cached in the
output directory; a rerun that only changes the detection level reuses them.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import platform
import sys
from contextlib import contextmanager
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np
import scipy

from . import detection, integration
from .data import ConditionedDataset, standardize
from .detection import GraphEstimate, change_report, detect_edges, write_graph_csv, write_hub_ranking
from .edge_scores import EdgeScoreMatrix, compute_edge_scores
from .errors import AnalysisError, ValidationError
from .integration import (
    ENUMERATION_CAP,
    DEFAULT_BURN_IN,
    DEFAULT_SWEEPS,
    Hyperparams,
    IntegratedScores,
    PRIOR_TEMPORAL,
    PRIOR_SPATIAL,
    bayes_average,
    enumerate_posterior,
    gibbs_posterior,
    integrate_matrix,
    resolve_engine,
)
from .screening import ScreeningResult, write_screened_csv
from .version import __version__

logger = logging.getLogger(__name__)

TOP_EDGE_DIAGNOSTICS = 50


@dataclass
class FitConfig:
    """Every knob of a fit; the resolved copy is dumped next to the outputs."""

    prior: str = PRIOR_TEMPORAL
    arity: int = 2
    alpha1: float = 0.2
    alpha2: float = 0.05
    a1: float = 1.0
    b1: float = 10.0
    a2: float = 1.0
    b2: float = 1.0
    dirichlet: tuple = (10.0, 1.0, 1.0)
    xi: float = 1.0
    engine: str = "auto"
    sweeps: int = DEFAULT_SWEEPS
    burn_in: int = DEFAULT_BURN_IN
    enumeration_cap: int = ENUMERATION_CAP
    screen_method: str = detection.METHOD_EB
    detect_method: str = detection.METHOD_EB
    adjust_covariates: bool = False
    signed_adjusted: bool = True
    pin_null_mean: bool = False
    weights: tuple | None = None
    seed: int = 0
    threads: int | None = None
    two_step: bool = False

    def validate(self) -> "FitConfig":
        if self.prior not in (PRIOR_TEMPORAL, PRIOR_SPATIAL):
            raise ValidationError(f"unknown prior {self.prior!r}")
        if self.arity not in (2, 3):
            raise ValidationError(f"status arity must be 2 or 3, got {self.arity}")
        for name in ("alpha1", "alpha2"):
            value = getattr(self, name)
            if not 0 < value < 1:
                raise ValidationError(f"{name} must be in (0,1), got {value}")
        if self.xi <= 0:
            raise ValidationError(f"neighborhood factor must be positive, got {self.xi}")
        if self.threads is not None and self.threads < 1:
            raise ValidationError(f"threads must be >= 1, got {self.threads}")
        if self.weights is not None and any(w <= 0 for w in self.weights):
            raise ValidationError("condition weights must be positive")
        self.hyperparams()  # range checks live in Hyperparams
        resolve_engine(self.engine, 1, self.arity, self.enumeration_cap)
        return self

    def hyperparams(self) -> Hyperparams:
        return Hyperparams(
            a1=self.a1, b1=self.b1, a2=self.a2, b2=self.b2,
            alpha=tuple(self.dirichlet),
        ).validate()

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            value = getattr(self, f.name)
            if isinstance(value, tuple):
                value = list(value)
            out[f.name] = value
        return out

    @classmethod
    def from_dict(cls, spec: dict) -> "FitConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(spec) - known)
        if unknown:
            raise ValidationError(f"unknown config keys: {', '.join(unknown)}")
        kwargs = dict(spec)
        for name in ("dirichlet", "weights"):
            if kwargs.get(name) is not None:
                kwargs[name] = tuple(kwargs[name])
        return cls(**kwargs).validate()


@dataclass
class FitResult:
    edge_scores: EdgeScoreMatrix
    integrated: IntegratedScores
    graph: GraphEstimate
    screening: list[ScreeningResult] = field(default_factory=list)
    stage1: list[IntegratedScores] | None = None
    group_labels: list[str] | None = None


@contextmanager
def _stage(name: str):
    """Tag errors with the pipeline stage they came from."""
    try:
        yield
    except AnalysisError as exc:
        exc.args = (f"[{name}] {exc}",)
        raise


def _resolve_threads(config: FitConfig) -> int:
    return config.threads if config.threads is not None else (os.cpu_count() or 1)


def fit(dataset: ConditionedDataset, config: FitConfig | None = None) -> FitResult:
    """Single-group fit: screen and score edges, integrate, detect.

    With K=1 the integration step is an exact identity, so the result is the
    plain per-condition network.
    """
    config = (config or FitConfig()).validate()
    threads = _resolve_threads(config)
    with _stage("data"):
        dataset = standardize(dataset.validate())
    with _stage("edge-scores"):
        matrix, screens = compute_edge_scores(
            dataset,
            alpha1=config.alpha1,
            xi=config.xi,
            screen_method=config.screen_method,
            adjust=config.adjust_covariates,
            signed=config.signed_adjusted,
            threads=threads,
        )
    with _stage("integration"):
        integrated = integrate_matrix(
            matrix.scores, matrix.variables, matrix.labels,
            prior_kind=config.prior,
            hp=config.hyperparams(),
            arity=config.arity,
            engine=config.engine,
            cap=config.enumeration_cap,
            seed=config.seed,
            sweeps=config.sweeps,
            burn_in=config.burn_in,
            weights=config.weights,
            pin_null_mean=config.pin_null_mean,
            threads=threads,
        )
    with _stage("detection"):
        graph = detect_edges(
            integrated.scores, matrix.variables, matrix.labels,
            alpha=config.alpha2, method=config.detect_method,
        )
    return FitResult(edge_scores=matrix, integrated=integrated, graph=graph,
                     screening=screens)


def _combined_matrix(groups: list[tuple[str, EdgeScoreMatrix]]) -> EdgeScoreMatrix:
    """Stack per-group score matrices into one with group-qualified labels."""
    first = groups[0][1]
    labels = [f"{name}:{lab}" for name, m in groups for lab in m.labels]
    return EdgeScoreMatrix(
        variables=first.variables,
        labels=labels,
        scores=np.hstack([m.scores for _, m in groups]),
        separator_sizes=np.hstack([m.separator_sizes for _, m in groups]),
        effective_n=np.hstack([m.effective_n for _, m in groups]),
        n_per_condition=[n for _, m in groups for n in m.n_per_condition],
        adjusted=first.adjusted,
    )


def two_step_fit(groups: list[tuple[str, ConditionedDataset]],
                 config: FitConfig | None = None) -> FitResult:
    """Two-group design: integrate within each group over its conditions,
    then per condition across the two groups, then detect on all columns.

    Stage 2 always uses the change-point prior with two states; both groups
    must share variables and condition count.
    """
    config = (config or FitConfig()).validate()
    if len(groups) != 2:
        raise ValidationError(f"two-step fit needs exactly 2 groups, got {len(groups)}")
    (name_a, ds_a), (name_b, ds_b) = groups
    if ds_a.variables != ds_b.variables:
        raise ValidationError("the two groups list different variables")
    if ds_a.k != ds_b.k:
        raise ValidationError(
            f"groups have {ds_a.k} and {ds_b.k} conditions, "
            "two-step integration needs matching counts"
        )
    threads = _resolve_threads(config)
    hp = config.hyperparams()

    matrices: list[tuple[str, EdgeScoreMatrix]] = []
    screens: list[ScreeningResult] = []
    stage1: list[IntegratedScores] = []
    for g, (name, ds) in enumerate(groups):
        with _stage(f"data:{name}"):
            ds = standardize(ds.validate())
        with _stage(f"edge-scores:{name}"):
            matrix, group_screens = compute_edge_scores(
                ds,
                alpha1=config.alpha1,
                xi=config.xi,
                screen_method=config.screen_method,
                adjust=config.adjust_covariates,
                signed=config.signed_adjusted,
                threads=threads,
            )
        matrices.append((name, matrix))
        screens.extend(group_screens)
        with _stage(f"integration:{name}"):
            stage1.append(integrate_matrix(
                matrix.scores, matrix.variables, matrix.labels,
                prior_kind=config.prior,
                hp=hp,
                arity=config.arity,
                engine=config.engine,
                cap=config.enumeration_cap,
                seed=config.seed + g,
                sweeps=config.sweeps,
                burn_in=config.burn_in,
                weights=config.weights,
                pin_null_mean=config.pin_null_mean,
                threads=threads,
            ))

    combined = _combined_matrix(matrices)
    k = ds_a.k
    final = np.empty_like(combined.scores)
    with _stage("integration:across-groups"):
        for t in range(k):
            pair = np.column_stack([stage1[0].scores[:, t], stage1[1].scores[:, t]])
            merged = integrate_matrix(
                pair, combined.variables,
                [f"{name_a}:{t}", f"{name_b}:{t}"],
                prior_kind=PRIOR_TEMPORAL,
                hp=hp,
                arity=config.arity,
                engine="exact",
                cap=config.enumeration_cap,
                seed=config.seed + 2 + t,
                pin_null_mean=config.pin_null_mean,
                threads=threads,
            )
            final[:, t] = merged.scores[:, 0]
            final[:, k + t] = merged.scores[:, 1]
    integrated = IntegratedScores(
        variables=combined.variables, labels=combined.labels, scores=final,
        engine=stage1[0].engine, prior_kind=config.prior, arity=config.arity,
    )
    with _stage("detection"):
        graph = detect_edges(
            integrated.scores, combined.variables, combined.labels,
            alpha=config.alpha2, method=config.detect_method,
        )
    return FitResult(edge_scores=combined, integrated=integrated, graph=graph,
                     screening=screens, stage1=stage1,
                     group_labels=[name_a, name_b])


def _dataset_digest(datasets) -> str:
    h = hashlib.sha256()
    for ds in datasets:
        h.update(",".join(ds.variables).encode())
        for block in ds.conditions:
            h.update(block.label.encode())
            h.update(np.ascontiguousarray(block.values).tobytes())
            if block.covariates is not None:
                h.update(np.ascontiguousarray(block.covariates).tobytes())
    return h.hexdigest()


def _key(parts: dict) -> str:
    return hashlib.sha256(json.dumps(parts, sort_keys=True).encode()).hexdigest()


def _cache_keys(data_digest: str, config: FitConfig) -> tuple[str, str]:
    """Keys for the score cache and the integration cache.

    The detection level and method are deliberately excluded: they only affect
    the final test, so changing them reuses both caches.
    """
    c = config.to_dict()
    score_fields = ("alpha1", "xi", "screen_method", "adjust_covariates",
                    "signed_adjusted", "two_step")
    scores_key = _key({"data": data_digest, "version": __version__,
                       **{f: c[f] for f in score_fields}})
    integ_fields = ("prior", "arity", "a1", "b1", "a2", "b2", "dirichlet",
                    "engine", "sweeps", "burn_in", "enumeration_cap", "seed",
                    "weights", "pin_null_mean")
    integ_key = _key({"scores": scores_key,
                      **{f: c[f] for f in integ_fields}})
    return scores_key, integ_key


def _top_edge_diagnostics(result: FitResult, config: FitConfig) -> list[dict]:
    """Posterior detail for the highest-magnitude integrated edges.

    Recomputes each edge's posterior with the same engine and per-edge seed
    as the fit, so the numbers match the run exactly. Skipped for two-step
    fits, where the final scores come from a second integration pass.
    """
    if result.stage1 is not None:
        return []
    scores = result.edge_scores.scores
    k = scores.shape[1]
    mode = resolve_engine(config.engine, k, config.arity, config.enumeration_cap)
    strength = np.abs(result.integrated.scores).max(axis=1)
    top = np.argsort(-strength, kind="stable")[:TOP_EDGE_DIAGNOSTICS]
    hp = config.hyperparams()
    out = []
    for row in top:
        row = int(row)
        if mode == "exact":
            posterior = enumerate_posterior(
                scores[row], prior_kind=config.prior, hp=hp, arity=config.arity,
                cap=config.enumeration_cap, pin_null_mean=config.pin_null_mean,
            )
        else:
            posterior = gibbs_posterior(
                scores[row], prior_kind=config.prior, hp=hp, arity=config.arity,
                seed=[config.seed, row], sweeps=config.sweeps,
                burn_in=config.burn_in, pin_null_mean=config.pin_null_mean,
            )
        i, j = result.graph.pairs[row]
        out.append({
            "i": int(i) + 1,
            "j": int(j) + 1,
            "pair": [result.graph.variables[i], result.graph.variables[j]],
            "scores": [float(v) for v in scores[row]],
            "integrated": [float(v) for v in result.integrated.scores[row]],
            "top_configs": [
                {"config": list(cfg), "prob": prob}
                for cfg, prob in posterior.top(10)
            ],
        })
    return out


def run_fit(source, config: FitConfig | None = None, out_dir: str | Path = ".",
            dump_screened: bool = False) -> FitResult:
    """Fit with on-disk caching and write every artifact under out_dir.

    source is a ConditionedDataset, or a list of two (label, dataset) pairs
    when config.two_step is set. Scores and integrated matrices are reloaded
    from cache files whose stored key matches the current data and config.
    """
    config = (config or FitConfig()).validate()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    if config.two_step:
        if isinstance(source, ConditionedDataset):
            raise ValidationError("two-step fit needs two (label, dataset) groups")
        datasets = [ds for _, ds in source]
    else:
        if not isinstance(source, ConditionedDataset):
            raise ValidationError("single-group fit takes one ConditionedDataset")
        datasets = [source]
    digest = _dataset_digest(datasets)
    scores_key, integ_key = _cache_keys(digest, config)
    scores_cache = out_dir / "edge_scores.bin"
    integ_cache = out_dir / "integrated.bin"

    cached_integ = _read_cache_if(integ_cache, IntegratedScores, integ_key)
    cached_matrix = _read_cache_if(scores_cache, EdgeScoreMatrix, scores_key)

    if cached_integ is not None and cached_matrix is not None:
        logger.info("reusing cached scores and integration from %s", out_dir)
        with _stage("detection"):
            graph = detect_edges(
                cached_integ.scores, cached_integ.variables, cached_integ.labels,
                alpha=config.alpha2, method=config.detect_method,
            )
        result = FitResult(edge_scores=cached_matrix, integrated=cached_integ,
                           graph=graph, screening=[],
                           group_labels=([name for name, _ in source]
                                         if config.two_step else None))
    elif config.two_step:
        result = two_step_fit(list(source), config)
    else:
        result = fit(source, config)

    _export(result, config, out_dir, dump_screened, scores_key, integ_key,
            from_cache=cached_integ is not None and cached_matrix is not None)
    return result


def _read_cache_if(path: Path, cls, key: str):
    """Load a cache file when it exists and was written under the same key."""
    if not path.exists():
        return None
    try:
        obj, stored = cls.read_cache(path)
    except AnalysisError as exc:
        logger.warning("ignoring unreadable cache %s: %s", path, exc)
        return None
    if stored != key:
        logger.info("cache %s is stale, recomputing", path)
        return None
    return obj


def _export(result: FitResult, config: FitConfig, out_dir: Path,
            dump_screened: bool, scores_key: str, integ_key: str,
            from_cache: bool) -> None:
    with _stage("export"):
        if not from_cache:
            result.edge_scores.write_csv(out_dir / "edge_scores.csv")
            result.edge_scores.write_cache(out_dir / "edge_scores.bin", scores_key)
            result.integrated.write_csv(out_dir / "integrated.csv")
            result.integrated.write_cache(out_dir / "integrated.bin", integ_key)
            if result.stage1 is not None:
                for name, part in zip(result.group_labels, result.stage1):
                    part.write_csv(out_dir / f"stage1_{name}.csv")
            if dump_screened:
                for label, screen in zip(result.edge_scores.labels,
                                         result.screening):
                    safe = label.replace(":", "_")
                    write_screened_csv(screen, out_dir / f"screened_{safe}.csv")
            diagnostics = _top_edge_diagnostics(result, config)
            if diagnostics:
                (out_dir / "posterior_top.json").write_text(
                    json.dumps(diagnostics, indent=2) + "\n"
                )
        write_graph_csv(result.graph, out_dir)
        write_hub_ranking(result.graph, out_dir / "hubs.json")
        (out_dir / "changes.json").write_text(
            json.dumps(change_report(result.graph), indent=2, sort_keys=True) + "\n"
        )
        run_record = {
            "config": config.to_dict(),
            "scores_key": scores_key,
            "integration_key": integ_key,
            "engine": result.integrated.engine,
            "detect_method": result.graph.method,
            "detect_fallback": result.graph.fallback,
            "n_variables": len(result.graph.variables),
            "conditions": result.graph.labels,
            "versions": {
                "package": __version__,
                "python": platform.python_version(),
                "numpy": np.__version__,
                "scipy": scipy.__version__,
            },
            "argv": sys.argv,
        }
        (out_dir / "run.json").write_text(
            json.dumps(run_record, indent=2, sort_keys=True) + "\n"
        )
