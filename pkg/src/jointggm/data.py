"""Loading, validation and standardization of multi-condition expression data.

A dataset is a collection of K conditions measured over a shared variable set.
Each condition is an (n_k x p) sample matrix, optionally accompanied by a
covariate matrix with matching rows. Conditions may come from separate files;
columns are realigned by name against the first condition.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import ParseError, ValidationError

logger = logging.getLogger(__name__)

MIN_SAMPLES = 5
STANDARDIZE_ATOL = 1e-10


@dataclass
class ConditionBlock:
    """Samples for one condition: values is (n_k, p), covariates (n_k, q) or None."""

    label: str
    values: np.ndarray
    covariates: np.ndarray | None = None
    covariate_names: list[str] = field(default_factory=list)

    @property
    def n(self) -> int:
        return self.values.shape[0]


@dataclass
class ConditionedDataset:
    """K condition blocks over a shared, ordered variable list."""

    variables: list[str]
    conditions: list[ConditionBlock]

    @property
    def p(self) -> int:
        return len(self.variables)

    @property
    def k(self) -> int:
        return len(self.conditions)

    @property
    def labels(self) -> list[str]:
        return [c.label for c in self.conditions]

    def validate(self) -> "ConditionedDataset":
        if self.k < 1:
            raise ValidationError("a dataset needs at least one condition")
        if self.p < 2:
            raise ValidationError(f"need at least 2 variables, got {self.p}")
        if len(set(self.variables)) != self.p:
            dupes = sorted({v for v in self.variables if self.variables.count(v) > 1})
            raise ValidationError(f"duplicate variable names: {dupes}")
        seen = set()
        for block in self.conditions:
            if block.label in seen:
                raise ValidationError(f"duplicate condition label {block.label!r}")
            seen.add(block.label)
            if block.values.ndim != 2 or block.values.shape[1] != self.p:
                raise ValidationError(
                    f"condition {block.label!r}: expected shape (n, {self.p}), "
                    f"got {block.values.shape}"
                )
            if block.n < MIN_SAMPLES:
                raise ValidationError(
                    f"condition {block.label!r} has {block.n} samples, "
                    f"need at least {MIN_SAMPLES}"
                )
            if not np.isfinite(block.values).all():
                raise ValidationError(
                    f"condition {block.label!r} contains non-finite values"
                )
            if block.covariates is not None:
                if block.covariates.ndim != 2 or block.covariates.shape[0] != block.n:
                    raise ValidationError(
                        f"condition {block.label!r}: covariates have "
                        f"{block.covariates.shape[0]} rows, values have {block.n}"
                    )
                if not np.isfinite(block.covariates).all():
                    raise ValidationError(
                        f"condition {block.label!r} covariates contain non-finite values"
                    )
        return self


def _delimiter_for(path: Path) -> str:
    return "\t" if path.suffix.lower() in (".tsv", ".tab") else ","


def load_table(path: str | Path) -> tuple[list[str], np.ndarray]:
    """Read one delimited file: header row of names, numeric sample rows.

    Delimiter is chosen by extension (.tsv/.tab are tab, anything else comma).
    Every cell must parse as a finite float; the error names the offending cell.
    """
    path = Path(path)
    delim = _delimiter_for(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh, delimiter=delim)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: file is empty") from None
        names = [h.strip() for h in header]
        rows: list[list[float]] = []
        for ridx, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != len(names):
                raise ParseError(
                    f"{path}: line {ridx} has {len(row)} fields, header has {len(names)}"
                )
            vals = []
            for cidx, cell in enumerate(row):
                text = cell.strip()
                try:
                    v = float(text)
                except ValueError:
                    raise ParseError(
                        f"{path}: non-numeric value {text!r} at line {ridx}, "
                        f"column {names[cidx]!r}"
                    ) from None
                if not np.isfinite(v):
                    raise ParseError(
                        f"{path}: non-finite value {text!r} at line {ridx}, "
                        f"column {names[cidx]!r}"
                    )
                vals.append(v)
            rows.append(vals)
    if not rows:
        raise ParseError(f"{path}: no data rows")
    return names, np.asarray(rows, dtype=float)


def write_table(path: str | Path, names: list[str], values: np.ndarray) -> None:
    """Write a table in the format load_table reads, full float precision."""
    path = Path(path)
    delim = _delimiter_for(path)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, delimiter=delim, lineterminator="\n")
        writer.writerow(names)
        for row in np.atleast_2d(values):
            writer.writerow([f"{v:.17g}" for v in row])


def _align(names: list[str], values: np.ndarray, canonical: list[str], where: str) -> np.ndarray:
    if names == canonical:
        return values
    if sorted(names) != sorted(canonical):
        missing = sorted(set(canonical) - set(names))
        extra = sorted(set(names) - set(canonical))
        raise ValidationError(
            f"{where}: variable names do not match the first condition "
            f"(missing {missing}, unexpected {extra})"
        )
    order = [names.index(v) for v in canonical]
    logger.debug("%s: realigning %d columns by name", where, len(order))
    return values[:, order]


def load_dataset(
    data_paths: list[str | Path],
    labels: list[str] | None = None,
    covariate_paths: list[str | Path | None] | None = None,
) -> ConditionedDataset:
    """Load one condition per file and assemble a validated dataset.

    Variable columns are realigned by name to the first file's order, so files
    listing the same variables in different orders load identically.
    """
    if not data_paths:
        raise ValidationError("no data files given")
    if labels is None:
        labels = [Path(p).stem for p in data_paths]
    if len(labels) != len(data_paths):
        raise ValidationError(
            f"{len(labels)} labels for {len(data_paths)} data files"
        )
    if covariate_paths is None:
        covariate_paths = [None] * len(data_paths)
    if len(covariate_paths) != len(data_paths):
        raise ValidationError(
            f"{len(covariate_paths)} covariate files for {len(data_paths)} data files"
        )

    canonical: list[str] | None = None
    blocks = []
    for label, dpath, cpath in zip(labels, data_paths, covariate_paths):
        names, values = load_table(dpath)
        if canonical is None:
            canonical = names
        values = _align(names, values, canonical, str(dpath))
        covariates = None
        cov_names: list[str] = []
        if cpath is not None:
            cov_names, covariates = load_table(cpath)
            if covariates.shape[0] != values.shape[0]:
                raise ValidationError(
                    f"{cpath}: {covariates.shape[0]} covariate rows, "
                    f"{dpath} has {values.shape[0]} sample rows"
                )
        blocks.append(
            ConditionBlock(label=label, values=values, covariates=covariates,
                           covariate_names=cov_names)
        )
    assert canonical is not None
    return ConditionedDataset(variables=canonical, conditions=blocks).validate()


def _manifest_conditions(entries: list[dict], base: Path) -> ConditionedDataset:
    paths, labels, covs = [], [], []
    for i, entry in enumerate(entries):
        if "data" not in entry:
            raise ValidationError(f"manifest condition {i}: missing 'data' path")
        paths.append(base / entry["data"])
        labels.append(entry.get("label", Path(entry["data"]).stem))
        cov = entry.get("covariates")
        covs.append(base / cov if cov else None)
    return load_dataset(paths, labels=labels, covariate_paths=covs)


def load_manifest(path: str | Path) -> ConditionedDataset:
    """Load a dataset described by a JSON manifest.

    Expected shape: {"conditions": [{"label": ..., "data": ..., "covariates": ...}, ...]}
    with paths resolved relative to the manifest file.
    """
    path = Path(path)
    try:
        spec = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON ({exc})") from None
    if "conditions" not in spec:
        raise ValidationError(f"{path}: manifest has no 'conditions' list")
    return _manifest_conditions(spec["conditions"], path.parent)


def load_two_group_manifest(path: str | Path) -> list[tuple[str, ConditionedDataset]]:
    """Load a two-group manifest: {"groups": [{"label", "conditions": [...]}, ...]}."""
    path = Path(path)
    try:
        spec = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON ({exc})") from None
    groups = spec.get("groups")
    if not groups or len(groups) != 2:
        raise ValidationError(f"{path}: two-group manifest needs exactly 2 groups")
    out = []
    for g, entry in enumerate(groups):
        label = entry.get("label", f"group{g + 1}")
        ds = _manifest_conditions(entry.get("conditions", []), path.parent)
        out.append((label, ds))
    if out[0][1].variables != out[1][1].variables:
        raise ValidationError(f"{path}: the two groups list different variables")
    if out[0][1].k != out[1][1].k:
        raise ValidationError(
            f"{path}: groups have {out[0][1].k} and {out[1][1].k} conditions, "
            "two-step integration needs matching counts"
        )
    return out


def standardize(dataset: ConditionedDataset) -> ConditionedDataset:
    """Center and scale every variable to mean 0, sd 1 within each condition.

    Uses the n-1 denominator. Covariates are left untouched. Applying this to
    an already standardized dataset reproduces it up to roundoff.
    """
    blocks = []
    for block in dataset.conditions:
        mean = block.values.mean(axis=0)
        sd = block.values.std(axis=0, ddof=1)
        flat = np.flatnonzero(sd == 0)
        if flat.size:
            name = dataset.variables[flat[0]]
            raise ValidationError(
                f"condition {block.label!r}: variable {name!r} has zero variance"
            )
        blocks.append(replace(block, values=(block.values - mean) / sd))
    return ConditionedDataset(variables=list(dataset.variables), conditions=blocks)
