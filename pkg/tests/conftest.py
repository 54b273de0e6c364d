import numpy as np
import pytest

from jointggm.data import ConditionBlock, ConditionedDataset


def make_dataset(blocks, variables=None, labels=None, covariates=None):
    """Build a ConditionedDataset from a list of (n, p) arrays."""
    blocks = [np.asarray(b, dtype=float) for b in blocks]
    p = blocks[0].shape[1]
    variables = variables or [f"V{i + 1}" for i in range(p)]
    labels = labels or [f"cond{k + 1}" for k in range(len(blocks))]
    covariates = covariates or [None] * len(blocks)
    return ConditionedDataset(
        variables=list(variables),
        conditions=[
            ConditionBlock(label=lab, values=vals, covariates=cov)
            for lab, vals, cov in zip(labels, blocks, covariates)
        ],
    )


@pytest.fixture
def rng():
    return np.random.default_rng(20260815)


@pytest.fixture
def gaussian_dataset(rng):
    """Three conditions of correlated Gaussian data on 8 variables."""
    p, n = 8, 120
    cov = 0.5 ** np.abs(np.subtract.outer(np.arange(p), np.arange(p)))
    chol = np.linalg.cholesky(cov)
    blocks = [rng.standard_normal((n, p)) @ chol.T for _ in range(3)]
    return make_dataset(blocks)
