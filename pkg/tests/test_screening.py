import math

import numpy as np
import pytest
from scipy import stats

from jointggm.errors import ValidationError
from jointggm.simulate import ar2_precision, sample_mvn
from jointggm.screening import (
    CorrelationSummary,
    correlation_pvalues,
    empirical_correlations,
    neighborhood_cap,
    reduce_neighborhoods,
    screen_edges,
    write_screened_csv,
)

# independently computed: z = sqrt(28-3)*atanh(0.5), p = 2*Phi(-z)
FISHER_Z_HALF_N28 = 2.7465307216702737
FISHER_P_HALF_N28 = 0.006022924485883415


def pair_summary(corr, n):
    return CorrelationSummary(corr=np.asarray(corr, dtype=float), n=n)


def test_fisher_transform_frozen_value():
    summary = pair_summary([[1.0, 0.5], [0.5, 1.0]], n=28)
    zscores, pvals = correlation_pvalues(summary)
    assert zscores[0] == pytest.approx(FISHER_Z_HALF_N28, abs=1e-12)
    assert pvals[0] == pytest.approx(FISHER_P_HALF_N28, rel=1e-10)


def test_fisher_transform_sign_symmetry():
    plus = pair_summary([[1.0, 0.5], [0.5, 1.0]], n=28)
    minus = pair_summary([[1.0, -0.5], [-0.5, 1.0]], n=28)
    z_plus, p_plus = correlation_pvalues(plus)
    z_minus, p_minus = correlation_pvalues(minus)
    assert z_minus[0] == -z_plus[0]
    assert p_minus[0] == p_plus[0]


def test_zero_correlation_gives_p_one():
    summary = pair_summary([[1.0, 0.0], [0.0, 1.0]], n=50)
    _, pvals = correlation_pvalues(summary)
    assert pvals[0] == 1.0


def test_fisher_pvalues_match_pearsonr_oracle(rng):
    # scipy's pearsonr uses the exact null; the normal approximation
    # should agree closely at this sample size
    n = 300
    x = rng.standard_normal((n, 4))
    x[:, 1] += 0.4 * x[:, 0]
    summary = empirical_correlations(x)
    _, pvals = correlation_pvalues(summary)
    iu = np.triu_indices(4, 1)
    for idx, (i, j) in enumerate(zip(*iu)):
        ref = stats.pearsonr(x[:, i], x[:, j]).pvalue
        assert pvals[idx] == pytest.approx(ref, abs=5e-3)


def test_correlation_matrix_shape_and_bounds(rng):
    x = rng.standard_normal((60, 6))
    summary = empirical_correlations(x)
    assert summary.n == 60 and summary.p == 6
    np.testing.assert_allclose(summary.corr, summary.corr.T)
    np.testing.assert_array_equal(np.diag(summary.corr), 1.0)
    assert (np.abs(summary.corr) <= 1).all()


def test_identical_and_negated_columns(rng):
    x = rng.standard_normal(40)
    values = np.column_stack([x, x, -x])
    corr = empirical_correlations(values).corr
    assert corr[0, 1] == pytest.approx(1.0)
    assert corr[0, 2] == pytest.approx(-1.0)


def test_correlation_pvalues_need_enough_samples():
    with pytest.raises(ValidationError):
        correlation_pvalues(pair_summary(np.eye(2), n=3))


def test_perfect_correlation_clamps_instead_of_overflowing():
    summary = pair_summary([[1.0, 1.0], [1.0, 1.0]], n=50)
    zscores, pvals = correlation_pvalues(summary)
    assert np.isfinite(zscores[0])
    assert pvals[0] == 0.0


def test_neighborhood_cap_frozen_values():
    assert neighborhood_cap(100, 1.0) == 21  # floor(100 / ln 100)
    assert neighborhood_cap(100, 2.0) == 10
    assert neighborhood_cap(200, 1.0) == int(200 / math.log(200))


def test_screen_edges_by_matches_statsmodels(rng):
    from statsmodels.stats.multitest import multipletests

    n = 120
    x = rng.standard_normal((n, 10))
    x[:, 3] += 0.6 * x[:, 2]
    summary = empirical_correlations(x)
    zscores, pvals = correlation_pvalues(summary)
    result = screen_edges(pvals, alpha1=0.2, method="benjamini-yekutieli",
                          zscores=zscores)
    expected, _, _, _ = multipletests(pvals, alpha=0.2, method="fdr_by")
    np.testing.assert_array_equal(result.screened, expected)


def test_screen_edges_needle_in_uniform_pvalues(rng):
    pvals = rng.uniform(size=1000)
    pvals[123] = 1e-12
    result = screen_edges(pvals, alpha1=0.2, method="benjamini-yekutieli")
    assert result.screened[123]


def test_screen_edges_all_ones_is_empty():
    result = screen_edges(np.ones(45), alpha1=0.2, method="benjamini-yekutieli")
    assert not result.screened.any()


def test_screen_edges_by_monotone_in_alpha(rng):
    pvals = rng.uniform(size=400) ** 2
    low = screen_edges(pvals, alpha1=0.05, method="benjamini-yekutieli")
    high = screen_edges(pvals, alpha1=0.3, method="benjamini-yekutieli")
    assert (high.screened | ~low.screened).all()  # low subset of high


def test_screen_edges_reconstructs_zscores(rng):
    x = rng.standard_normal((80, 5))
    summary = empirical_correlations(x)
    zscores, pvals = correlation_pvalues(summary)
    with_z = screen_edges(pvals, method="benjamini-yekutieli", zscores=zscores)
    without_z = screen_edges(pvals, method="benjamini-yekutieli")
    np.testing.assert_array_equal(with_z.screened, without_z.screened)


def test_null_screening_fraction_bounded():
    hits = []
    for seed in range(20):
        rng = np.random.default_rng(seed)
        x = rng.standard_normal((200, 12))
        summary = empirical_correlations(x)
        zscores, pvals = correlation_pvalues(summary)
        result = screen_edges(pvals, alpha1=0.2, method="benjamini-yekutieli",
                              zscores=zscores)
        hits.append(result.screened.mean())
    assert np.mean(hits) <= 0.4  # 2 * alpha1


def test_screening_retains_strong_true_correlations():
    # on banded-precision data, pairs whose true correlation magnitude is
    # at least 0.3 should survive the 0.2-level screen almost surely;
    # weaker pairs carry too little marginal signal at this sample size
    # for any multiple-test procedure to keep reliably
    p, n = 50, 200
    om = ar2_precision(p)
    cov = np.linalg.inv(om)
    scale = np.sqrt(np.diag(cov))
    true_corr = cov / np.outer(scale, scale)
    strong = np.abs(true_corr[np.triu_indices(p, 1)]) >= 0.3

    x = sample_mvn(om, n, np.random.default_rng(20260815))
    summary = empirical_correlations(x)
    zscores, pvals = correlation_pvalues(summary)
    result = screen_edges(pvals, alpha1=0.2, method="benjamini-yekutieli",
                          zscores=zscores)
    assert strong.sum() >= 40  # the cutoff captures the first-lag band
    assert result.screened[strong].mean() >= 0.95


def screened_mask(p, pairs):
    mask = np.zeros(p * (p - 1) // 2, dtype=bool)
    iu = np.triu_indices(p, 1)
    lookup = {(int(i), int(j)): idx for idx, (i, j) in enumerate(zip(*iu))}
    for pair in pairs:
        mask[lookup[pair]] = True
    return mask


def test_reduce_neighborhoods_orders_by_strength():
    corr = np.array([
        [1.0, 0.9, -0.95, 0.2],
        [0.9, 1.0, 0.5, 0.0],
        [-0.95, 0.5, 1.0, 0.0],
        [0.2, 0.0, 0.0, 1.0],
    ])
    summary = pair_summary(corr, n=400)
    screened = screened_mask(4, [(0, 1), (0, 2), (0, 3), (1, 2)])
    reduced = reduce_neighborhoods(summary, screened, xi=1.0)
    assert list(reduced.neighbors[0]) == [2, 1, 3]
    assert 0 not in reduced.neighbors[0]


def test_reduce_neighborhoods_ties_prefer_smaller_index():
    corr = np.full((4, 4), 0.5)
    np.fill_diagonal(corr, 1.0)
    summary = pair_summary(corr, n=50)
    screened = np.ones(6, dtype=bool)
    reduced = reduce_neighborhoods(summary, screened, xi=1.0)
    assert list(reduced.neighbors[2]) == [0, 1, 3]


def test_reduce_neighborhoods_truncates_at_cap():
    p = 30
    rng = np.random.default_rng(3)
    x = rng.standard_normal((12, p))
    summary = empirical_correlations(x)
    screened = np.ones(p * (p - 1) // 2, dtype=bool)
    reduced = reduce_neighborhoods(summary, screened, xi=1.0)
    cap = neighborhood_cap(12, 1.0)
    assert reduced.cap == cap
    assert all(len(nb) <= cap for nb in reduced.neighbors)
    assert max(len(nb) for nb in reduced.neighbors) == cap


def test_reduce_neighborhoods_subset_of_screened():
    corr = np.array([
        [1.0, 0.8, 0.0],
        [0.8, 1.0, 0.7],
        [0.0, 0.7, 1.0],
    ])
    summary = pair_summary(corr, n=100)
    screened = screened_mask(3, [(0, 1)])
    reduced = reduce_neighborhoods(summary, screened, xi=1.0)
    assert list(reduced.neighbors[0]) == [1]
    assert list(reduced.neighbors[2]) == []


def test_write_screened_csv(tmp_path, rng):
    x = rng.standard_normal((100, 5))
    x[:, 1] = x[:, 0] + 0.1 * rng.standard_normal(100)
    summary = empirical_correlations(x)
    zscores, pvals = correlation_pvalues(summary)
    screen = screen_edges(pvals, alpha1=0.2, method="benjamini-yekutieli",
                          zscores=zscores)
    iu = np.triu_indices(5, 1)
    screen.rvalues = summary.corr[iu]
    path = tmp_path / "screened.csv"
    write_screened_csv(screen, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "i,j,r,p"
    assert any(line.startswith("1,2,") for line in lines[1:])
