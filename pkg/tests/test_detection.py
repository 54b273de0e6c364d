import csv
import json
import logging

import numpy as np
import pytest
from statsmodels.stats.multitest import multipletests

from jointggm.detection import (
    METHOD_BY,
    METHOD_EB,
    by_adjust,
    change_report,
    detect_edges,
    fit_two_group_mixture,
    local_fdr,
    multiple_test,
    normal_pvalues,
    write_graph_csv,
    write_hub_ranking,
)
from jointggm.errors import ValidationError

# adjusted values computed by hand: c(3) = 1 + 1/2 + 1/3 = 11/6,
# 0.001 * 3 * (11/6) / 1 = 0.0055, the others clip at 1
BY_FROZEN = (0.0055, 1.0, 1.0)


def test_by_adjust_frozen_values():
    adjusted = by_adjust(np.array([0.001, 0.5, 0.9]))
    np.testing.assert_allclose(adjusted, BY_FROZEN, atol=1e-15)


def test_by_adjust_matches_statsmodels(rng):
    pvalues = rng.uniform(size=200) ** 2
    ours = by_adjust(pvalues)
    for alpha in (0.01, 0.05, 0.2):
        reject_sm, adjusted_sm, _, _ = multipletests(pvalues, alpha,
                                                     method="fdr_by")
        np.testing.assert_allclose(ours, adjusted_sm, atol=1e-12)
        np.testing.assert_array_equal(ours <= alpha, reject_sm)


def test_by_rejections_monotone_in_alpha(rng):
    z = np.concatenate([rng.normal(size=400), rng.normal(5, 1, size=40)])
    pvalues = normal_pvalues(z)
    small = by_adjust(pvalues) <= 0.01
    large = by_adjust(pvalues) <= 0.1
    assert (large | ~small).all()  # small-alpha rejections subset of large


def test_by_adjust_validation():
    with pytest.raises(ValidationError):
        by_adjust(np.array([]))
    with pytest.raises(ValidationError):
        by_adjust(np.array([0.5, 1.2]))


def test_normal_pvalues_two_sided():
    p = normal_pvalues(np.array([0.0, 1.959963984540054, -1.959963984540054]))
    np.testing.assert_allclose(p, [1.0, 0.05, 0.05], atol=1e-12)


def test_mixture_fit_recovers_components(rng):
    z = np.concatenate([
        rng.normal(0, 1, size=1800),
        rng.normal(4, 1, size=120),
        rng.normal(-4, 1, size=80),
    ])
    params, converged = fit_two_group_mixture(z)
    assert converged
    assert params["mu1"] == pytest.approx(4.0, abs=1.0)
    assert params["pi0"] == pytest.approx(0.9, abs=0.1)
    lfdr = local_fdr(z, params)
    assert ((lfdr >= 0) & (lfdr <= 1)).all()
    assert local_fdr(np.array([0.0]), params)[0] > local_fdr(
        np.array([6.0]), params)[0]


def test_empirical_bayes_rejection_properties(rng):
    z = np.concatenate([rng.normal(size=1800), rng.normal(4.5, 1, size=200)])
    result = multiple_test(z, alpha=0.1, method=METHOD_EB)
    assert result.method == METHOD_EB and not result.fallback
    assert result.reject.any()
    # rejected set is the best prefix of sorted lfdr with running mean <= alpha
    assert result.uncertainty[result.reject].mean() <= 0.1 + 1e-12
    assert result.uncertainty[result.reject].max() <= \
        result.uncertainty[~result.reject].min() + 1e-12


def test_fallback_when_too_few_scores(caplog):
    with caplog.at_level(logging.WARNING, logger="jointggm.detection"):
        result = multiple_test(np.arange(5, dtype=float), alpha=0.05)
    assert result.method == METHOD_BY and result.fallback
    assert any("falling back" in r.message for r in caplog.records)


def test_fallback_when_scores_constant(caplog):
    with caplog.at_level(logging.WARNING, logger="jointggm.detection"):
        result = multiple_test(np.full(50, 2.0), alpha=0.05)
    assert result.method == METHOD_BY and result.fallback


def test_multiple_test_validation(rng):
    with pytest.raises(ValidationError):
        multiple_test(np.array([]), alpha=0.05)
    with pytest.raises(ValidationError):
        multiple_test(rng.normal(size=20), alpha=1.5)
    with pytest.raises(ValidationError):
        multiple_test(rng.normal(size=20), alpha=0.05, method="holm")


def _graph(rng, p=6, k=3, strong=()):
    variables = [f"V{i + 1}" for i in range(p)]
    labels = [f"c{j + 1}" for j in range(k)]
    scores = rng.normal(scale=0.3, size=(p * (p - 1) // 2, k))
    iu = np.triu_indices(p, 1)
    index = {(int(a), int(b)): r for r, (a, b) in enumerate(zip(*iu))}
    for i, j, cond, value in strong:
        scores[index[(i, j)], cond] = value
    return detect_edges(scores, variables, labels, alpha=0.05,
                        method=METHOD_BY), scores


def test_detect_edges_shapes_and_status(rng):
    strong = [(0, 1, 0, 9.0), (0, 2, 1, -9.0), (3, 4, 2, 9.0)]
    graph, scores = _graph(rng, strong=strong)
    assert graph.reject.shape == scores.shape
    np.testing.assert_array_equal(
        graph.status, np.where(graph.reject, np.sign(scores).astype(int), 0)
    )
    assert (0, 1) in graph.edge_list(0)
    assert (0, 2) in graph.edge_list(1)
    assert graph.status[1, 1] == -1  # row of pair (0, 2)


def test_detect_edges_rejects_bad_shape(rng):
    with pytest.raises(ValidationError):
        detect_edges(rng.normal(size=(10, 2)), ["a", "b", "c"], ["x", "y"])


def test_change_report_partitions(rng):
    for _ in range(5):
        strong = [
            (i, j, cond, 9.0)
            for i, j in [(0, 1), (0, 2), (1, 3), (2, 4)]
            for cond in rng.choice(3, size=rng.integers(1, 3), replace=False)
        ]
        graph, _ = _graph(rng, strong=strong)
        report = change_report(graph)
        assert [entry["label"] for entry in report] == graph.labels
        for k, entry in enumerate(report):
            current = set(graph.edge_list(k))
            new = {tuple(e) for e in entry["new"]}
            persisting = {tuple(e) for e in entry["persisting"]}
            assert new | persisting == current
            assert not new & persisting
            assert {tuple(e) for e in entry["disappearing"]} <= current
        assert report[0]["persisting"] == []
        assert report[-1]["disappearing"] == []


def test_graph_csv_one_based_and_parseable(rng, tmp_path):
    graph, _ = _graph(rng, strong=[(0, 1, 0, 9.0), (2, 5, 0, -9.0)])
    paths = write_graph_csv(graph, tmp_path)
    assert [p.name for p in paths] == [f"graph_c{j}.csv" for j in (1, 2, 3)]
    with open(paths[0]) as fh:
        rows = list(csv.DictReader(fh))
    listed = {(int(r["i"]), int(r["j"])) for r in rows}
    assert {(1, 2), (3, 6)} <= listed
    by_pair = {(int(r["i"]), int(r["j"])): r for r in rows}
    assert by_pair[(1, 2)]["name_i"] == "V1"
    assert by_pair[(3, 6)]["status"] == "-1"
    assert float(by_pair[(1, 2)]["score"]) == pytest.approx(9.0)


def test_graph_csv_sanitizes_label_colons(rng, tmp_path):
    scores = rng.normal(scale=0.2, size=(3, 2))
    graph = detect_edges(scores, ["a", "b", "c"], ["g1:t1", "g1:t2"],
                         method=METHOD_BY)
    paths = write_graph_csv(graph, tmp_path)
    assert [p.name for p in paths] == ["graph_g1_t1.csv", "graph_g1_t2.csv"]


def test_hub_ranking_orders_by_degree_then_name(rng, tmp_path):
    strong = [(0, 1, 0, 9.0), (0, 2, 0, 9.0), (0, 3, 0, 9.0), (1, 2, 0, 9.0)]
    graph, _ = _graph(rng, strong=strong)
    path = tmp_path / "hubs.json"
    write_hub_ranking(graph, path)
    payload = json.loads(path.read_text())
    assert payload["alpha"] == 0.05 and payload["method"] == METHOD_BY
    first = payload["conditions"][0]
    assert first["label"] == "c1"
    assert first["degrees"] == graph.degrees(0)
    hubs = [tuple(h) for h in first["hubs"]]
    degs = [d for _, d in hubs]
    assert degs == sorted(degs, reverse=True)
    assert hubs[0] == ("V1", 3)
    assert all(d > 0 for _, d in hubs)
