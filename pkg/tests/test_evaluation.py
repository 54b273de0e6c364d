import csv
import math
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from jointggm.detection import METHOD_BY
from jointggm.errors import ValidationError
from jointggm.evaluation import (
    auprc,
    auprc_summary,
    confusion,
    confusion_by_condition,
    load_score_csv,
    load_truth_masks,
    powerlaw_fit,
    pr_curve,
    pr_curve_alpha,
    write_pr_csv,
    write_pr_svg,
)
from jointggm.simulate import edge_mask, simulate_replicate, write_replicate


def test_confusion_counts():
    predicted = np.array([[True, False], [True, True], [False, False]])
    truth = np.array([[True, True], [False, True], [False, False]])
    assert confusion(predicted, truth) == {"tp": 2, "fp": 1, "fn": 1, "tn": 2}
    with pytest.raises(ValidationError):
        confusion(predicted, truth[:2])


def test_confusion_by_condition_cumulates(rng):
    predicted = rng.random((40, 3)) < 0.3
    truth = rng.random((40, 3)) < 0.2
    out = confusion_by_condition(predicted, truth, ["a", "b", "c"])
    for key in ("tp", "fp", "fn", "tn"):
        assert out["cumulated"][key] == sum(
            out["per_condition"][lab][key] for lab in ("a", "b", "c")
        )


def test_pr_curve_perfect_separation(rng):
    truth = rng.random((100, 2)) < 0.25
    scores = np.where(truth, rng.normal(9, 0.5, truth.shape),
                      rng.normal(0, 0.5, truth.shape))
    curve = pr_curve(scores, truth)
    assert auprc(curve) == pytest.approx(1.0, abs=1e-12)
    assert not curve.degenerate


def test_pr_curve_random_scores_match_density(rng):
    truth = rng.random(4000) < 0.3
    scores = rng.normal(size=4000)
    value = auprc(pr_curve(scores, truth))
    assert value == pytest.approx(0.3, abs=0.05)


def test_pr_curve_invariant_under_monotone_transform(rng):
    truth = rng.random(500) < 0.2
    scores = rng.normal(size=500)
    a = auprc(pr_curve(scores, truth))
    b = auprc(pr_curve(scores ** 3, truth))
    assert a == pytest.approx(b, abs=1e-12)


def test_pr_curve_truth_as_score_is_exact(rng):
    truth = rng.random(300) < 0.4
    curve = pr_curve(truth.astype(float) * 5.0, truth)
    assert auprc(curve) == pytest.approx(1.0, abs=1e-12)


def test_pr_curve_grids(rng):
    truth = rng.random(2000) < 0.25
    scores = truth * rng.normal(2, 1, 2000) + rng.normal(0, 1, 2000)
    full = auprc(pr_curve(scores, truth))
    coarse = pr_curve(scores, truth, grid=10)
    assert coarse.thresholds.size <= 10
    assert auprc(coarse) == pytest.approx(full, abs=0.05)
    listed = pr_curve(scores, truth, grid=[0.5, 1.5, 2.5])
    assert listed.thresholds.size == 3
    assert (np.diff(listed.recall) >= 0).all()
    with pytest.raises(ValidationError):
        pr_curve(scores, truth, grid=[np.abs(scores).max() + 1.0])
    with pytest.raises(ValidationError):
        pr_curve(scores, truth, grid="fine")


def test_pr_curve_single_point_flags_degenerate(rng):
    truth = rng.random(50) < 0.3
    curve = pr_curve(np.full(50, 2.0), truth)
    assert curve.degenerate
    assert curve.recall[-1] == 1.0
    assert auprc(curve) == pytest.approx(truth.mean(), abs=1e-12)


def test_pr_curve_degenerate_truth(rng):
    scores = rng.normal(size=20)
    with pytest.raises(ValidationError):
        pr_curve(scores, np.zeros(20, dtype=bool))
    with pytest.raises(ValidationError):
        pr_curve(scores, np.ones(20, dtype=bool))


def test_pr_curve_alpha_sweep(rng):
    truth = rng.random(600) < 0.15
    scores = np.where(truth, rng.normal(5, 1, 600), rng.normal(0, 1, 600))
    curve = pr_curve_alpha(scores, truth, [0.01, 0.05, 0.2], method=METHOD_BY)
    assert curve.thresholds.size == 3
    assert (np.diff(curve.recall) >= 0).all()
    assert auprc(curve) > 0.8
    with pytest.raises(ValidationError):
        pr_curve_alpha(scores, truth, [])
    with pytest.raises(ValidationError):
        pr_curve_alpha(scores, truth, [0.05, 1.0])


def test_auprc_summary_frozen():
    out = auprc_summary([0.5, 0.7])
    assert out["n"] == 2
    assert out["mean"] == pytest.approx(0.6)
    assert out["sd"] == pytest.approx(math.sqrt(0.02))
    assert out["se"] == pytest.approx(0.1)
    single = auprc_summary([0.4])
    assert single["sd"] == 0.0 and single["se"] == 0.0
    with pytest.raises(ValidationError):
        auprc_summary([])


def test_powerlaw_fit_exact_inverse_square():
    degrees = [1] * 100 + [2] * 25 + [5] * 4 + [10]
    fit = powerlaw_fit(degrees)
    assert fit.exponent == pytest.approx(2.0, abs=1e-9)
    assert fit.r_squared > 0.999999
    assert fit.n_degrees == 4


def test_powerlaw_fit_needs_three_degrees():
    with pytest.raises(ValidationError):
        powerlaw_fit([1] * 50)
    with pytest.raises(ValidationError):
        powerlaw_fit([0, 0, 1, 2])  # zeros are not node degrees of an edge


def test_pr_csv_round_trip(tmp_path, rng):
    truth = rng.random(200) < 0.3
    scores = truth * 3.0 + rng.normal(size=200)
    curve = pr_curve(scores, truth, grid=8)
    path = tmp_path / "pr.csv"
    write_pr_csv(curve, path)
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == curve.thresholds.size
    np.testing.assert_array_equal(
        [float(r["recall"]) for r in rows], curve.recall
    )
    np.testing.assert_array_equal(
        [float(r["precision"]) for r in rows], curve.precision
    )


def test_pr_svg_is_valid_xml(tmp_path, rng):
    truth = rng.random(200) < 0.3
    curve = pr_curve(truth * 2.0 + rng.normal(size=200), truth)
    path = tmp_path / "pr.svg"
    write_pr_svg(curve, path, title="test curve")
    root = ET.parse(path).getroot()
    assert root.tag.endswith("svg")
    text = path.read_text()
    assert "polyline" in text and "test curve" in text


def test_load_score_csv_rejects_other_files(tmp_path):
    path = tmp_path / "other.csv"
    path.write_text("a,b\n1,2\n")
    with pytest.raises(ValidationError):
        load_score_csv(path)
    empty = tmp_path / "empty.csv"
    empty.write_text("i,j,c1\n")
    with pytest.raises(ValidationError):
        load_score_csv(empty)


def test_load_truth_masks_round_trip(tmp_path):
    rep = simulate_replicate("ar2", 8, 20, 3, "temporal", 0.1, seed=11)
    manifest = write_replicate(tmp_path / "rep", rep,
                               {"p": 8, "kind": "ar2", "seed": 11})
    labels, masks = load_truth_masks(manifest)
    assert labels == rep.labels
    assert masks.shape == (28, 3)
    for k, om in enumerate(rep.precisions):
        np.testing.assert_array_equal(masks[:, k], edge_mask(om))
