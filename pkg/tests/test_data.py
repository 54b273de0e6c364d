import numpy as np
import pytest

from jointggm.data import (
    ConditionBlock,
    ConditionedDataset,
    load_dataset,
    load_manifest,
    load_table,
    load_two_group_manifest,
    standardize,
    write_table,
)
from jointggm.errors import ParseError, ValidationError

from conftest import make_dataset


def test_table_round_trip_preserves_floats(tmp_path):
    names = ["alpha", "beta", "gamma"]
    values = np.array([[1.0, -2.5, 3.141592653589793],
                       [1e-17, 7.00000000000001, -0.1]])
    path = tmp_path / "t.csv"
    write_table(path, names, values)
    got_names, got = load_table(path)
    assert got_names == names
    np.testing.assert_array_equal(got, values)


def test_load_table_tsv_delimiter(tmp_path):
    path = tmp_path / "t.tsv"
    path.write_text("a\tb\n1\t2\n3\t4\n")
    names, values = load_table(path)
    assert names == ["a", "b"]
    np.testing.assert_array_equal(values, [[1, 2], [3, 4]])


def test_load_table_reports_cell_location(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("a,b\n1,2\n3,oops\n")
    with pytest.raises(ParseError) as err:
        load_table(path)
    message = str(err.value)
    assert "bad.csv" in message and "line 3" in message and "'b'" in message


def test_load_table_rejects_non_finite(tmp_path):
    path = tmp_path / "inf.csv"
    path.write_text("a,b\n1,inf\n")
    with pytest.raises(ParseError):
        load_table(path)


def test_load_dataset_realigns_columns(tmp_path):
    write_table(tmp_path / "c1.csv", ["x", "y"], np.array([[1., 2.]] * 6))
    write_table(tmp_path / "c2.csv", ["y", "x"], np.array([[20., 10.]] * 6))
    ds = load_dataset([tmp_path / "c1.csv", tmp_path / "c2.csv"])
    assert ds.variables == ["x", "y"]
    np.testing.assert_array_equal(ds.conditions[1].values[0], [10.0, 20.0])


def test_load_dataset_rejects_mismatched_columns(tmp_path):
    write_table(tmp_path / "c1.csv", ["x", "y"], np.zeros((6, 2)))
    write_table(tmp_path / "c2.csv", ["x", "z"], np.zeros((6, 2)))
    with pytest.raises(ValidationError) as err:
        load_dataset([tmp_path / "c1.csv", tmp_path / "c2.csv"])
    assert "y" in str(err.value) and "z" in str(err.value)


def test_validate_rejects_small_samples():
    ds = make_dataset([np.zeros((4, 3))])
    with pytest.raises(ValidationError):
        ds.validate()


def test_validate_rejects_duplicate_variables():
    ds = make_dataset([np.zeros((6, 2))], variables=["x", "x"])
    with pytest.raises(ValidationError):
        ds.validate()


def test_validate_rejects_single_variable():
    ds = make_dataset([np.zeros((6, 1))])
    with pytest.raises(ValidationError):
        ds.validate()


def test_validate_rejects_covariate_row_mismatch():
    block = ConditionBlock(label="c", values=np.zeros((6, 2)),
                           covariates=np.zeros((5, 1)))
    ds = ConditionedDataset(variables=["a", "b"], conditions=[block])
    with pytest.raises(ValidationError):
        ds.validate()


def test_standardize_centers_and_scales(rng):
    ds = make_dataset([rng.normal(5, 3, size=(50, 4)) for _ in range(2)])
    out = standardize(ds)
    for block in out.conditions:
        np.testing.assert_allclose(block.values.mean(axis=0), 0, atol=1e-12)
        np.testing.assert_allclose(block.values.std(axis=0, ddof=1), 1, atol=1e-12)
    # the input is untouched
    assert ds.conditions[0].values.mean() != pytest.approx(0, abs=1e-3)


def test_standardize_idempotent(rng):
    ds = make_dataset([rng.normal(size=(40, 3))])
    once = standardize(ds)
    twice = standardize(once)
    np.testing.assert_allclose(
        once.conditions[0].values, twice.conditions[0].values, atol=1e-10
    )


def test_standardize_names_constant_variable(rng):
    values = rng.normal(size=(30, 3))
    values[:, 1] = 2.0
    ds = make_dataset([values], variables=["a", "flat", "c"], labels=["d1"])
    with pytest.raises(ValidationError) as err:
        standardize(ds)
    assert "flat" in str(err.value) and "d1" in str(err.value)


def test_manifest_round_trip(tmp_path, rng):
    import json

    for k in (1, 2):
        write_table(tmp_path / f"c{k}.csv", ["x", "y", "z"],
                    rng.normal(size=(8, 3)))
    manifest = {"conditions": [
        {"label": "first", "data": "c1.csv"},
        {"label": "second", "data": "c2.csv"},
    ]}
    path = tmp_path / "manifest.json"
    path.write_text(json.dumps(manifest))
    ds = load_manifest(path)
    assert ds.labels == ["first", "second"]
    assert ds.k == 2 and ds.p == 3


def test_manifest_invalid_json(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text("{not json")
    with pytest.raises(ParseError):
        load_manifest(path)


def test_two_group_manifest_needs_two_groups(tmp_path):
    import json

    path = tmp_path / "m.json"
    path.write_text(json.dumps({"groups": [{"label": "only", "conditions": []}]}))
    with pytest.raises(ValidationError):
        load_two_group_manifest(path)


def test_two_group_manifest_checks_condition_counts(tmp_path, rng):
    import json

    for name in ("a1", "a2", "b1"):
        write_table(tmp_path / f"{name}.csv", ["x", "y"], rng.normal(size=(6, 2)))
    manifest = {"groups": [
        {"label": "case", "conditions": [{"data": "a1.csv"}, {"data": "a2.csv"}]},
        {"label": "control", "conditions": [{"data": "b1.csv"}]},
    ]}
    path = tmp_path / "m.json"
    path.write_text(json.dumps(manifest))
    with pytest.raises(ValidationError):
        load_two_group_manifest(path)
