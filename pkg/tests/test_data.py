"""Dataset loading, validation, and round-trip tests."""

import numpy as np
import pytest
from numpy.testing import assert_allclose

from rdcov import (
    ConfigError,
    Dataset,
    EmptyDataError,
    ParseError,
    SchemaError,
    load_csv,
    validate,
    write_csv,
)
from conftest import make_dataset

HEAD_START_CUTOFF = 59.1984


def write_file(path, text):
    path.write_text(text, encoding="utf-8")
    return str(path)


def test_load_csv_normalizes_cutoff(tmp_path):
    path = write_file(
        tmp_path / "hs.csv",
        "mort,pov,urban\n2.1,45.0,0.3\n3.4,59.1984,0.5\n1.0,70.2,0.9\n4.2,61.0,0.1\n",
    )
    data = load_csv(
        path,
        {"outcome": "mort", "score": "pov", "covariates": ["urban"]},
        cutoff=HEAD_START_CUTOFF,
    )
    assert data.n == 4
    assert_allclose(data.x, np.array([45.0, 59.1984, 70.2, 61.0]) - HEAD_START_CUTOFF)
    assert data.cutoff_original == HEAD_START_CUTOFF
    assert data.d == 1


def test_zero_cutoff_identity(tmp_path):
    path = write_file(tmp_path / "c.csv", "y,x\n1,-0.5\n2,0.5\n3,0.0\n")
    data = load_csv(path, {"outcome": "y", "score": "x"}, cutoff=0.0)
    assert_allclose(data.x, [-0.5, 0.5, 0.0])


def test_one_sided_flag(tmp_path):
    path = write_file(tmp_path / "o.csv", "y,x\n1,60\n2,70\n3,65\n")
    data = load_csv(path, {"outcome": "y", "score": "x"}, cutoff=59.0)
    assert data.is_one_sided
    assert data.n_left == 0


def test_treatment_derived_including_zero():
    data = Dataset(y=np.zeros(3), x=np.array([-0.1, 0.0, 0.1]), z=np.empty((3, 0)))
    assert_allclose(data.treat, [0.0, 1.0, 1.0])
    assert data.n_right == 2


def test_missing_rows_dropped_with_count(tmp_path):
    path = write_file(
        tmp_path / "m.csv",
        "y,x,z\n1,0.5,2\n,0.6,3\n2,-0.2,\n3,NA,1\n4,-0.7,5\n",
    )
    data = load_csv(path, {"outcome": "y", "score": "x", "covariates": ["z"]}, cutoff=0.0)
    assert data.n == 2
    assert data.n_dropped == 3


def test_parse_error_names_row_and_column(tmp_path):
    path = write_file(tmp_path / "p.csv", "y,x\n1,0.5\nabc,0.7\n")
    with pytest.raises(ParseError, match=r"'abc' in column 'y', data row 2"):
        load_csv(path, {"outcome": "y", "score": "x"}, cutoff=0.0)


def test_schema_error(tmp_path):
    path = write_file(tmp_path / "s.csv", "y,x\n1,2\n")
    with pytest.raises(SchemaError, match="'w'"):
        load_csv(path, {"outcome": "y", "score": "w"}, cutoff=0.0)


def test_empty_after_drop(tmp_path):
    path = write_file(tmp_path / "e.csv", "y,x\n,0.5\n,0.6\n")
    with pytest.raises(EmptyDataError):
        load_csv(path, {"outcome": "y", "score": "x"}, cutoff=0.0)


def test_nonfinite_cutoff_rejected(tmp_path):
    path = write_file(tmp_path / "f.csv", "y,x\n1,2\n")
    with pytest.raises(ConfigError):
        load_csv(path, {"outcome": "y", "score": "x"}, cutoff=float("nan"))


def test_cluster_ids_mapped_to_codes(tmp_path):
    path = write_file(
        tmp_path / "g.csv",
        "y,x,g\n1,-0.5,a\n2,0.5,b\n3,0.2,a\n4,-0.1,c\n",
    )
    data = load_csv(path, {"outcome": "y", "score": "x", "cluster": "g"}, cutoff=0.0)
    assert data.cluster is not None
    assert_allclose(data.cluster, [0, 1, 0, 2])


def test_round_trip_15_significant_digits(tmp_path):
    data = make_dataset(n=60, d=2, seed=11, cluster_count=5)
    data = Dataset(
        y=data.y, x=data.x, z=data.z, cluster=data.cluster, cutoff_original=59.1984
    )
    out = tmp_path / "rt.csv"
    write_csv(data, str(out))
    schema = {
        "outcome": "y",
        "score": "x",
        "covariates": ["z1", "z2"],
        "cluster": "cluster",
    }
    back = load_csv(str(out), schema, cutoff=59.1984)
    assert back.n == data.n
    assert_allclose(back.y, data.y, rtol=1e-14)
    assert_allclose(back.x, data.x, rtol=1e-14, atol=1e-14)
    assert_allclose(back.z, data.z, rtol=1e-14)
    assert_allclose(back.cluster, data.cluster)


def test_dataset_rejects_nonfinite():
    with pytest.raises(ConfigError):
        Dataset(y=np.array([1.0, np.nan]), x=np.array([0.1, -0.1]), z=np.empty((2, 0)))


def test_dataset_is_immutable():
    data = make_dataset(n=20)
    with pytest.raises(ValueError):
        data.y[0] = 99.0


def test_validate_clean_two_sided():
    data = make_dataset(n=400, seed=3)
    report = validate(data)
    assert report.warnings == ()
    assert report.n_left + report.n_right == 400
    assert report.to_dict()["warnings"] == []


def test_validate_constant_covariate_warns():
    base = make_dataset(n=100, d=1, seed=4)
    z = base.z.copy()
    z[:, 0] = 3.0
    data = Dataset(y=base.y, x=base.x, z=z)
    report = validate(data)
    assert any("collinear with intercept" in w for w in report.warnings)


def test_validate_small_side_warns():
    rng = np.random.default_rng(5)
    x = np.concatenate([[-0.5, -0.3, -0.1], rng.uniform(0, 1, 60)])
    data = Dataset(y=np.zeros(63), x=x, z=np.empty((63, 0)))
    report = validate(data)
    assert any("3 observations left" in w for w in report.warnings)


def test_validate_density_imbalance_warns():
    # all near-cutoff mass on the right side
    x = np.concatenate([np.linspace(-2.0, -1.0, 40), np.linspace(0.001, 0.02, 40)])
    data = Dataset(y=np.zeros(80), x=x, z=np.empty((80, 0)))
    report = validate(data)
    assert any("density imbalance" in w for w in report.warnings)


def test_diagnostics_json_fields():
    report = validate(make_dataset(n=50))
    payload = report.to_dict()
    for key in ("n_left", "n_right", "d", "warnings"):
        assert key in payload
