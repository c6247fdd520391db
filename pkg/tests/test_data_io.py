import json

import numpy as np
import pytest

from mppca_monitor.data_io import (
    DataFormatError,
    Dataset,
    ModelArtifact,
    ModelFormatError,
    Standardization,
    dumps_model,
    format_csv,
    loads_model,
    parse_csv,
    read_csv,
    read_model,
    standardize,
    write_csv,
    write_model,
)
from mppca_monitor.mixture import MixtureParams
from mppca_monitor.monitoring import ThresholdSet
from mppca_monitor.ppca import PpcaParams

from .conftest import random_mixture


class TestCsv:
    def test_complete(self):
        ds = parse_csv("1.0,2.0\n3.0,4.0")
        np.testing.assert_array_equal(ds.values, [[1.0, 2.0], [3.0, 4.0]])
        assert ds.complete and ds.column_names is None and ds.labels is None

    def test_empty_field_is_missing(self):
        ds = parse_csv("1.0,\n,4.0")
        np.testing.assert_array_equal(ds.mask, [[True, False], [False, True]])

    def test_header_and_labels(self):
        ds = parse_csv("a,b,fault\n1,2,0\n3,4,1\n")
        assert ds.column_names == ["a", "b"]
        np.testing.assert_array_equal(ds.labels, [False, True])
        assert ds.values.shape == (2, 2)

    def test_forced_header_flag(self):
        ds = parse_csv("1,2\n3,4\n", header=True)
        assert ds.column_names == ["1", "2"] and len(ds) == 1

    def test_bad_label(self):
        with pytest.raises(DataFormatError, match="fault"):
            parse_csv("a,fault\n1,2\n")

    def test_ragged(self):
        with pytest.raises(DataFormatError, match="row 2"):
            parse_csv("1,2\n3\n")

    def test_non_numeric_location(self):
        with pytest.raises(DataFormatError, match=r"row 3, column 2"):
            parse_csv("a,b\n1,2\n3,x\n")

    def test_decimal_comma_rejected(self):
        with pytest.raises(DataFormatError):
            parse_csv('"1,5",2\n')

    def test_empty_input(self):
        with pytest.raises(DataFormatError, match="no data rows"):
            parse_csv("\n\n")

    def test_round_trip(self, tmp_path, rng):
        X = rng.normal(size=(20, 3))
        X[rng.random(X.shape) < 0.2] = np.nan
        ds = Dataset(X, ["u", "v", "w"], rng.random(20) < 0.5)
        f = tmp_path / "d.csv"
        write_csv(ds, f)
        back = read_csv(f)
        np.testing.assert_array_equal(back.values, X)
        np.testing.assert_array_equal(back.labels, ds.labels)
        assert format_csv(back) == f.read_text()


def artifact(m, **kw):
    th = ThresholdSet(10.5, 3.25, 12.0, 0.99, {"t2": 0.1, "spe": 0.2, "tc2": 0.3}, 1000)
    return ModelArtifact(m, th, {"K": m.K, "seed": 0}, **kw)


class TestModel:
    def test_field_wise_round_trip(self, rng, tmp_path):
        for n in range(10):
            m = random_mixture(rng, int(rng.integers(1, 5)), 6, 2)
            f = tmp_path / f"m{n}.json"
            write_model(artifact(m), f)
            back = read_model(f)
            assert back.mixture.K == m.K
            np.testing.assert_array_equal(back.mixture.pi, m.pi)
            for a, b in zip(m.components, back.mixture.components):
                np.testing.assert_array_equal(a.W, b.W)
                np.testing.assert_array_equal(a.mu, b.mu)
                assert a.sigma2 == b.sigma2
            assert back.thresholds == artifact(m).thresholds
            assert dumps_model(back) == f.read_text()

    def test_trivial_model(self):
        m = MixtureParams((PpcaParams([[1.0], [0.0]], [0.0, 0.0], 1.0),), [1.0])
        a = ModelArtifact(m)
        assert dumps_model(loads_model(dumps_model(a))) == dumps_model(a)

    def test_standardization_round_trip(self, rng):
        m = random_mixture(rng, 2, 3, 1)
        a = artifact(m, standardization=Standardization(rng.normal(size=3), rng.uniform(1, 2, 3)), form="literal")
        back = loads_model(dumps_model(a))
        assert back.form == "literal"
        np.testing.assert_array_equal(back.standardization.scale, a.standardization.scale)

    def test_tampered_pi(self, rng):
        doc = json.loads(dumps_model(artifact(random_mixture(rng, 3, 4, 1))))
        doc["mixture"]["pi"][0] += 0.1
        with pytest.raises(ModelFormatError):
            loads_model(json.dumps(doc))

    def test_version_mismatch(self, rng):
        doc = json.loads(dumps_model(artifact(random_mixture(rng, 1, 4, 1))))
        doc["format_version"] = 99
        with pytest.raises(ModelFormatError, match="format_version"):
            loads_model(json.dumps(doc))

    def test_shape_violation(self, rng):
        doc = json.loads(dumps_model(artifact(random_mixture(rng, 2, 4, 1))))
        doc["mixture"]["components"][1]["mu"] = [0.0]
        with pytest.raises(ModelFormatError, match="component 1"):
            loads_model(json.dumps(doc))

    def test_not_json(self):
        with pytest.raises(ModelFormatError):
            loads_model("{")


class TestStandardize:
    def test_shifted_data(self, rng):
        X = rng.normal(size=(100, 3)) + [100.0, -5.0, 7.0]
        out, rec = standardize(Dataset(X))
        assert np.max(np.abs(out.values.mean(axis=0))) < 1e-12

    def test_already_standard(self, rng):
        X = rng.normal(size=(200, 3))
        X = (X - X.mean(axis=0)) / X.std(axis=0)
        _, rec = standardize(Dataset(X))
        assert np.max(np.abs(rec.mean)) < 1e-12
        assert np.max(np.abs(rec.scale - 1)) < 1e-12

    def test_masked_moment_oracle(self, rng):
        X = rng.normal(size=(50, 2)) * [1.0, 3.0]
        X[rng.random(X.shape) < 0.3] = np.nan
        _, rec = standardize(Dataset(X))
        for j in range(2):
            obs = [v for v in X[:, j] if v == v]
            mean = sum(obs) / len(obs)
            var = sum((v - mean) ** 2 for v in obs) / len(obs)
            assert rec.mean[j] == pytest.approx(mean, rel=1e-12)
            assert rec.scale[j] == pytest.approx(var ** 0.5, rel=1e-12)

    def test_zero_variance_names_column(self):
        X = np.column_stack([np.arange(5.0), np.ones(5)])
        with pytest.raises(ValueError, match="flat"):
            standardize(Dataset(X, ["ok", "flat"]))
