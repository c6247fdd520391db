import csv
import json

import numpy as np
import pytest

from mppca_monitor.cli import main
from mppca_monitor.data_io import read_csv, read_model
from mppca_monitor.ppca import fit_ppca_closed_form, log_likelihood


def simulate(tmp_path, seed=0, **opts):
    train, test = tmp_path / f"train{seed}.csv", tmp_path / f"test{seed}.csv"
    argv = ["simulate", "--seed", str(seed), "--train-out", str(train), "--test-out", str(test)]
    for k, v in opts.items():
        argv += [f"--{k.replace('_', '-')}", str(v)]
    assert main(argv) == 0
    return train, test


def train_model(tmp_path, data, name="model.json", *extra):
    out = tmp_path / name
    assert main(["train", "--data", str(data), "--out", str(out), *extra]) == 0
    return out


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="module")
def scenario(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("scenario")
    train, test = simulate(tmp, seed=1)
    model = train_model(tmp, train, "model.json", "--K", "3", "--q", "3")
    return tmp, train, test, model


class TestTrain:
    def test_single_model_matches_closed_form(self, tmp_path, rng):
        X = rng.normal(size=(300, 4)) @ rng.normal(size=(4, 4))
        data = tmp_path / "d.csv"
        np.savetxt(data, X, delimiter=",")
        model = train_model(tmp_path, data, "m.json", "--K", "1", "--q", "2")
        art = read_model(model)
        ref = log_likelihood(fit_ppca_closed_form(X, 2), X)
        assert art.config["log_likelihood"] == pytest.approx(ref, abs=1e-4)
        assert log_likelihood(art.mixture.components[0], X) == pytest.approx(ref, abs=1e-4)

    def test_same_seed_identical_artifact(self, tmp_path):
        train, _ = simulate(tmp_path, seed=2, n_normal=300)
        a = train_model(tmp_path, train, "a.json", "--K", "3", "--q", "3", "--seed", "7")
        b = train_model(tmp_path, train, "b.json", "--K", "3", "--q", "3", "--seed", "7")
        assert a.read_bytes() == b.read_bytes()

    def test_selects_three_models(self, tmp_path, capsys):
        train, _ = simulate(tmp_path, seed=3, n_normal=600)
        model = train_model(tmp_path, train, "m.json", "--k-max", "4", "--q", "3")
        assert read_model(model).mixture.K == 3
        assert "H(K)" in capsys.readouterr().out

    def test_missing_training_values(self, tmp_path):
        train, _ = simulate(tmp_path, seed=4, n_normal=400, train_missing_rate=0.05)
        assert not read_csv(train).complete
        art = read_model(train_model(tmp_path, train, "m.json", "--K", "3", "--q", "3"))
        assert art.thresholds.tc2 > 0

    def test_standardized(self, tmp_path, scenario):
        _, train, test, _ = scenario
        model = train_model(tmp_path, train, "s.json", "--K", "3", "--q", "3", "--standardize")
        assert read_model(model).standardization is not None
        assert main(["monitor", "--model", str(model), "--data", str(test), "--out", str(tmp_path / "o.csv")]) == 2

    def test_unreadable_data(self, tmp_path, capsys):
        bad = tmp_path / "bad.csv"
        bad.write_text("1,2\n3,abc\n")
        assert main(["train", "--data", str(bad), "--out", str(tmp_path / "m.json"), "--K", "1"]) == 1
        assert "row 2, column 2" in capsys.readouterr().err
        assert not (tmp_path / "m.json").exists()


class TestMonitor:
    def test_normal_stream_alarm_rate(self, tmp_path, scenario):
        _, _, _, model = scenario
        _, normal = simulate(tmp_path, seed=1, magnitude=0, n_test=2000, n_normal=1)
        out = tmp_path / "stats.csv"
        main(["monitor", "--model", str(model), "--data", str(normal), "--out", str(out)])
        alarms = np.array([int(r["alarm"]) for r in read_rows(out)])
        assert 100 * alarms.mean() == pytest.approx(1.0, abs=2.0)

    def test_output_columns_and_exit_code(self, tmp_path, scenario):
        _, _, test, model = scenario
        out = tmp_path / "stats.csv"
        assert main(["monitor", "--model", str(model), "--data", str(test), "--out", str(out)]) == 2
        rows = read_rows(out)
        assert len(rows) == 750
        assert list(rows[0]) == ["index", "t2", "spe", "tc2", "j_t2", "j_spe", "j_tc2", "alarm", "fault"]
        assert rows[0]["index"] == "1"

    def test_quiet_stream_exit_zero(self, tmp_path, scenario):
        _, train, _, model = scenario
        rows = read_csv(train).values[:5]
        quiet = tmp_path / "q.csv"
        np.savetxt(quiet, rows, delimiter=",")
        assert main(["monitor", "--model", str(model), "--data", str(quiet), "--out", str(tmp_path / "o.csv")]) == 0

    def test_does_not_modify_model(self, tmp_path, scenario):
        _, _, test, model = scenario
        before = model.read_bytes()
        main(["monitor", "--model", str(model), "--data", str(test), "--out", str(tmp_path / "o.csv"),
              "--mode", "dual"])
        assert model.read_bytes() == before

    def test_empty_file(self, tmp_path, scenario, capsys):
        _, _, _, model = scenario
        empty = tmp_path / "empty.csv"
        empty.write_text("")
        out = tmp_path / "o.csv"
        assert main(["monitor", "--model", str(model), "--data", str(empty), "--out", str(out)]) == 1
        assert "no data rows" in capsys.readouterr().err
        assert not out.exists()

    def test_dimension_mismatch(self, tmp_path, scenario, capsys):
        _, _, _, model = scenario
        data = tmp_path / "narrow.csv"
        data.write_text("1,2,3\n")
        assert main(["monitor", "--model", str(model), "--data", str(data), "--out", str(tmp_path / "o.csv")]) == 1
        assert "expects 10" in capsys.readouterr().err

    @pytest.mark.slow
    def test_detection_delay(self, tmp_path):
        hits = 0
        for seed in range(10):
            train, test = simulate(tmp_path, seed=seed)
            model = train_model(tmp_path, train, f"m{seed}.json", "--K", "3", "--q", "3")
            out = tmp_path / f"s{seed}.csv"
            main(["monitor", "--model", str(model), "--data", str(test), "--out", str(out)])
            alarms = np.array([int(r["alarm"]) for r in read_rows(out)])
            after = np.flatnonzero(alarms[428:])
            hits += bool(after.size) and after[0] <= 5
        assert hits >= 9


class TestThreshold:
    def test_recompute_into_new_file(self, tmp_path, scenario):
        _, train, _, model = scenario
        out = tmp_path / "t.json"
        assert main(["threshold", "--model", str(model), "--data", str(train), "--alpha", "0.95",
                     "--out", str(out)]) == 0
        a, b = read_model(model), read_model(out)
        assert b.thresholds.alpha == 0.95
        assert b.thresholds.tc2 < a.thresholds.tc2
        np.testing.assert_array_equal(a.mixture.pi, b.mixture.pi)


class TestEvaluate:
    def _alarms(self, path, alarms, labels):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["index", "alarm", "fault"])
            for n, (a, f) in enumerate(zip(alarms, labels)):
                w.writerow([n + 1, int(a), int(f)])

    def test_perfect_detection(self, tmp_path):
        f = tmp_path / "a.csv"
        self._alarms(f, [0] * 10 + [1] * 10, [0] * 10 + [1] * 10)
        out = tmp_path / "r.json"
        assert main(["evaluate", "--alarms", str(f), "--out", str(out)]) == 0
        doc = json.loads(out.read_text())
        assert doc["mar"] == 0 and doc["far"] == 0

    def test_reference_fixture(self, tmp_path, capsys):
        f = tmp_path / "a.csv"
        labels = [0] * 160 + [1] * 800
        alarms = [1 if n in (10, 20, 30, 40) else 0 for n in range(160)] + [0] * 6 + [1] * 794
        self._alarms(f, alarms, labels)
        out = tmp_path / "r.json"
        main(["evaluate", "--alarms", str(f), "--out", str(out)])
        doc = json.loads(out.read_text())
        assert doc["mar"] == pytest.approx(0.75)
        assert doc["far"] == pytest.approx(2.5)
        assert "MAR=0.75% FAR=2.50%" in capsys.readouterr().out

    def test_separate_labels_length_mismatch(self, tmp_path, capsys):
        f = tmp_path / "a.csv"
        self._alarms(f, [0, 1], [0, 1])
        labels = tmp_path / "l.csv"
        labels.write_text("x,fault\n1,0\n2,1\n3,1\n")
        assert main(["evaluate", "--alarms", str(f), "--labels", str(labels)]) == 1
        assert "2 alarms but 3 labels" in capsys.readouterr().err


class TestReport:
    def test_charts(self, tmp_path, scenario):
        _, _, test, model = scenario
        stats = tmp_path / "stats.csv"
        main(["monitor", "--model", str(model), "--data", str(test), "--out", str(stats)])
        a, b = tmp_path / "a", tmp_path / "b"
        assert main(["report", "--stats", str(stats), "--out-dir", str(a)]) == 0
        main(["report", "--stats", str(stats), "--out-dir", str(b)])
        for s in ("t2", "spe", "tc2"):
            svg = (a / f"{s}.svg").read_text()
            assert svg.count('class="threshold"') == 1
            assert svg == (b / f"{s}.svg").read_text()
        series = read_rows(a / "series.csv")
        source = read_rows(stats)
        assert [[r[c] for c in ("index", "t2", "spe", "tc2")] for r in series] == \
               [[r[c] for c in ("index", "t2", "spe", "tc2")] for r in source]

    def test_malformed(self, tmp_path, capsys):
        f = tmp_path / "s.csv"
        f.write_text("index,t2\n1,2\n")
        assert main(["report", "--stats", str(f), "--out-dir", str(tmp_path / "o")]) == 1
        assert "missing columns" in capsys.readouterr().err


class TestSimulate:
    def test_onset_is_one_based(self, tmp_path):
        _, test = simulate(tmp_path, onset=429)
        labels = read_csv(test).labels
        assert not labels[427] and labels[428]

    def test_scenario_file_replay(self, tmp_path):
        spec = tmp_path / "scenario.json"
        a_tr, a_te = tmp_path / "a_tr.csv", tmp_path / "a_te.csv"
        main(["simulate", "--seed", "5", "--missing-rate", "0.05", "--train-out", str(a_tr),
              "--test-out", str(a_te), "--scenario-out", str(spec)])
        b_tr, b_te = tmp_path / "b_tr.csv", tmp_path / "b_te.csv"
        main(["simulate", "--scenario", str(spec), "--train-out", str(b_tr), "--test-out", str(b_te)])
        assert a_te.read_bytes() == b_te.read_bytes()
        assert a_tr.read_bytes() == b_tr.read_bytes()


def test_select_k_writes_table(tmp_path):
    train, _ = simulate(tmp_path, seed=6, n_normal=500, K=2)
    out = tmp_path / "k.json"
    assert main(["select-k", "--data", str(train), "--k-max", "3", "--q", "3", "--out", str(out)]) == 0
    doc = json.loads(out.read_text())
    assert set(doc["h_values"]) == {"1", "2", "3"}
    assert doc["best_K"] == int(min(doc["h_values"], key=doc["h_values"].get))
    assert doc["h_values"]["2"] < doc["h_values"]["1"]
