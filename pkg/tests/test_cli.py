import csv
import json

import numpy as np
import pytest

from ecap.cli import RunConfig, main, parse_configurations, parse_grid
from ecap.errors import ConfigError


@pytest.fixture
def toy(tmp_path):
    rng = np.random.default_rng(0)
    X = rng.standard_normal((40, 8))
    y = 3.0 * X[:, 1] - 2.0 * X[:, 6] + rng.standard_normal(40)
    np.savetxt(tmp_path / "x.csv", X, delimiter=",")
    np.savetxt(tmp_path / "y.csv", y, delimiter=",")
    return tmp_path


def run(args, capsys):
    code = main([str(a) for a in args])
    out = capsys.readouterr()
    return code, out.out, out.err


def data_args(d):
    return ["--x", d / "x.csv", "--y", d / "y.csv"]


class TestSelect:
    def test_mpm_matches_enumeration(self, toy, capsys):
        code, out, _ = run(["select", *data_args(toy), "--lambda", "0", "--iters", "300"], capsys)
        assert code == 0
        sel = json.loads(out)
        code, out, _ = run(["enumerate", *data_args(toy), "--lambda", "0"], capsys)
        en = json.loads(out)
        assert sel["mpm"] == en["mpm"] == [1, 6]
        assert sel["map"] == en["map"]

    def test_result_document_contents(self, toy, capsys):
        run(["select", *data_args(toy), "--iters", "50", "--restarts", "1", "--out", toy / "r.json"], capsys)
        doc = json.loads((toy / "r.json").read_text())
        for key in ("data", "settings", "tuning", "mpm", "map", "top_models", "inclusion_probabilities",
                    "coefficients"):
            assert key in doc
        assert set(doc["tuning"]) >= {"sigma2", "phi", "lambda", "lambda_objective"}
        assert set(doc["data"]["standardization"]) >= {"x_mean", "x_scale", "y_mean"}
        assert len(doc["inclusion_probabilities"]) == 8
        assert doc["coefficients"]["configuration"] == doc["mpm"]

    def test_rerun_is_byte_identical(self, toy, capsys):
        for name in ("a.json", "b.json"):
            run(["select", *data_args(toy), "--iters", "60", "--seed", "3", "--out", toy / name], capsys)
        assert (toy / "a.json").read_bytes() == (toy / "b.json").read_bytes()

    def test_malformed_row_names_line(self, toy, capsys):
        lines = (toy / "x.csv").read_text().splitlines()
        lines[4] = lines[4] + ",1.0"
        (toy / "x.csv").write_text("\n".join(lines) + "\n")
        code, _, err = run(["select", *data_args(toy)], capsys)
        assert code == 1
        assert err.startswith("PARSE_ERROR:") and "line 5" in err

    def test_row_count_mismatch(self, toy, capsys):
        (toy / "y.csv").write_text("\n".join((toy / "y.csv").read_text().splitlines()[:-1]) + "\n")
        code, _, err = run(["select", *data_args(toy)], capsys)
        assert code == 1 and err.startswith("DIMENSION_MISMATCH:")


class TestPredict:
    def test_round_trip(self, toy, capsys):
        run(["select", *data_args(toy), "--iters", "50", "--out", toy / "r.json"], capsys)
        X = np.loadtxt(toy / "x.csv", delimiter=",")
        np.savetxt(toy / "new.csv", X[:5], delimiter=",")
        code, out, _ = run(["predict", "--fit", toy / "r.json", "--x", toy / "new.csv"], capsys)
        assert code == 0
        preds = np.array([float(v) for v in out.split()])
        doc = json.loads((toy / "r.json").read_text())
        st = doc["data"]["standardization"]
        S = doc["coefficients"]["configuration"]
        Z = (X[:5, S] - np.array(st["x_mean"])[S]) / np.array(st["x_scale"])[S]
        np.testing.assert_allclose(preds, Z @ np.array(doc["coefficients"]["mean"]) + st["y_mean"], rtol=1e-12)

    def test_wrong_width(self, toy, capsys):
        run(["select", *data_args(toy), "--iters", "20", "--out", toy / "r.json"], capsys)
        np.savetxt(toy / "new.csv", np.ones((2, 5)), delimiter=",")
        code, _, err = run(["predict", "--fit", toy / "r.json", "--x", toy / "new.csv"], capsys)
        assert code == 1 and err.startswith("DIMENSION_MISMATCH:")


class TestCurve:
    def test_point_equals_select_score(self, toy, capsys):
        code, out, _ = run(["select", *data_args(toy), "--lambda", "0.5", "--iters", "100", "--top-k", "300"], capsys)
        sel = json.loads(out)
        scores = {tuple(m["configuration"]): m["log_score"] for m in sel["top_models"]}
        code, out, _ = run(["curve", *data_args(toy), "--configs", "1,6;1", "--grid", "0.5"], capsys)
        assert code == 0
        rows = list(csv.DictReader(out.splitlines()))
        assert [r["configuration"] for r in rows] == ["1 6", "1"]
        assert float(rows[0]["log_score"]) == pytest.approx(scores[(1, 6)], rel=1e-12)
        assert float(rows[1]["log_score"]) == pytest.approx(scores[(1,)], rel=1e-12)

    def test_empty_grid_is_usage_error(self, toy, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["curve", *map(str, data_args(toy)), "--configs", "0", "--grid", ","])
        assert exc.value.code == 2


class TestSimulate:
    def test_unknown_case_is_usage_error(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["simulate", "--case", "9"])
        assert exc.value.code == 2

    def test_single_replication_file_is_deterministic(self, tmp_path, capsys):
        for name in ("a.csv", "b.csv"):
            code, _, _ = run(["simulate", "--case", "5", "--reps", "1", "--iters", "20", "--restarts", "1",
                              "--threads", "1", "--seed", "8", "--out", tmp_path / name], capsys)
            assert code == 0
        text = (tmp_path / "a.csv").read_text()
        assert text == (tmp_path / "b.csv").read_text()
        row = next(csv.DictReader(text.splitlines()))
        assert row["case"] == "5" and row["method"] == "ECAP" and row["reps"] == "1"

    def test_zero_reps_is_usage_error(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["simulate", "--case", "2", "--reps", "0"])
        assert exc.value.code == 2


class TestOtherCommands:
    def test_tune_prints_curve(self, toy, capsys):
        code, out, _ = run(["tune", *data_args(toy), "--grid=-1:1:0.5"], capsys)
        head, curve = out.split("\n\n")
        keys = [line.split("\t")[0] for line in head.splitlines()]
        assert keys == ["lambda", "phi", "sigma2", "g"]
        assert [float(line.split("\t")[0]) for line in curve.split()[::2]] == [-1.0, -0.5, 0.0, 0.5, 1.0]

    def test_screen(self, toy, capsys):
        code, out, _ = run(["screen", *data_args(toy), "--screen-k", "2"], capsys)
        assert code == 0 and sorted(int(v) for v in out.split()) == [1, 6]

    def test_unknown_config_key(self, toy, capsys):
        (toy / "cfg.json").write_text(json.dumps({"lambda": 0.0, "temperature": 2}))
        code, _, err = run(["tune", *data_args(toy), "--config", toy / "cfg.json"], capsys)
        assert code == 1 and err.startswith("CONFIG_ERROR:") and "temperature" in err

    def test_config_flags_override_file(self, toy, capsys):
        (toy / "cfg.json").write_text(json.dumps({"lambda": 1.5, "seed": 4}))
        code, out, _ = run(["tune", *data_args(toy), "--config", toy / "cfg.json", "--lambda", "0.25"], capsys)
        assert out.splitlines()[0] == "lambda\t0.25"

    def test_missing_file(self, tmp_path, capsys):
        code, _, err = run(["screen", "--x", tmp_path / "nope.csv", "--y", tmp_path / "nope.csv"], capsys)
        assert code == 1 and err.startswith("IO_ERROR:")


class TestParsing:
    def test_grid_forms(self):
        np.testing.assert_allclose(parse_grid("-0.2:0.2:0.1"), [-0.2, -0.1, 0.0, 0.1, 0.2])
        np.testing.assert_allclose(parse_grid("1, 2,3"), [1, 2, 3])
        np.testing.assert_allclose(parse_grid({"start": 0, "stop": 1, "step": 0.5}), [0, 0.5, 1])
        np.testing.assert_allclose(parse_grid([0.3]), [0.3])

    @pytest.mark.parametrize("bad", ["", "1:0:0.1", "0:1:0", "a,b"])
    def test_bad_grids(self, bad):
        with pytest.raises(ConfigError):
            parse_grid(bad)

    def test_configurations(self):
        assert parse_configurations("0,1;2") == [(0, 1), (2,)]
        assert parse_configurations("b;a,c", names=["a", "b", "c"]) == [(1,), (0, 2)]
        with pytest.raises(ConfigError):
            parse_configurations("zz")

    def test_run_config_validation(self):
        assert RunConfig.from_mapping({"lambda": "auto"}).lam == "auto"
        for doc in ({"lam": 1.0}, {"alpha": 0.0}, {"g_mode": "local"}, {"lambda": "max"}, {"iterations": 0}):
            with pytest.raises(ConfigError):
                RunConfig.from_mapping(doc)
