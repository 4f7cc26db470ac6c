import json

import pytest

from klsession.catalog import load_catalog
from klsession.cli import main
from klsession.detection import ThresholdTable

FAST = ["--n-samples", "1000", "--m-max", "12"]


@pytest.fixture(scope="module")
def sim_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("sim")
    assert main(["simulate", "--n-items", "120", "--sessions", "400", "--seed", "4", "--out", str(out)]) == 0
    return out


@pytest.fixture(scope="module")
def thresholds(sim_dir):
    path = sim_dir / "thresholds.json"
    assert main(["calibrate", "--catalog", str(sim_dir / "catalog.json"), "--seed", "1", *FAST, "--out", str(path)]) == 0
    return path


def run(capsys, *argv):
    code = main(list(map(str, argv)))
    out = capsys.readouterr()
    return code, out.out, out.err


class TestCalibrate:
    def test_round_trip(self, thresholds):
        table = ThresholdTable.load(thresholds)
        assert table.n_samples == 1000 and table.M_max == 12
        assert set(table.thresholds) == {"color", "brand", "size", "material"}
        assert ThresholdTable.from_dict(json.loads(table.to_json())).to_json() == table.to_json()

    def test_deterministic_across_workers(self, tmp_path, sim_dir, thresholds):
        args = ["calibrate", "--catalog", str(sim_dir / "catalog.json"), "--seed", "1", *FAST]
        assert main([*args, "--workers", "0", "--out", str(tmp_path / "a.json")]) == 0
        assert main([*args, "--workers", "3", "--out", str(tmp_path / "b.json")]) == 0
        assert (tmp_path / "a.json").read_bytes() == thresholds.read_bytes() == (tmp_path / "b.json").read_bytes()

    def test_missing_catalog(self, tmp_path, capsys):
        missing = tmp_path / "nope.json"
        code, _, err = run(capsys, "calibrate", "--catalog", missing, "--out", tmp_path / "t.json")
        assert code == 2 and str(missing) in err

    def test_usage_error(self, capsys):
        with pytest.raises(SystemExit) as info:
            main(["calibrate", "--significance", "0.1"])
        assert info.value.code == 1

    def test_bad_significance(self, tmp_path, sim_dir, capsys):
        code, _, err = run(capsys, "calibrate", "--catalog", sim_dir / "catalog.json", "--significance", "1.5",
                           "--out", tmp_path / "t.json")
        assert code == 1 and "significance" in err

    def test_config_rejects_unknown_keys(self, tmp_path, sim_dir, capsys):
        config = tmp_path / "c.json"
        config.write_text(json.dumps({"alpha": 0.5, "alhpa": 1}))
        code, _, err = run(capsys, "calibrate", "--catalog", sim_dir / "catalog.json", "--config", config,
                           "--out", tmp_path / "t.json")
        assert code == 1 and "alhpa" in err


class TestDetect:
    def test_one_line_per_session(self, sim_dir, thresholds, capsys):
        code, out, _ = run(capsys, "detect", "--catalog", sim_dir / "catalog.json", "--events", sim_dir / "events.csv",
                           "--thresholds", thresholds)
        lines = out.splitlines()
        assert code == 0 and len(lines) == 400
        record = json.loads(lines[0])
        assert {"session_id", "interests", "divergences", "thresholds_applied", "session_length"} <= set(record)

    def test_alpha_zero_detects_nothing(self, tmp_path, sim_dir, capsys):
        table = tmp_path / "t0.json"
        assert main(["calibrate", "--catalog", str(sim_dir / "catalog.json"), "--alpha", "0", *FAST, "--out", str(table)]) == 0
        code, out, _ = run(capsys, "detect", "--catalog", sim_dir / "catalog.json", "--events", sim_dir / "events.csv",
                           "--thresholds", table, "--alpha", "0")
        assert code == 0
        assert all(json.loads(line)["interests"] == [] for line in out.splitlines())

    def test_alpha_mismatch(self, sim_dir, thresholds, capsys):
        code, _, err = run(capsys, "detect", "--catalog", sim_dir / "catalog.json", "--events", sim_dir / "events.csv",
                           "--thresholds", thresholds, "--alpha", "0.9")
        assert code == 1 and "alpha" in err

    def test_null_flag_rate(self, tmp_path, capsys):
        out = tmp_path / "null"
        assert main(["simulate", "--n-items", "200", "--sessions", "3000", "--planted-fraction", "0", "--seed", "2",
                     "--out", str(out)]) == 0
        assert main(["calibrate", "--catalog", str(out / "catalog.json"), "--n-samples", "5000", "--m-max", "10",
                     "--out", str(out / "t.json")]) == 0
        code, text, _ = run(capsys, "detect", "--catalog", out / "catalog.json", "--events", out / "events.csv",
                            "--thresholds", out / "t.json")
        records = [json.loads(line) for line in text.splitlines()]
        rate = sum(len(r["interests"]) for r in records) / (4 * len(records))
        assert code == 0 and 0.035 <= rate <= 0.065


class TestRecommend:
    def test_uniform_lists_first_ids(self, tmp_path, sim_dir, capsys):
        # alpha = 0 detects nothing, so the uniform base order is returned as is.
        table = tmp_path / "t0.json"
        assert main(["calibrate", "--catalog", str(sim_dir / "catalog.json"), "--alpha", "0", *FAST, "--out", str(table)]) == 0
        catalog = load_catalog(sim_dir / "catalog.json")
        ids = sorted(catalog.item_ids)
        code, out, _ = run(capsys, "recommend", "--catalog", sim_dir / "catalog.json", "--thresholds", table,
                           "--scorer", "uniform", "--n", 5, ids[1])
        ranked = [line.split("\t")[1] for line in out.splitlines()]
        assert code == 0 and ranked == [ids[0]] + ids[2:6]

    def test_popularity_with_prior(self, tmp_path, capsys):
        out = tmp_path / "skew"
        assert main(["simulate", "--n-items", "50", "--sessions", "200", "--popularity-skew", "1.0", "--out", str(out)]) == 0
        assert main(["calibrate", "--catalog", str(out / "catalog.json"), "--events", str(out / "events.csv"), *FAST,
                     "--out", str(out / "t.json")]) == 0
        prior = json.loads((out / "prior.json").read_text())
        top = max(zip(prior["probs"], prior["item_ids"]))[1]
        anchor = next(i for i in prior["item_ids"] if i != top)
        code, text, _ = run(capsys, "recommend", "--catalog", out / "catalog.json", "--prior-events", out / "events.csv",
                            "--thresholds", out / "t.json", "--n", 3, anchor)
        assert code == 0 and text.splitlines()[0].split("\t")[1] == top

    def test_unknown_item(self, sim_dir, thresholds, capsys):
        code, _, err = run(capsys, "recommend", "--catalog", sim_dir / "catalog.json", "--thresholds", thresholds, "ghost")
        assert code == 2 and "ghost" in err

    def test_prior_mismatch(self, sim_dir, thresholds, capsys):
        code, _, err = run(capsys, "recommend", "--catalog", sim_dir / "catalog.json", "--thresholds", thresholds,
                           "--prior-events", sim_dir / "events.csv", "item00001")
        assert code == 2 and "global distribution" in err


class TestSimulateEvaluate:
    def test_simulate_deterministic(self, tmp_path):
        for name, workers in (("a", "1"), ("b", "4")):
            assert main(["simulate", "--n-items", "60", "--sessions", "100", "--seed", "8", "--workers", workers,
                         "--out", str(tmp_path / name)]) == 0
        for file in ("catalog.json", "events.csv", "planted.jsonl", "prior.json"):
            assert (tmp_path / "a" / file).read_bytes() == (tmp_path / "b" / file).read_bytes()

    def test_evaluate_writes_csv(self, tmp_path, sim_dir, thresholds, capsys):
        out = tmp_path / "report.csv"
        code, text, _ = run(capsys, "evaluate", "--catalog", sim_dir / "catalog.json", "--events", sim_dir / "events.csv",
                            "--thresholds", thresholds, "--algorithms", "popularity,kl-popularity", "--n", 5, 10,
                            "--out", out)
        lines = out.read_text().splitlines()
        assert code == 0
        assert lines[0] == "algorithm,N,sessions,mean_dcg,mean_hit"
        assert len(lines) == 5
        assert "kl-popularity" in text
        assert (tmp_path / "report.csv.config.json").exists()

    def test_evaluate_needs_thresholds(self, tmp_path, sim_dir, capsys):
        code, _, _ = run(capsys, "evaluate", "--catalog", sim_dir / "catalog.json", "--events", sim_dir / "events.csv",
                         "--algorithms", "kl-static", "--out", tmp_path / "r.csv")
        assert code == 1
