import json
import math

import numpy as np
import pytest

from klsession.catalog import fit_global_model
from klsession.detection import (
    ThresholdTable,
    calibrate_thresholds,
    cell_rng,
    detect_interest,
    quantile_rank,
    resolve_alpha,
    session_divergence,
)
from klsession.errors import ConfigError, DataError
from klsession.simulator import PlantedInterest, grid_catalog, synth_catalog, synth_session
from klsession.distributions import Categorical

# Closed form of the single-draw null divergence for a fair binary property at alpha 0.5.
POINT_MASS_DELTA = 0.0795415058653013033
# Ten identical values, uniform over ten, alpha 0.5.
PLANTED_DELTA = 2.25225537676504484


def kl_oracle(p, q):
    return sum(a * math.log(a / b) for a, b in zip(p, q) if a > 0)


@pytest.fixture(scope="module")
def binary():
    catalog = grid_catalog({"flag": 2})
    return catalog, fit_global_model(catalog, smoothing_epsilon=0.0)


@pytest.fixture(scope="module")
def tenfold():
    catalog = grid_catalog({"planted": 10, "other": 4})
    return catalog, fit_global_model(catalog, smoothing_epsilon=0.0)


@pytest.fixture(scope="module")
def tenfold_table(tenfold):
    return calibrate_thresholds(tenfold[1], 0.5, 0.05, 5000, 12, seed=8)


class TestCalibration:
    def test_point_mass_null(self, binary):
        _, model = binary
        table = calibrate_thresholds(model, alpha=0.5, significance=0.05, n_samples=1000, M_max=1, seed=1)
        assert table.threshold("flag", 1) == pytest.approx(0.07947, abs=1e-4)
        assert table.threshold("flag", 1) == pytest.approx(POINT_MASS_DELTA, abs=1e-12)

    def test_quantile_matches_plain_python_recomputation(self, random_catalog):
        _, model = random_catalog
        table = calibrate_thresholds(model, alpha=0.7, significance=0.1, n_samples=2000, M_max=6, seed=42)
        for index, key in enumerate(model.value_dists):
            ref = list(model.value_dists[key].probs)
            for m in (1, 3, 6):
                counts = cell_rng(42, index, m).multinomial(m, model.value_dists[key].probs, size=2000)
                lam = math.exp(-0.7 * m)
                deltas = sorted(
                    kl_oracle([(1 - lam) * c / m + lam * g for c, g in zip(row, ref)], ref) for row in counts
                )
                rank = math.ceil(0.9 * 2000)
                assert table.threshold(key, m) == pytest.approx(deltas[rank - 1], abs=1e-12)

    def test_quantile_rank_convention(self):
        assert quantile_rank(0.05, 20000) == 19000
        assert quantile_rank(0.05, 1001) == 951
        assert quantile_rank(0.999, 1000) == 1

    def test_same_seed_identical(self, random_catalog):
        _, model = random_catalog
        a = calibrate_thresholds(model, n_samples=1000, M_max=8, seed=5)
        b = calibrate_thresholds(model, n_samples=1000, M_max=8, seed=5, workers=4)
        assert a.to_json() == b.to_json()

    def test_different_seeds_within_monte_carlo_error(self, random_catalog):
        _, model = random_catalog
        key = "brand"
        runs = np.array([
            calibrate_thresholds(model, n_samples=2000, M_max=16, seed=s).thresholds[key] for s in range(30)
        ])
        spread = runs.std(axis=0, ddof=1)
        a = calibrate_thresholds(model, n_samples=2000, M_max=16, seed=100).thresholds[key]
        b = calibrate_thresholds(model, n_samples=2000, M_max=16, seed=101).thresholds[key]
        for m in (4, 8, 16):
            assert abs(a[m - 1] - b[m - 1]) <= 3 * math.sqrt(2) * spread[m - 1]

    def test_thresholds_non_increasing_in_significance(self, random_catalog):
        _, model = random_catalog
        tables = [calibrate_thresholds(model, significance=s, n_samples=1000, M_max=10, seed=3) for s in (0.01, 0.05, 0.2, 0.5)]
        for key in model.value_dists:
            for strict, loose in zip(tables, tables[1:]):
                assert all(l <= s for s, l in zip(strict.thresholds[key], loose.thresholds[key]))

    def test_high_significance_flags_nearly_everything(self, random_catalog, rng):
        catalog, model = random_catalog
        table = calibrate_thresholds(model, significance=0.999, n_samples=5000, M_max=10, seed=3)
        flagged = 0
        for _ in range(400):
            session = synth_session(catalog, model, PlantedInterest({}, 7), rng)
            flagged += "brand" in detect_interest(session, table, model, catalog).interests
        assert flagged / 400 > 0.95

    @pytest.mark.parametrize("kwargs", [{"significance": 0.0}, {"significance": 1.0}, {"n_samples": 999}, {"M_max": 0}])
    def test_invalid_arguments(self, binary, kwargs):
        with pytest.raises(ConfigError):
            calibrate_thresholds(binary[1], **kwargs)

    def test_json_round_trip(self, tmp_path, tenfold_table):
        path = tmp_path / "t.json"
        tenfold_table.save(path)
        loaded = ThresholdTable.load(path)
        assert loaded.to_json() == tenfold_table.to_json()
        data = json.loads(path.read_text())
        assert set(data) >= {"significance", "n_samples", "seed", "M_max", "alpha", "thresholds"}
        assert len(data["thresholds"]["planted"]) == 12

    def test_malformed_table(self, write_json):
        with pytest.raises(DataError):
            ThresholdTable.load(write_json("t.json", {"thresholds": {}}))
        with pytest.raises(DataError, match="M_max"):
            ThresholdTable.load(write_json("t.json", {"significance": 0.05, "n_samples": 1000, "seed": 0, "M_max": 3,
                                                        "alpha": {"k": 0.5}, "thresholds": {"k": [0.1]}}))


class TestSessionDivergence:
    def test_zero_alpha(self, random_catalog, rng):
        catalog, model = random_catalog
        for _ in range(50):
            items = [catalog.item_ids[i] for i in rng.integers(0, len(catalog), size=5)]
            assert session_divergence(items, "color", 0.0, model, catalog) == 0.0

    def test_planted_value(self, tenfold):
        catalog, model = tenfold
        items = [catalog.item_ids[i] for i in range(0, 40, 4)][:1] * 10  # ten views of planted value 0
        delta = session_divergence(items, "planted", 0.5, model, catalog)
        assert delta == pytest.approx(2.2523, abs=1e-3)
        assert delta == pytest.approx(PLANTED_DELTA, abs=1e-12)

    def test_null_sessions_fall_below_threshold(self, tenfold, tenfold_table, rng):
        catalog, model = tenfold
        below = sum(
            session_divergence(synth_session(catalog, model, PlantedInterest({}, 7), rng), "other", 0.5, model, catalog)
            <= tenfold_table.threshold("other", 7)
            for _ in range(2000)
        )
        # Discrete null: at least 1 - significance of the mass sits at or below the quantile.
        assert 0.93 <= below / 2000 <= 1.0

    def test_empty(self, tenfold):
        with pytest.raises(DataError):
            session_divergence([], "planted", 0.5, tenfold[1], tenfold[0])


class TestDetectInterest:
    def test_point_mass_session_is_bit_consistent_with_calibration(self, binary):
        catalog, model = binary
        table = calibrate_thresholds(model, alpha=0.5, n_samples=1000, M_max=1, seed=1)
        report = detect_interest([catalog.item_ids[0]], table, model, catalog)
        assert report.divergences["flag"] == report.thresholds_applied["flag"]
        assert report.interests == ()

    def test_zero_alpha_detects_nothing(self, random_catalog, rng):
        catalog, model = random_catalog
        table = calibrate_thresholds(model, alpha=0.0, n_samples=1000, M_max=10, seed=0)
        table = table.with_overrides({k: 0.01 for k in catalog.schema.keys})
        for _ in range(100):
            items = [catalog.item_ids[i] for i in rng.integers(0, len(catalog), size=int(rng.integers(1, 14)))]
            assert detect_interest(items, table, model, catalog).interests == ()

    def test_planted_session_detected(self, tenfold, tenfold_table):
        catalog, model = tenfold
        report = detect_interest([catalog.item_ids[0]] * 10, tenfold_table, model, catalog)
        assert "planted" in report.interests
        assert report.thresholds_applied["planted"] < 1.0 < report.divergences["planted"]

    def test_long_sessions_use_last_threshold(self, tenfold, tenfold_table):
        catalog, model = tenfold
        report = detect_interest(list(catalog.item_ids[:30]), tenfold_table, model, catalog)
        assert report.session_length == 30
        assert report.thresholds_applied["other"] == tenfold_table.thresholds["other"][-1]

    def test_report_consistency(self, random_catalog, rng):
        catalog, model = random_catalog
        table = calibrate_thresholds(model, n_samples=1000, M_max=10, seed=2)
        targets = {"color": Categorical([0.7] + [0.06] * 5)}
        for i in range(300):
            planted = PlantedInterest(targets if i % 2 else {}, int(rng.integers(1, 15)))
            report = detect_interest(synth_session(catalog, model, planted, rng), table, model, catalog)
            assert set(report.divergences) == set(catalog.schema.keys)
            for key in catalog.schema.keys:
                assert (key in report.interests) == (report.divergences[key] > report.thresholds_applied[key])

    def test_stricter_significance_never_grows_interest(self, random_catalog, rng):
        catalog, model = random_catalog
        loose = calibrate_thresholds(model, significance=0.2, n_samples=1000, M_max=10, seed=9)
        strict = calibrate_thresholds(model, significance=0.02, n_samples=1000, M_max=10, seed=9)
        for _ in range(200):
            session = synth_session(catalog, model, PlantedInterest({}, int(rng.integers(1, 12))), rng)
            assert set(detect_interest(session, strict, model, catalog).interests) <= set(
                detect_interest(session, loose, model, catalog).interests
            )

    def test_alpha_mismatch(self, tenfold, tenfold_table):
        catalog, model = tenfold
        detect_interest(catalog.item_ids[:3], tenfold_table, model, catalog, alpha=0.5)
        with pytest.raises(ConfigError, match="calibration alpha"):
            detect_interest(catalog.item_ids[:3], tenfold_table, model, catalog, alpha=0.4)

    def test_reference_mismatch(self, tenfold, tenfold_table):
        catalog, _ = tenfold
        other = fit_global_model(catalog, [catalog.item_ids[0]] * 5, smoothing_epsilon=0.0)
        with pytest.raises(DataError, match="different global distribution"):
            detect_interest(catalog.item_ids[:3], tenfold_table, other, catalog)

    def test_empty_session(self, tenfold, tenfold_table):
        with pytest.raises(DataError):
            detect_interest([], tenfold_table, tenfold[1], tenfold[0])

    def test_threshold_override(self, tenfold, tenfold_table):
        catalog, model = tenfold
        table = tenfold_table.with_overrides({"planted": 5.0})
        assert "planted" not in detect_interest([catalog.item_ids[0]] * 10, table, model, catalog).interests
        with pytest.raises(DataError):
            tenfold_table.with_overrides({"nope": 1.0})


def test_resolve_alpha():
    assert resolve_alpha(0.3, ["a", "b"]) == {"a": 0.3, "b": 0.3}
    assert resolve_alpha({"default": 0.2, "b": 1.0}, ["a", "b"]) == {"a": 0.2, "b": 1.0}
    assert resolve_alpha({"b": 1.0}, ["a", "b"]) == {"a": 0.5, "b": 1.0}
    with pytest.raises(ConfigError):
        resolve_alpha({"c": 1.0}, ["a"])
    with pytest.raises(ConfigError):
        resolve_alpha(-1.0, ["a"])
