import datetime as dt

import numpy as np
import pytest

from vulcast.dataset import (
    SceneSequence,
    SplitSpec,
    acf,
    build_sequences,
    chronological_split,
    filter_volcano,
    load_sequences,
    save_sequences,
    select_window_length,
)
from vulcast.pipeline import ScalerParams, Scene
from vulcast.synthetic import draw_gaps, synthesize_corpus


def make_scene(day, value, vid="v", shape=(4, 4), age=None):
    grid = np.full(shape, float(value))
    fill_age = np.zeros(shape) if age is None else np.full(shape, float(age))
    return Scene(grid=grid, date=dt.date(2020, 1, 1) + dt.timedelta(days=day),
                 fill_age=fill_age, background=0.0, volcano_id=vid)


# ---- autocorrelation -------------------------------------------------------

class TestACF:
    def test_matches_direct_formula(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal(60)
        r = acf(x, 5)
        d = x - x.mean()
        for k in range(1, 6):
            expect = np.sum(d[:-k] * d[k:]) / np.sum(d * d)
            assert r[k - 1] == pytest.approx(expect, abs=1e-12)

    def test_period_four_signal(self):
        x = np.tile([0.0, 1.0, 0.0, -1.0], 12)
        r = acf(x, 8)
        assert r[3] > 0.9 and r[7] > 0.8   # lags 4 and 8 (lag 8 has fewer terms)
        assert r[1] < -0.9                 # lag 2 anti-phase

    def test_bounded_by_one(self):
        rng = np.random.default_rng(1)
        r = acf(rng.standard_normal(200), 12)
        assert np.all(np.abs(r) <= 1.0 + 1e-12)

    def test_constant_rejected(self):
        with pytest.raises(ValueError):
            acf(np.ones(30), 5)

    def test_too_short_rejected(self):
        with pytest.raises(ValueError):
            acf(np.arange(5.0), 5)


class TestWindowLength:
    def test_white_noise_gets_floor(self):
        rng = np.random.default_rng(2)
        # long white-noise series: no significant lag in most draws
        lengths = [select_window_length(rng.standard_normal(400))
                   for _ in range(10)]
        assert min(lengths) == 3

    def test_persistent_series_clamped_to_ceiling(self):
        # near-unit-root series keeps all 12 lags significant
        rng = np.random.default_rng(3)
        x = np.cumsum(rng.standard_normal(300))
        assert select_window_length(x) == 10

    def test_largest_significant_lag_wins(self):
        # strong period-5 signal: lag 10 is the last significant one
        x = np.tile([0.0, 2.0, 0.0, -2.0, 0.0], 20)
        x = x + 0.01 * np.random.default_rng(4).standard_normal(x.size)
        n = select_window_length(x, max_lag=12)
        r = acf(x, 12)
        bound = 1.96 / np.sqrt(x.size)
        expect = int(np.clip(np.nonzero(np.abs(r) > bound)[0][-1] + 1, 3, 10))
        assert n == expect

    def test_pooled_rounds_mean(self):
        rng = np.random.default_rng(5)
        series = [np.cumsum(rng.standard_normal(100)),
                  rng.standard_normal(400),
                  rng.standard_normal(400)]
        per = [select_window_length(s) for s in series]
        assert select_window_length(series, mode="pooled") == round(np.mean(per))

    def test_short_series_rejected(self):
        with pytest.raises(ValueError):
            select_window_length(np.arange(11.0))


# ---- splits ----------------------------------------------------------------

class TestSplit:
    def test_fraction_arithmetic_20_scenes(self):
        scenes = [make_scene(10 * k, k) for k in range(20)]
        split = chronological_split(scenes)
        assert (len(split["train"]), len(split["validation"]),
                len(split["test"])) == (14, 3, 3)

    def test_chronological_no_shuffling(self):
        scenes = [make_scene(5 * k, k) for k in range(30)]
        split = chronological_split(scenes[::-1])   # feed out of order
        ordered = split["train"] + split["validation"] + split["test"]
        dates = [s.date for s in ordered]
        assert dates == sorted(dates)
        assert max(s.date for s in split["train"]) < min(s.date for s in split["test"])

    def test_merged_train_85_15(self):
        scenes = [make_scene(3 * k, k) for k in range(40)]
        split = chronological_split(scenes, SplitSpec.merged_train())
        assert len(split["train"]) == 34
        assert len(split["validation"]) == 0
        assert len(split["test"]) == 6

    def test_per_volcano_partition(self):
        scenes = [make_scene(7 * k, k, vid="a") for k in range(17)]
        scenes += [make_scene(9 * k, k, vid="b") for k in range(13)]
        split = chronological_split(scenes)
        total = split["train"] + split["validation"] + split["test"]
        assert len(total) == 30
        for name in ("train", "validation", "test"):
            counts = {"a": 0, "b": 0}
            for s in split[name]:
                counts[s.volcano_id] += 1
            # each volcano split independently
            grp = 17 if name == "train" else None
        a_train = [s for s in split["train"] if s.volcano_id == "a"]
        assert len(a_train) == int(np.floor(0.70 * 17))

    def test_bad_fractions_rejected(self):
        with pytest.raises(ValueError):
            SplitSpec(0.5, 0.2, 0.2)


# ---- sequences -------------------------------------------------------------

class TestSequences:
    def test_count_and_stride(self):
        scenes = [make_scene(10 * k, k) for k in range(9)]
        seqs = build_sequences(scenes, n=4)
        assert len(seqs) == 5
        # consecutive windows advance by exactly one scene
        assert seqs[1].dates[0] == seqs[0].dates[1]

    def test_gap_structures(self):
        days = [0, 14, 30, 61, 75]
        scenes = [make_scene(d, i) for i, d in enumerate(days)]
        (seq,) = build_sequences(scenes, n=4)
        np.testing.assert_array_equal(seq.dt_following, [14, 16, 31, 14])
        np.testing.assert_array_equal(seq.dt_preceding, [0, 14, 16, 31])

    def test_maps_add_fill_age(self):
        days = [0, 14, 30, 61]
        ages = [0, 5, 2, 0]
        scenes = [make_scene(d, i, age=a) for i, (d, a) in enumerate(zip(days, ages))]
        (seq,) = build_sequences(scenes, n=3)
        # following map measures from scene i itself
        assert seq.dt_maps_following[0, 0, 0] == 14 + 0
        assert seq.dt_maps_following[1, 0, 0] == 16 + 5
        assert seq.dt_maps_following[2, 0, 0] == 31 + 2
        # preceding map measures from scene i-1; first entry is zero
        assert seq.dt_maps_preceding[0, 0, 0] == 0
        assert seq.dt_maps_preceding[1, 0, 0] == 14 + 0
        assert seq.dt_maps_preceding[2, 0, 0] == 16 + 5

    def test_scaler_applied_to_grids_not_gaps(self):
        scenes = [make_scene(10 * k, k) for k in range(5)]
        scaler = ScalerParams(0.0, 4.0)
        (seq,) = build_sequences(scenes, n=4, scaler=scaler)
        np.testing.assert_allclose(seq.inputs[2], 0.5)
        np.testing.assert_allclose(seq.target, 1.0)
        np.testing.assert_array_equal(seq.dt_following, [10, 10, 10, 10])

    def test_short_volcano_skipped_with_warning(self):
        scenes = [make_scene(10 * k, k) for k in range(3)]
        with pytest.warns(UserWarning):
            assert build_sequences(scenes, n=4) == []

    def test_negative_gap_rejected(self):
        kwargs = dict(volcano_id="v", dates=[], inputs=np.zeros((1, 2, 2)),
                      target=np.zeros((2, 2)),
                      dt_maps_preceding=np.zeros((1, 2, 2)),
                      dt_maps_following=np.zeros((1, 2, 2)))
        with pytest.raises(ValueError):
            SceneSequence(dt_preceding=np.array([-1.0]),
                          dt_following=np.array([1.0]), **kwargs)

    def test_filter_volcano(self):
        scenes = [make_scene(10 * k, k, vid="a") for k in range(6)]
        scenes += [make_scene(10 * k, k, vid="b") for k in range(6)]
        seqs = build_sequences(scenes, n=4)
        only_a = filter_volcano(seqs, "a")
        assert {s.volcano_id for s in only_a} == {"a"}
        assert filter_volcano(only_a, "a") == only_a
        with pytest.raises(ValueError):
            filter_volcano(seqs, "zz")


class TestRoundTrip:
    def test_npz_round_trip_exact(self, tmp_path):
        rng = np.random.default_rng(6)
        scenes = []
        day = 0
        for k in range(8):
            s = make_scene(day, 0, shape=(6, 6))
            s.grid[:] = rng.uniform(-5, 40, size=(6, 6))
            s.fill_age[:] = rng.integers(0, 50, size=(6, 6))
            scenes.append(s)
            day += int(rng.integers(5, 60))
        seqs = build_sequences(scenes, n=4)
        path = tmp_path / "seqs.npz"
        save_sequences(path, seqs)
        loaded = load_sequences(path)
        assert len(loaded) == len(seqs)
        for a, b in zip(seqs, loaded):
            assert a.volcano_id == b.volcano_id
            assert a.dates == b.dates
            for f in ("inputs", "target", "dt_preceding", "dt_following",
                      "dt_maps_preceding", "dt_maps_following"):
                np.testing.assert_array_equal(getattr(a, f), getattr(b, f))


# ---- synthetic corpus ------------------------------------------------------

class TestSynthetic:
    def test_gap_sample_mean_near_37(self):
        rng = np.random.default_rng(7)
        gaps = draw_gaps(rng, 20000)
        assert (gaps >= 1).all()
        assert abs(gaps.mean() - 37.0) < 3.0

    def test_corpus_deterministic(self):
        a = synthesize_corpus(seed=11, n_volcanoes=2, n_scenes=6, size=24)
        b = synthesize_corpus(seed=11, n_volcanoes=2, n_scenes=6, size=24)
        assert list(a) == list(b)
        for vid in a:
            for ra, rb in zip(a[vid], b[vid]):
                assert ra.date == rb.date
                np.testing.assert_array_equal(ra.grid, rb.grid)

    def test_different_seeds_differ(self):
        a = synthesize_corpus(seed=11, n_volcanoes=1, n_scenes=4, size=24)
        b = synthesize_corpus(seed=12, n_volcanoes=1, n_scenes=4, size=24)
        ga = next(iter(a.values()))[0].grid
        gb = next(iter(b.values()))[0].grid
        assert not np.array_equal(ga, gb)

    def test_scene_shapes_dates_and_temps(self):
        corpus = synthesize_corpus(seed=8, n_volcanoes=2, n_scenes=10, size=24)
        assert len(corpus) == 2
        for vid, scenes in corpus.items():
            assert len(scenes) == 10
            dates = [s.date for s in scenes]
            assert dates == sorted(dates) and len(set(dates)) == 10
            for s in scenes:
                assert s.grid.shape == (24, 24)
                valid = s.grid[np.isfinite(s.grid)]
                assert valid.size > 0
                assert 240 < valid.min() and valid.max() < 400

    def test_corners_usable_for_background(self):
        from vulcast.pipeline import estimate_background
        corpus = synthesize_corpus(seed=9, n_volcanoes=3, n_scenes=20, size=24)
        for scenes in corpus.values():
            for s in scenes:
                estimate_background(s.grid)   # must not raise
