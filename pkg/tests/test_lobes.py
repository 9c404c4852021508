import numpy as np
import pytest

from l80lab.errors import InsufficientDataError
from l80lab.integrate import Trajectory
from l80lab.lobes import (ExpFit, LobeSpec, SojournRecord, detect_transitions,
                          durations_of, fit_exponential, lobe_series,
                          max_sojourn, sojourn_histogram, summary_text,
                          write_histogram_csv, write_records_csv)

from oracle_lobes import oracle_series, oracle_transitions

SPEC = LobeSpec(y_b=0.2)


def test_square_wave_transitions_every_ten_days():
    # +1 for 10 days, -1 for 10 days, smooth-free constructed signal
    dt = 0.1
    block = int(10 / dt)
    series = np.concatenate([([1.0] * block + [-1.0] * block) * 8])
    times, records = detect_transitions(series, dt, SPEC)
    # 14 interior extrema alternate, so 13 transitions at the sign flips
    # (the two boundary blocks are censored)
    assert len(times) == 13
    assert times[0] == pytest.approx(20.0)
    np.testing.assert_allclose(np.diff(times), 10.0, rtol=1e-12)
    assert all(r.duration == pytest.approx(10.0) for r in records)
    # alternating lobes; the first full record is a positive-lobe stay
    assert [r.lobe for r in records[:4]] == ["right", "left", "right", "left"]


def test_series_below_threshold_has_no_transitions():
    t = np.linspace(0, 100, 2000)
    series = 0.15 * np.sin(t)  # max 0.15 < y_b
    times, records = detect_transitions(series, 0.05, SPEC)
    assert len(times) == 0 and records == []


def test_same_type_extrema_do_not_transition():
    # two armed maxima with an unarmed dip in between: no transition
    series = np.array([0.0, 0.5, 0.1, 0.6, 0.0, -0.1, 0.0])
    times, records = detect_transitions(series, 1.0, SPEC)
    assert len(times) == 0

    # now push the dip below -y_b: max->min and min->max both fire
    series2 = np.array([0.0, 0.5, -0.3, 0.6, 0.0, -0.1, 0.0])
    times2, recs2 = detect_transitions(series2, 1.0, SPEC)
    np.testing.assert_array_equal(times2, [2.0, 3.0])
    assert [(r.lobe, r.duration) for r in recs2] == [("left", 1.0)]


def test_matches_brute_force_oracle_on_random_series():
    rng = np.random.default_rng(123)
    for trial in range(100):
        s = oracle_series(rng, quantize=trial % 3 == 0)
        dt = float(rng.uniform(0.05, 0.5))
        yb = float(rng.uniform(0.05, 0.5))
        times, records = detect_transitions(s, dt, LobeSpec(y_b=yb))
        otimes, orecords = oracle_transitions(s, dt, yb)
        np.testing.assert_allclose(times, otimes, rtol=0, atol=0)
        assert [(r.lobe, r.t_enter, r.t_exit) for r in records] == orecords


def test_records_alternate_and_tile_the_span():
    rng = np.random.default_rng(7)
    s = oracle_series(rng, n=4000)
    dt = 0.25
    times, records = detect_transitions(s, dt, LobeSpec(y_b=0.3))
    if len(records) >= 2:
        for r1, r2 in zip(records[:-1], records[1:]):
            assert r1.lobe != r2.lobe
            assert r2.t_enter == r1.t_exit
    if len(times) >= 2:
        span = (s.size - 1) * dt
        total = times[0] + np.sum(durations_of(records)) + (span - times[-1])
        assert total == pytest.approx(span, rel=1e-12)


def test_histogram_single_bin_and_conservation():
    recs = [SojournRecord("left", 10.0 * k, 10.0 * k + 7.5) for k in range(9)]
    centers, counts = sojourn_histogram(recs, bin_width_days=5.0)
    assert counts.sum() == 9
    assert np.count_nonzero(counts) == 1
    assert centers[np.argmax(counts)] == pytest.approx(7.5)


def test_histogram_log_slope_matches_planted_rate():
    rng = np.random.default_rng(11)
    lam = 0.08
    dur = rng.exponential(1.0 / lam, size=40_000)
    centers, counts = sojourn_histogram(dur, bin_width_days=5.0)
    keep = counts >= 10
    slope = np.polyfit(centers[keep], np.log(counts[keep]), 1)[0]
    assert slope == pytest.approx(-lam, rel=0.08)


def test_exponential_fit_recovers_exact_model():
    t = np.arange(0.5, 60.0, 1.0)
    counts = 100.0 * np.exp(-0.05 * t)
    fit = fit_exponential((t, counts), min_count=1)
    assert fit.a == pytest.approx(100.0, abs=1e-8)
    assert fit.b == pytest.approx(-0.05, abs=1e-10)
    assert fit.r2 == pytest.approx(1.0)


def test_fit_count_scaling_moves_a_not_b():
    t = np.arange(2.5, 80.0, 5.0)
    counts = 400.0 * np.exp(-0.07 * t)
    f1 = fit_exponential((t, counts))
    f2 = fit_exponential((t, 3.0 * counts))
    assert f2.a == pytest.approx(3.0 * f1.a, rel=1e-10)
    assert f2.b == pytest.approx(f1.b, abs=1e-12)


def test_fit_time_rescaling_equivariance():
    t = np.arange(2.5, 80.0, 5.0)
    counts = 250.0 * np.exp(-0.06 * t)
    f1 = fit_exponential((t, counts))
    sigma = 3.5
    f2 = fit_exponential((sigma * t, counts))
    assert f2.b == pytest.approx(f1.b / sigma, rel=1e-10)


def test_fit_requires_enough_bins():
    with pytest.raises(InsufficientDataError):
        fit_exponential((np.array([1.0, 2.0]), np.array([10.0, 5.0])))
    # min_count filter can starve the fit
    t = np.arange(0.5, 10.0, 1.0)
    counts = np.array([100, 2, 2, 2, 2, 2, 2, 2, 2, 2], dtype=float)
    with pytest.raises(InsufficientDataError):
        fit_exponential((t, counts), min_count=5)


def test_max_sojourn():
    assert max_sojourn([SojournRecord("left", 0.0, 12.5)]) == 12.5
    recs = [SojournRecord("left", 0, 3), SojournRecord("right", 3, 40)]
    assert max_sojourn(recs) == 37.0
    with pytest.raises(InsufficientDataError):
        max_sojourn([])


def test_lobe_series_component_selection():
    data9 = np.arange(45.0).reshape(5, 9)
    traj9 = Trajectory(0.0, 1.0, data9)
    np.testing.assert_array_equal(lobe_series(traj9, SPEC), data9[:, 5])
    data3 = np.arange(15.0).reshape(5, 3)
    traj3 = Trajectory(0.0, 1.0, data3)
    np.testing.assert_array_equal(lobe_series(traj3, SPEC), data3[:, 2])
    np.testing.assert_array_equal(
        lobe_series(traj3, LobeSpec(y_b=0.1, component=0)), data3[:, 0])


def test_spec_validation():
    with pytest.raises(ValueError):
        LobeSpec(y_b=0.0)
    with pytest.raises(ValueError):
        LobeSpec(y_b=0.2, component=5)


def test_csv_and_summary_outputs(tmp_path):
    recs = [SojournRecord("left", 0.0, 12.0), SojournRecord("right", 12.0, 15.0),
            SojournRecord("left", 15.0, 40.0)]
    write_records_csv(tmp_path / "r.csv", recs)
    lines = (tmp_path / "r.csv").read_text().strip().splitlines()
    assert lines[0] == "lobe,t_enter,t_exit,duration"
    assert lines[1].startswith("left,0,12,12")

    hist = sojourn_histogram(recs, bin_width_days=10.0)
    fit = ExpFit(a=10.0, b=-0.05, fit_t_min=0, fit_t_max=30, r2=0.99, n_bins=3)
    write_histogram_csv(tmp_path / "h.csv", hist, fit)
    text = (tmp_path / "h.csv").read_text()
    assert "bin_center_days,count" in text and "a=10" in text

    s = summary_text(recs, fit)
    assert "max sojourn (days): 25" in s
    assert "exponential fit b (per day): -0.05" in s
