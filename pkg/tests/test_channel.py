import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rssfuse import channel as ch
from rssfuse.channel import (
    Ieee802154,
    LogDistance,
    LogDistanceClamped,
    RssSample,
    drss,
    fit_log_model,
    invert_rss,
    invert_rss_flagged,
    predict_rss,
    predict_rss_flagged,
    sample_rss,
)

FITTED = LogDistance(-37.3420, 1.9236, 3.0130)


def test_ieee_at_one_meter():
    assert predict_rss(Ieee802154(), 1.0) == -40.3


def test_log_at_reference_distance():
    assert predict_rss(LogDistance(-37.3420, 1.9236), 1.0) == -37.3420


def test_log_at_ten_meters():
    # -37.3420 - 10 * 1.9236 * log10(10)
    assert predict_rss(FITTED, 10.0) == pytest.approx(-56.578, abs=1e-9)


def test_ieee_breakpoint_discontinuity():
    # near branch at 8 m: -0.1 - 40.2 - 20 log10(8)
    assert predict_rss(Ieee802154(), 8.0) == pytest.approx(-58.3618, abs=1e-4)
    # far branch just past 8 m: -0.1 - 58.5 - 33 log10(8.0001)
    assert predict_rss(Ieee802154(), 8.0001) == pytest.approx(-88.4022, abs=1e-4)


def test_vectorized_matches_scalar():
    d = np.array([0.5, 1.0, 7.9, 8.0, 8.1, 20.0])
    for model in (Ieee802154(), FITTED):
        np.testing.assert_array_equal(predict_rss(model, d), [predict_rss(model, v) for v in d])


@pytest.mark.parametrize("bad", [0.0, -1.0, math.nan, math.inf])
def test_bad_distance(bad):
    with pytest.raises(ch.ChannelDomainError):
        predict_rss(FITTED, bad)
    with pytest.raises(ch.ChannelDomainError):
        predict_rss(FITTED, np.array([1.0, bad]))


@pytest.mark.parametrize("kwargs", [dict(a=-40, n=0), dict(a=-40, n=-2), dict(a=-40, n=2, sigma=-1)])
def test_bad_parameters(kwargs):
    with pytest.raises(ch.ChannelDomainError):
        LogDistance(**kwargs)


def test_clamped_flags_out_of_validity():
    model = LogDistanceClamped(-37.3420, 1.9236, 3.0130, d_max=8.1)
    inside = predict_rss_flagged(model, 8.1)
    outside = predict_rss_flagged(model, 12.0)
    assert inside.valid and not outside.valid
    # value is still computed beyond the radius
    assert outside.rss == predict_rss(LogDistance(-37.3420, 1.9236), 12.0)
    assert ch.in_validity(FITTED, 100.0)


@given(
    d1=st.floats(0.01, 100),
    d2=st.floats(0.01, 100),
    n=st.floats(0.5, 6),
)
def test_log_model_strictly_decreasing(d1, d2, n):
    if d1 == d2:
        return
    lo, hi = sorted((d1, d2))
    model = LogDistance(-40.0, n)
    assert predict_rss(model, lo) > predict_rss(model, hi)


@given(st.floats(0.01, 7.99), st.floats(0.01, 7.99))
def test_ieee_decreasing_on_near_branch(d1, d2):
    if d1 != d2:
        lo, hi = sorted((d1, d2))
        assert predict_rss(Ieee802154(), lo) > predict_rss(Ieee802154(), hi)


@given(st.floats(8.001, 200), st.floats(8.001, 200))
def test_ieee_decreasing_on_far_branch(d1, d2):
    if d1 != d2:
        lo, hi = sorted((d1, d2))
        assert predict_rss(Ieee802154(), lo) > predict_rss(Ieee802154(), hi)


def test_slope_matches_finite_difference():
    for model in (FITTED, Ieee802154()):
        for d in (0.7, 3.0, 7.5, 9.0, 25.0):
            h = 1e-6
            fd = (predict_rss(model, d + h) - predict_rss(model, d - h)) / (2 * h)
            assert ch.rss_slope(model, d) == pytest.approx(fd, rel=1e-6)


# sample_rss


def test_zero_sigma_sample_is_prediction():
    model = LogDistance(-40, 2, 0.0)
    rng = np.random.default_rng(3)
    for d in (0.3, 1.0, 17.0):
        assert sample_rss(model, d, rng) == predict_rss(model, d)


def test_sample_statistics():
    model = LogDistance(-37.3420, 1.9236, 3.0130)
    rng = np.random.default_rng(20240501)
    draws = sample_rss(model, np.full(100_000, 5.0), rng)
    assert abs(draws.mean() - predict_rss(model, 5.0)) < 0.05
    assert abs(draws.std(ddof=1) - 3.0130) < 0.05


def test_ieee_noise_uses_its_own_sigma():
    rng = np.random.default_rng(1)
    draws = sample_rss(Ieee802154(), np.full(50_000, 2.0), rng)
    assert abs(draws.std(ddof=1) - 2.3662) < 0.05


def test_sample_determinism():
    d = np.linspace(1, 18, 50)
    a = sample_rss(FITTED, d, np.random.default_rng(99))
    b = sample_rss(FITTED, d, np.random.default_rng(99))
    assert a.tobytes() == b.tobytes()


# invert_rss


def test_invert_at_reference():
    assert invert_rss(FITTED, FITTED.a) == 1.0


def test_invert_hand_case():
    assert invert_rss(LogDistance(-40, 2), -60) == pytest.approx(10.0, rel=1e-12)


def test_invert_round_trip_random():
    rng = np.random.default_rng(5)
    for d in rng.uniform(0.1, 50, 100):
        back = invert_rss(FITTED, predict_rss(FITTED, d))
        assert abs(back - d) / d < 1e-9


@given(st.floats(0.05, 500), st.floats(0.5, 6), st.floats(-80, 0))
def test_invert_round_trip_property(d, n, a):
    model = LogDistance(a, n)
    assert invert_rss(model, predict_rss(model, d)) == pytest.approx(d, rel=1e-9)


def test_invert_ieee_branches():
    model = Ieee802154()
    for d in (0.5, 3.0, 8.0, 9.0, 30.0):
        res = invert_rss_flagged(model, predict_rss(model, d))
        assert res.distance == pytest.approx(d, rel=1e-9)
        assert not res.ambiguous
    # inside the ~30 dB gap at the breakpoint: near-branch answer, flagged
    gap = invert_rss_flagged(model, -70.0)
    assert gap.ambiguous
    assert gap.distance == pytest.approx(10 ** ((-0.1 - 40.2 + 70.0) / 20), rel=1e-12)


def test_invert_rejects_non_finite():
    with pytest.raises(ch.ChannelDomainError):
        invert_rss(FITTED, math.nan)


# drss


def test_drss_subtraction():
    assert drss(-50, -45) == -5


def test_drss_identical_positions():
    refs = np.array([[0.0, 0.0], [8.0, 5.0], [16.0, 0.0]])
    x = np.array([3.0, 2.0])
    d = np.linalg.norm(refs - x, axis=1)
    np.testing.assert_array_equal(drss(predict_rss(FITTED, d), predict_rss(FITTED, d)), 0.0)


@given(st.floats(-90, 0), st.floats(-90, 0), st.floats(0.1, 40), st.floats(0.1, 40))
def test_drss_independent_of_intercept(a1, a2, d_i, d_0):
    m1, m2 = LogDistance(a1, 2.2), LogDistance(a2, 2.2)
    r1 = drss(predict_rss(m1, d_i), predict_rss(m1, d_0))
    r2 = drss(predict_rss(m2, d_i), predict_rss(m2, d_0))
    assert r1 == pytest.approx(r2, abs=1e-9)
    assert r1 == pytest.approx(-22 * (math.log10(d_i) - math.log10(d_0)), abs=1e-9)


def test_drss_rejects_nan():
    with pytest.raises(ch.ChannelDomainError):
        drss(math.nan, -40)


# fit_log_model


def test_fit_noiseless():
    model = LogDistance(-40, 2)
    samples = [RssSample(d, predict_rss(model, d)) for d in (1, 2, 4, 8, 16)]
    fit = fit_log_model(samples)
    assert fit.a == pytest.approx(-40, abs=1e-9)
    assert fit.n == pytest.approx(2, abs=1e-9)
    assert fit.sigma == pytest.approx(0, abs=1e-9)


def test_fit_two_points():
    fit = fit_log_model([RssSample(1, -40), RssSample(10, -60)])
    assert (fit.a, fit.n) == (pytest.approx(-40, abs=1e-12), pytest.approx(2, abs=1e-12))
    assert fit.sigma == pytest.approx(0, abs=1e-12)


def test_fit_noisy_recovers_parameters():
    rng = np.random.default_rng(77)
    d = rng.uniform(1, 18, 1000)
    rss = sample_rss(FITTED, d, rng)
    fit = fit_log_model(list(zip(d, rss)))
    assert abs(fit.a - FITTED.a) <= 1.0
    assert abs(fit.n - FITTED.n) <= 0.10
    assert abs(fit.sigma - FITTED.sigma) <= 0.15


def test_fit_sigma_is_residual_std():
    rng = np.random.default_rng(4)
    d = rng.uniform(1, 18, 200)
    rss = sample_rss(FITTED, d, rng)
    fit = fit_log_model(list(zip(d, rss)))
    resid = rss - (fit.a - fit.n * 10 * np.log10(d))
    assert fit.sigma == pytest.approx(np.std(resid, ddof=1), rel=1e-12)
    assert abs(resid.sum()) < 1e-8


@pytest.mark.parametrize(
    "samples",
    [[], [RssSample(2, -50)], [RssSample(2, -50), RssSample(2, -52), RssSample(2, -49)]],
)
def test_fit_degenerate(samples):
    with pytest.raises(ch.DegenerateDesignError):
        fit_log_model(samples)


def test_csv_round_trip(tmp_path):
    samples = [RssSample(1.5, -41.25), RssSample(3.0, -47.0)]
    path = tmp_path / "s.csv"
    ch.write_samples_csv(path, samples)
    assert ch.read_samples_csv(path) == samples


@pytest.mark.parametrize(
    "text, line",
    [
        ("", 1),
        ("d,rss\n1,-40\n", 1),
        ("distance_m,rss_dbm\n1,-40\n2\n", 3),
        ("distance_m,rss_dbm\n1,-40\nabc,-50\n", 3),
        ("distance_m,rss_dbm\n-1,-40\n", 2),
    ],
)
def test_csv_errors_carry_line(tmp_path, text, line):
    path = tmp_path / "bad.csv"
    path.write_text(text)
    with pytest.raises(ch.CsvFormatError) as info:
        ch.read_samples_csv(path)
    assert info.value.line == line
