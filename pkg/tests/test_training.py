import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import oracle_case
from thz_irs.channel import ArrayGeometry, PathParams, ChannelRealization, los_channel, on_grid_realization
from thz_irs.codebooks import build_codebook, narrow_sines
from thz_irs.training import (MeasurementModel, TrainingError, TrainingOutcome, canonical_delta,
                              delta_candidates, detect, detection_rate, exhaustive_reflect,
                              phase1, search_count, theta_ref, train)


def test_theta_ref_examples():
    np.testing.assert_allclose(theta_ref(0.0, 4).phases, 0.0)
    np.testing.assert_allclose(theta_ref(1.0, 3).phases, [0.0, np.pi, 0.0])
    with pytest.raises(ValueError):
        theta_ref(2.5, 4)


@settings(max_examples=50, deadline=None)
@given(x=st.floats(-2, 2), n=st.integers(1, 64))
def test_theta_ref_unit_modulus(x, n):
    cfg = theta_ref(x, n)
    assert cfg.phases.shape == (n,)
    assert np.allclose(np.abs(cfg.diagonal), 1.0)


def test_delta_candidates():
    xs = delta_candidates(9)
    assert xs.size == 17 and xs[0] == pytest.approx(-16 / 9) and xs[-1] == pytest.approx(16 / 9)
    s = narrow_sines(9)
    diffs = np.unique(np.round(np.subtract.outer(s, s).ravel(), 12))
    np.testing.assert_allclose(np.sort(diffs), xs, atol=1e-12)


def test_canonical_delta_aliasing():
    # offsets one period apart give identical reflecting phases
    for d in delta_candidates(9):
        c = canonical_delta(d, 9)
        np.testing.assert_allclose(np.exp(1j * theta_ref(d, 8).phases),
                                   np.exp(1j * theta_ref(c, 8).phases), atol=1e-12)
        assert c <= 1e-12


def test_search_count_table():
    assert search_count("exhaustive", 27) == 532170
    assert search_count("td", 27) == 519
    assert search_count("psd", 27) == 173
    assert search_count("exhaustive", 27, point_to_point=True) == 729
    assert search_count("td", 27, point_to_point=True) == 21
    assert search_count("psd", 27, point_to_point=True) == 7
    with pytest.raises(ValueError):
        search_count("binary", 27)
    with pytest.raises(ValueError):
        search_count("td", 28)


@pytest.mark.parametrize("kind", ["td", "psd"])
def test_measured_counts_match_closed_form(kind):
    g = ArrayGeometry(16)
    real = on_grid_realization(g, g, g, 27, 1, np.random.default_rng(0))
    out = train(MeasurementModel(real, 1.0, 0.0), build_codebook(kind, g, 27))
    assert out.search_count == search_count(kind, 27)


def test_counts_grow_with_irs_count():
    g = ArrayGeometry(8)
    real = on_grid_realization(g, g, g, 9, 3, np.random.default_rng(1))
    out = train(MeasurementModel(real, 1.0, 0.0), build_codebook("td", g, 9))
    assert out.search_count == search_count("td", 9, num_irs=3)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 100_000), kind=st.sampled_from(["td", "psd"]))
def test_cooperative_training_matches_exhaustive(seed, kind):
    agrees, info = oracle_case(seed, kind)
    assert agrees, info
    assert info["exhaustive"] == info["truth"]


def test_reduced_exhaustive_matches_full():
    g = ArrayGeometry(8)
    real = on_grid_realization(g, g, g, 9, 2, np.random.default_rng(3))
    model = MeasurementModel(real, 1.0, 0.0)
    cb = build_codebook("td", g, 9)
    leaves = cb.stage(2)
    full, n_full = exhaustive_reflect(model, leaves, leaves)
    red, n_red = exhaustive_reflect(model, leaves, leaves, reduced=True)
    assert full == red
    assert n_full == 81 + 2 * 9 ** 4 and n_red == 81 + 2 * 81 * 17


def test_exhaustive_refuses_large_N():
    g = ArrayGeometry(4)
    real = on_grid_realization(g, g, g, 243, 1, np.random.default_rng(0))
    leaves = np.ones((4, 243), dtype=complex) / 2
    with pytest.raises(TrainingError):
        exhaustive_reflect(MeasurementModel(real, 1.0, 0.0), leaves, leaves)


def test_no_irs_gives_no_delta():
    g = ArrayGeometry(8)
    p = PathParams(0.1, -0.2, 1.0, 1e-4)
    real = ChannelRealization(los_channel(g, g, p), (), (), p, (), (), 1.0, (1.0, 1.0))
    deltas, _ = phase1(MeasurementModel(real, 1.0, 0.0), *[build_codebook("td", g, 9)] * 2)
    assert deltas == []


def test_dead_irs_reports_none():
    g = ArrayGeometry(8)
    real = on_grid_realization(g, g, g, 9, 1, np.random.default_rng(0), leg_loss=0.0)
    out = train(MeasurementModel(real, 1.0, 1e-20, np.random.default_rng(0)), build_codebook("td", g, 9))
    assert out.delta == [None] and out.reflect_beams == [None]


def test_outcome_round_trip():
    g = ArrayGeometry(8)
    real = on_grid_realization(g, g, g, 9, 2, np.random.default_rng(5))
    out = train(MeasurementModel(real, 1.0, 0.0), build_codebook("psd", g, 9))
    back = TrainingOutcome.from_dict(out.to_dict())
    assert back == out
    with pytest.raises(ValueError):
        TrainingOutcome("td", 9, [], (1, 1), [], [0.0], (1, 2, 3), search_count=7)


def test_estimated_losses_noiseless_on_grid():
    g = ArrayGeometry(8)
    real = on_grid_realization(g, g, g, 9, 2, np.random.default_rng(7))
    out = train(MeasurementModel(real, 2.0, 0.0), build_codebook("td", g, 9))
    assert out.est_loss[0] == pytest.approx(real.direct_path.loss, rel=1e-9)
    for m in range(2):
        assert out.est_loss[1 + m] == pytest.approx(real.cascade_loss(m), rel=1e-9)


@pytest.mark.parametrize("kind", ["td", "psd", "uniform"])
def test_noiseless_detection_is_exact(kind):
    cb = build_codebook(kind, ArrayGeometry(32), 81)
    angles = np.random.default_rng(0).uniform(-np.pi / 2, np.pi / 2, 2000)
    rate = detection_rate(cb, angles, np.inf, None).mean()
    if kind == "uniform":
        assert rate > 0.75
    else:
        assert rate == 1.0


def test_descent_follows_children():
    cb = build_codebook("td", ArrayGeometry(16), 27)
    leaves, history = detect(cb, [0.3, -1.0], 100.0, np.random.default_rng(0), trace=True)
    assert len(history) == 3 and history[0].shape == (2, 3)
    assert leaves.min() >= 1 and leaves.max() <= 27


def test_detection_improves_with_snr():
    cb = build_codebook("td", ArrayGeometry(32), 81)
    angles = np.random.default_rng(1).uniform(-np.pi / 2, np.pi / 2, 4000)
    rates = [detection_rate(cb, angles, 10 ** (s / 10), np.random.default_rng(2)).mean()
             for s in (-10, 0, 10, 20)]
    assert all(b >= a for a, b in zip(rates, rates[1:]))


def test_measurement_model_validation():
    g = ArrayGeometry(4)
    real = on_grid_realization(g, g, g, 9, 1, np.random.default_rng(0))
    with pytest.raises(ValueError):
        MeasurementModel(real, -1.0, 0.0)
    m = MeasurementModel(real, 1.0, 0.5, np.random.default_rng(0))
    z = m.noise((20000,))
    assert np.mean(np.abs(z) ** 2) == pytest.approx(0.5, rel=0.05)
