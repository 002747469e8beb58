import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from uqshred.autodiff import Graph
from uqshred.inference import (
    PredictiveEnsemble,
    column_quantiles,
    empirical_quantile,
    interval_bounds,
    mc_sample,
    noise_for_draws,
    predictive_summary,
    read_ensemble,
    warn_if_few_samples,
    write_ensemble,
)
from uqshred.model import ModelConfig, init_params, model_forward


def model(noise_dim=3, seed=0):
    cfg = ModelConfig(lag=3, sensors=2, state_dim=4, noise_dim=noise_dim, hidden_dim=6, decoder_widths=(8,))
    rng = np.random.default_rng(seed)
    p = init_params(cfg, rng)
    return p.replace({k: v + rng.uniform(-0.5, 0.5, v.shape) for k, v in p.tensors.items()})


WINDOW = np.array([[0.1, 0.9], [0.3, 0.5], [0.7, 0.2]])


# quantiles


def test_quantile_hand_example():
    assert empirical_quantile([4.0, 2.0, 1.0, 3.0], 0.5) == 2.0


def test_quantile_upper_tail_is_max():
    v = [5.0, 1.0, 3.0, 2.0]
    assert empirical_quantile(v, 0.75 + 1e-9) == 5.0
    assert empirical_quantile(v, 0.75) == 3.0


def test_quantile_float_products():
    # 0.7 * 10 rounds to 7.000000000000001; the 7th order statistic is still correct
    assert empirical_quantile(np.arange(1.0, 11.0), 0.7) == 7.0
    assert empirical_quantile(np.arange(1.0, 11.0), 0.3) == 3.0


def test_quantile_normal_oracle():
    x = np.random.default_rng(0).standard_normal(100_000)
    assert abs(empirical_quantile(x, 0.95) - 1.6449) < 0.02
    assert abs(empirical_quantile(x, 0.05) + 1.6449) < 0.02


@pytest.mark.parametrize("bad", [0.0, 1.0, -0.1, 1.5])
def test_quantile_level_range(bad):
    with pytest.raises(ValueError):
        empirical_quantile([1.0, 2.0], bad)


def test_quantile_empty():
    with pytest.raises(ValueError):
        empirical_quantile([], 0.5)


@settings(max_examples=100, deadline=None)
@given(
    values=st.lists(st.floats(-1e6, 1e6, allow_nan=False), min_size=1, max_size=40),
    a=st.floats(0.001, 0.999),
    b=st.floats(0.001, 0.999),
)
def test_quantile_monotone_and_inf_definition(values, a, b):
    lo, hi = sorted((a, b))
    assert empirical_quantile(values, lo) <= empirical_quantile(values, hi)
    q = empirical_quantile(values, a)
    v = np.asarray(values)
    assert np.mean(v <= q) >= a
    assert q in v
    below = v[v < q]
    if below.size:
        assert np.mean(v <= below.max()) < a


def test_column_quantiles_match_scalar():
    s = np.random.default_rng(1).normal(size=(37, 5))
    for a in (0.05, 0.5, 0.9):
        np.testing.assert_array_equal(column_quantiles(s, a), [empirical_quantile(s[:, j], a) for j in range(5)])


# summaries


def test_summary_hand_interval():
    s = np.tile(np.arange(4.0)[:, None], (1, 2))
    lo, hi = predictive_summary(PredictiveEnsemble(s), [0.5]).intervals[0.5]
    np.testing.assert_array_equal(lo, [0.0, 0.0])
    np.testing.assert_array_equal(hi, [2.0, 2.0])


def test_identical_rows_give_zero_width():
    s = np.tile([1.0, -2.0, 3.0], (10, 1))
    summ = predictive_summary(PredictiveEnsemble(s), [0.5, 0.95])
    np.testing.assert_array_equal(summ.variance, 0.0)
    for lo, hi in summ.intervals.values():
        np.testing.assert_array_equal(lo, hi)


def test_summary_nested_and_ordered():
    s = np.random.default_rng(2).normal(size=(200, 6))
    summ = predictive_summary(PredictiveEnsemble(s), [0.5, 0.95])
    l50, h50 = summ.intervals[0.5]
    l95, h95 = summ.intervals[0.95]
    assert np.all(l95 <= l50) and np.all(l50 <= summ.median) and np.all(summ.median <= h50) and np.all(h50 <= h95)


def test_summary_unbiased_variance():
    s = np.array([[1.0], [3.0]])
    assert predictive_summary(PredictiveEnsemble(s)).variance[0] == 2.0


def test_summary_needs_two_rows():
    with pytest.raises(ValueError):
        predictive_summary(PredictiveEnsemble(np.zeros((1, 3))))


def test_summary_exchangeable():
    rng = np.random.default_rng(3)
    s = rng.normal(size=(50, 4))
    a = predictive_summary(PredictiveEnsemble(s))
    b = predictive_summary(PredictiveEnsemble(s[rng.permutation(50)]))
    np.testing.assert_array_equal(a.median, b.median)
    np.testing.assert_allclose(a.mean, b.mean, rtol=0, atol=1e-15)
    for lvl in a.intervals:
        np.testing.assert_array_equal(a.intervals[lvl][0], b.intervals[lvl][0])
        np.testing.assert_array_equal(a.intervals[lvl][1], b.intervals[lvl][1])


def test_interval_level_range():
    with pytest.raises(ValueError):
        interval_bounds(np.zeros((3, 1)), 1.0)


# Monte Carlo sampling


def test_noiseless_rows_identical():
    ens = mc_sample(model(noise_dim=0), WINDOW, 20, np.random.default_rng(0))
    assert ens.K == 20
    assert np.ptp(ens.samples, axis=0).max() == 0.0


def test_single_draw_is_one_forward_pass():
    p = model()
    ens = mc_sample(p, WINDOW, 1, np.random.default_rng(5))
    eps = noise_for_draws(np.random.default_rng(5), 1, 3)[0]
    g = Graph()
    np.testing.assert_allclose(ens.samples[0], g.value(model_forward(p, WINDOW, eps, g)), rtol=0, atol=1e-14)


def test_mc_sample_deterministic():
    p = model()
    a = mc_sample(p, WINDOW, 50, np.random.default_rng(8))
    b = mc_sample(p, WINDOW, 50, np.random.default_rng(8))
    assert a.samples.tobytes() == b.samples.tobytes()


def test_mc_mean_is_mean_of_forward_passes():
    p = model()
    ens = mc_sample(p, WINDOW, 30, np.random.default_rng(4))
    eps = noise_for_draws(np.random.default_rng(4), 30, 3)
    passes = []
    for e in eps:
        g = Graph()
        passes.append(g.value(model_forward(p, WINDOW, e, g)))
    np.testing.assert_allclose(ens.samples.mean(0), np.mean(passes, axis=0), rtol=0, atol=1e-14)


def test_noise_rows_are_prefix_stable():
    a = noise_for_draws(np.random.default_rng(1), 10, 4)
    b = noise_for_draws(np.random.default_rng(1), 100, 4)
    np.testing.assert_array_equal(a, b[:10])


def test_zero_draws_rejected():
    with pytest.raises(ValueError):
        mc_sample(model(), WINDOW, 0, np.random.default_rng(0))


def test_few_samples_warn():
    with pytest.warns(UserWarning, match="100"):
        warn_if_few_samples(10)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        warn_if_few_samples(100)


def test_plug_in_quantile_converges():
    p = model(seed=11)
    rng = np.random.default_rng(12)
    d100, d1000 = [], []
    for _ in range(20):
        w = rng.uniform(size=(3, 2))
        s = mc_sample(p, w, 10_000, rng).samples
        ref = column_quantiles(s, 0.95)
        # independent smaller ensembles so the estimates are not prefixes of the reference
        d100.append(np.abs(column_quantiles(mc_sample(p, w, 100, rng).samples, 0.95) - ref))
        d1000.append(np.abs(column_quantiles(mc_sample(p, w, 1000, rng).samples, 0.95) - ref))
    assert np.median(d100) > np.median(d1000)


def test_ensemble_file_roundtrip(tmp_path):
    ens = PredictiveEnsemble(np.random.default_rng(0).normal(size=(6, 3)))
    path = tmp_path / "e.uqpe"
    write_ensemble(path, ens)
    raw = path.read_bytes()
    assert raw[:4] == b"UQPE" and len(raw) == 4 + 16 + 6 * 3 * 8
    assert read_ensemble(path).samples.tobytes() == ens.samples.tobytes()


def test_ensemble_rejects_bad_shape():
    with pytest.raises(ValueError):
        PredictiveEnsemble(np.zeros((0, 3)))


def test_ensemble_rejects_non_finite():
    with pytest.raises(ValueError, match="finite"):
        PredictiveEnsemble(np.array([[0.0, np.nan]]))
