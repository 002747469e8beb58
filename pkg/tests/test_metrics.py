import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from uqshred.data import gen_linear_gaussian_field
from uqshred.metrics import (
    ReportAccumulator,
    UQReport,
    calibration_curve,
    coverage,
    crps_columns,
    crps_sample,
    crps_sample_direct,
    energy_distance,
    rmse,
    sharpness,
)

GAUSS_CRPS_AT_ZERO = 2.0 / math.sqrt(2.0 * math.pi) - 1.0 / math.sqrt(math.pi)


def test_coverage_hand_count():
    assert coverage([0, 0], [1, 1], [0.5, 2.0]) == (1, 2)


def test_coverage_closed_interval():
    assert coverage([1.0], [1.0], [1.0]) == (1, 1)
    assert coverage([1.0], [1.0], [1.0 + 1e-12]) == (0, 1)


def test_coverage_errors():
    with pytest.raises(ValueError, match="inverted"):
        coverage([1.0], [0.0], [0.5])
    with pytest.raises(ValueError):
        coverage([0.0, 0.0], [1.0, 1.0], [0.5])


def test_sharpness_hand_mean():
    assert sharpness([0, 0], [1, 3]) == 2.0
    assert sharpness([2, 2], [2, 2]) == 0.0


def test_sharpness_scales_with_units():
    lo, hi = np.array([0.1, 0.2]), np.array([0.4, 0.9])
    assert sharpness(10 * lo, 10 * hi) == pytest.approx(10 * sharpness(lo, hi), abs=1e-14)


def test_rmse_hand_value():
    assert rmse([0, 0], [3, 4]) == pytest.approx(5 / math.sqrt(2), abs=1e-15)
    assert rmse([1.5, 1.5], [1.0, 1.0]) == 0.5


def test_rmse_shape_mismatch():
    with pytest.raises(ValueError):
        rmse([0.0], [0.0, 1.0])


def test_crps_hand_values():
    assert crps_sample([0.0, 2.0], 1.0) == 0.5
    assert crps_sample([3.0], -1.0) == 4.0


def test_crps_empty():
    with pytest.raises(ValueError):
        crps_sample([], 0.0)


def test_crps_gaussian_oracle():
    x = np.random.default_rng(0).standard_normal(100_000)
    assert abs(crps_sample(x, 0.0) - GAUSS_CRPS_AT_ZERO) < 0.005


@settings(max_examples=60, deadline=None)
@given(K=st.integers(1, 512), seed=st.integers(0, 2**32 - 1))
def test_crps_fast_path_matches_direct(K, seed):
    rng = np.random.default_rng(seed)
    x, y = rng.normal(size=K), rng.normal()
    fast, slow = crps_sample(x, y), crps_sample_direct(x, y)
    assert abs(fast - slow) <= 1e-12
    assert fast >= -1e-12


def test_crps_zero_iff_all_equal_truth():
    assert crps_sample([2.0, 2.0, 2.0], 2.0) == 0.0
    assert crps_sample([2.0, 2.0, 2.1], 2.0) > 0.0


def test_crps_columns_match_scalar():
    rng = np.random.default_rng(1)
    s, y = rng.normal(size=(40, 3)), rng.normal(size=3)
    np.testing.assert_allclose(crps_columns(s, y), [crps_sample(s[:, j], y[j]) for j in range(3)], atol=1e-14)


def test_energy_distance_point_masses():
    assert energy_distance(np.zeros(5), np.ones(7)) == 2.0
    assert energy_distance(np.zeros((5, 1)), np.ones((7, 1))) == 2.0


@pytest.mark.parametrize("m", [1, 3])
def test_energy_distance_identical_sets(m):
    s = np.random.default_rng(2).normal(size=(30, m))
    assert energy_distance(s, s.copy()) == 0.0


def test_energy_distance_same_law_small():
    rng = np.random.default_rng(3)
    assert energy_distance(rng.standard_normal(10_000), rng.standard_normal(10_000)) < 0.02


def test_energy_distance_errors():
    with pytest.raises(ValueError):
        energy_distance(np.zeros((1, 2)), np.zeros((3, 2)))
    with pytest.raises(ValueError):
        energy_distance(np.zeros((3, 2)), np.zeros((3, 3)))


@settings(max_examples=50, deadline=None)
@given(m=st.integers(1, 4), seed=st.integers(0, 2**32 - 1))
def test_energy_distance_nonnegative_symmetric(m, seed):
    rng = np.random.default_rng(seed)
    q = rng.normal(size=(rng.integers(2, 40), m))
    p = rng.normal(loc=rng.uniform(-1, 1), size=(rng.integers(2, 40), m))
    a, b = energy_distance(q, p), energy_distance(p, q)
    assert a >= 0.0
    assert a == pytest.approx(b, abs=1e-12)


def test_energy_distance_1d_path_matches_pairwise():
    rng = np.random.default_rng(4)
    q, p = rng.normal(size=50), rng.normal(0.5, size=60)
    brute = (2 * np.abs(q[:, None] - p[None]).mean() - np.abs(q[:, None] - q[None]).mean()
             - np.abs(p[:, None] - p[None]).mean())
    assert energy_distance(q, p) == pytest.approx(brute, abs=1e-12)


# calibration


def test_oracle_calibration_curve():
    gen = gen_linear_gaussian_field(2100, 10, 2, 0.6, np.random.default_rng(5))
    ts = np.arange(100, 2100)

    def oracle(i, window, K, rng):
        return gen.oracle_sample(int(ts[i]), K, rng)

    # the anchor cells are deterministic; score the noisy cells only (2000 x 8 cells)
    def noisy(i, window, K, rng):
        return oracle(i, window, K, rng)[:, 2:]

    curve = calibration_curve(noisy, [None] * len(ts), gen.field[ts, 2:], K=500, rng=np.random.default_rng(6))
    assert [a for a, _ in curve] == [0.5, 0.7, 0.9, 0.95, 0.99]
    for a, obs in curve:
        assert abs(obs - a) < 0.02, (a, obs)


def test_huge_stub_covers_everything():
    def stub(i, window, K, rng):
        s = np.zeros((K, 4))
        s[: K // 2] = -1e150
        s[K // 2 :] = 1e150
        return s

    truths = np.random.default_rng(0).normal(size=(10, 4)) * 100
    curve = calibration_curve(stub, [None] * 10, truths, K=200)
    assert len(curve) == 5
    assert all(obs == 1.0 for _, obs in curve)


def test_coverage_monotone_in_width():
    rng = np.random.default_rng(7)
    lo, hi = rng.normal(size=100) - 0.5, rng.normal(size=100) + 0.5
    hi = np.maximum(hi, lo)
    y = rng.normal(size=100)
    base = coverage(lo, hi, y)[0]
    for d in (0.0, 0.1, 1.0):
        assert coverage(lo - d, hi + rng.uniform(0, d, 100), y)[0] >= base


def test_report_order_invariant():
    rng = np.random.default_rng(8)
    ens = [rng.normal(size=(50, 3)) * rng.uniform(0.1, 1e3) for _ in range(12)]
    truths = [rng.normal(size=3) for _ in range(12)]
    a, b = ReportAccumulator(), ReportAccumulator()
    for s, y in zip(ens, truths):
        a.add(s, y)
    for k in rng.permutation(12):
        b.add(ens[k], truths[k])
    assert a.report().to_json() == b.report().to_json()


def test_report_values_and_json(tmp_path):
    acc = ReportAccumulator((0.5,))
    acc.add(np.array([[0.0], [1.0], [2.0], [3.0]]), np.array([1.5]))
    rep = acc.report()
    assert rep.n_cells == 1 and rep.mc_samples == 4
    assert rep.coverage[0.5] == 1.0
    assert rep.sharpness[0.5] == 2.0  # interval [0, 2]
    assert rep.rmse == 0.5  # median is the second order statistic, 1.0
    d = json.loads(rep.to_json())
    assert d["coverage"] == {"0.5": 1.0}
    rep.write_calibration_csv(tmp_path / "c.csv")
    assert (tmp_path / "c.csv").read_text().splitlines() == ["level,observed", "0.5,1.0"]


def test_report_needs_cells():
    with pytest.raises(ValueError):
        UQReport(0.0, {}, 0.0, {}, 0)
