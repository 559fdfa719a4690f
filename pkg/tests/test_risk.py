import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from deepfolio import risk


def test_sharpe_symmetric_and_degenerate():
    assert risk.sharpe([0.01, -0.01, 0.01, -0.01]) == 0.0
    with pytest.raises(risk.DegenerateSeriesError):
        risk.sharpe([0.003] * 10)
    with pytest.raises(ValueError):
        risk.sharpe([0.1])


def test_sharpe_sampling():
    r = np.random.default_rng(0).normal(0.001, 0.01, size=1000)
    # standard error of a Sharpe estimate is about sqrt((1 + SR^2/2) / n)
    se = math.sqrt((1 + 0.1 ** 2 / 2) / 1000)
    assert abs(risk.sharpe(r) - 0.1) < 3 * se


def test_sortino_examples():
    assert risk.sortino([0.02, -0.01]) == pytest.approx(0.005 / math.sqrt(0.0001 / 2), rel=1e-14)
    assert risk.sortino([0.02, -0.01]) == pytest.approx(0.7071067811865476, rel=1e-12)
    with pytest.raises(risk.DegenerateSeriesError):
        risk.sortino([0.01, 0.02, 0.0])


def test_sortino_not_below_sharpe_on_mixed_series():
    rng = np.random.default_rng(1)
    checked = 0
    for _ in range(1000):
        r = rng.normal(rng.uniform(0, 0.01), 0.02, size=int(rng.integers(5, 50)))
        if not (np.any(r < 0) and np.any(r > 0)) or r.mean() <= 0:
            continue
        checked += 1
        # population downside deviation is at most the standard deviation when the mean is positive
        assert risk.sortino(r) >= risk.sharpe(r) - 1e-12
    assert checked > 500


def test_var_cvar_examples():
    grid = np.arange(-5, 5) / 100
    var, cvar = risk.var_cvar(grid, 0.9)
    assert var == pytest.approx(0.05, abs=1e-15) and cvar == pytest.approx(0.05, abs=1e-15)
    assert risk.var_cvar([0.01] * 20) == pytest.approx((-0.01, -0.01), abs=1e-17)
    with pytest.raises(ValueError):
        risk.var_cvar(np.zeros(19), 0.95)


def test_var_cvar_hand_tail():
    r = np.array([-0.1, -0.05, 0.0, 0.01, 0.02, 0.03, 0.04, 0.05, 0.06, 0.07] * 2)
    # 5% lower quantile of 20 points is the smallest value; the tail is both -0.1 entries
    assert risk.var_cvar(r, 0.95) == pytest.approx((0.1, 0.1))
    var, cvar = risk.var_cvar(r, 0.8)
    # quantile at 0.2 with lower interpolation: sorted[int(0.2*19)] = sorted[3] = -0.05
    assert var == pytest.approx(0.05) and cvar == pytest.approx((0.1 + 0.1 + 0.05 + 0.05) / 4)


def test_cvar_dominates_var_random():
    rng = np.random.default_rng(2)
    for _ in range(10_000):
        r = rng.standard_t(3, size=int(rng.integers(20, 60))) * 0.01
        var, cvar = risk.var_cvar(r)
        assert cvar >= var


def test_mdd_examples():
    assert risk.mdd([100, 80, 120, 60]) == 0.5
    assert risk.mdd(np.arange(1, 20)) == 0.0
    with pytest.raises(ValueError):
        risk.mdd([])


@given(st.lists(st.floats(0.1, 1e3), min_size=1, max_size=40), st.floats(1e-3, 1e3))
def test_mdd_scale_invariant_and_bounded(v, k):
    a = risk.mdd(v)
    assert 0 <= a < 1
    assert risk.mdd(np.asarray(v) * k) == pytest.approx(a, abs=1e-12)


@given(st.integers(0, 10**6), st.floats(0.1, 100))
@settings(max_examples=30)
def test_ratio_scale_invariance(seed, k):
    r = np.random.default_rng(seed).normal(0.001, 0.02, size=30)
    assert risk.sharpe(r * k) == pytest.approx(risk.sharpe(r), rel=1e-10)
    assert risk.sortino(r * k) == pytest.approx(risk.sortino(r), rel=1e-10)


def test_annualize():
    assert risk.annualize(np.zeros(10)) == (0.0, 0.0)
    ret, vol = risk.annualize(np.full(30, math.log(1.0001)))
    assert ret == pytest.approx(1.0001 ** 252 - 1, rel=1e-12)
    assert vol == pytest.approx(0.0, abs=1e-16)
    r = np.random.default_rng(3).normal(size=50) * 0.01
    assert risk.annualize(2 * r)[1] == 2 * risk.annualize(r)[1]


# --- differential ratios -------------------------------------------------------------

def test_dsr_cold_start():
    d, st1 = risk.dsr_update(risk.DsrState(), 0.05)
    assert d == 0.0
    assert st1.nu == pytest.approx(0.0005) and st1.omega == pytest.approx(0.01 * 0.0025)


def test_dsr_hand_value():
    nu, om, r = 0.01, 0.0002, 0.02
    expected = (om * (r - nu) - 0.5 * nu * (r * r - om)) / ((om - nu * nu) ** 1.5 + 1e-8)
    # = (2e-6 - 1e-6) / (1e-6 + 1e-8)
    assert expected == pytest.approx(1e-6 / 1.01e-6, rel=1e-12)
    d, _ = risk.dsr_update(risk.DsrState(nu, om), r)
    assert d == pytest.approx(expected, rel=1e-14)


def fd_moving_sharpe(nu, om, r, h=1e-6):
    def sr(eta):
        n = nu + eta * (r - nu)
        o = om + eta * (r * r - om)
        return risk.moving_sharpe(n, o)
    return (sr(h) - sr(-h)) / (2 * h)


@pytest.mark.parametrize("seed", range(10))
def test_dsr_matches_eta_derivative(seed):
    rng = np.random.default_rng(seed)
    stream = rng.normal(0.01, 0.1, size=400)
    state = risk.DsrState()
    for t, r in enumerate(stream):
        if t >= 100:  # once the variance estimate is meaningful
            d, _ = risk.dsr_update(state, r)
            fd = fd_moving_sharpe(state.nu, state.omega, r)
            assert abs(d - fd) <= 1e-3 * abs(fd) + 1e-6
        _, state = risk.dsr_update(state, r)


def test_dsr_constant_returns_decay():
    state = risk.DsrState(eta=0.05)
    rng = np.random.default_rng(0)
    for r in rng.normal(0.01, 0.05, size=200):
        _, state = risk.dsr_update(state, r)
    ds = []
    for _ in range(400):
        d, state = risk.dsr_update(state, 0.01)
        ds.append(abs(d))
    assert ds[-1] < 1e-2 * ds[0]


def test_d3r_branches():
    d, _ = risk.d3r_update(risk.D3rState(), 0.01)
    assert np.isfinite(d) and d > 0
    assert d == pytest.approx(0.01 / 1e-8)
    d, st1 = risk.d3r_update(risk.D3rState(0.01, 0.02 ** 2), -0.03)
    hand = (0.0004 * (-0.035) - 0.005 * 0.0009) / (0.000008 + 1e-8)
    assert abs(d - hand) < 1e-12
    assert abs(hand - (-1.85e-5 / 8.01e-6)) < 1e-12
    assert st1.nu == pytest.approx(0.01 + 0.01 * (-0.04))
    assert st1.dd2 == pytest.approx(0.0004 + 0.01 * (0.0009 - 0.0004))
    d, _ = risk.d3r_update(risk.D3rState(0.01, 0.02 ** 2), 0.03)
    assert abs(d - (0.03 - 0.005) / (0.02 + 1e-8)) < 1e-12


@pytest.mark.parametrize("seed", range(5))
def test_d3r_rising_positive_stream(seed):
    # The positive branch is (r - nu/2)/dd, so a small gain after large ones can
    # score negative. On a non-decreasing positive stream nu never exceeds r.
    state = risk.D3rState()
    rng = np.random.default_rng(seed)
    for r in np.sort(np.abs(rng.normal(0.01, 0.02, size=500))) + 1e-6:
        d, state = risk.d3r_update(state, r)
        assert d >= 0
        assert state.dd2 >= 0


def test_d3r_positive_branch_can_be_negative():
    d, _ = risk.d3r_update(risk.D3rState(nu=0.04, dd2=1e-4), 0.01)
    assert d == pytest.approx((0.01 - 0.02) / (0.01 + 1e-8))


def test_replay_from_checkpointed_state_is_bitwise():
    stream = np.random.default_rng(5).normal(0, 0.02, size=100)
    a, b = risk.DsrState(), risk.D3rState()
    full = []
    for r in stream:
        d1, a = risk.dsr_update(a, r)
        d2, b = risk.d3r_update(b, r)
        full.append((d1, d2))
    a, b = risk.DsrState(), risk.D3rState()
    for r in stream[:40]:
        _, a = risk.dsr_update(a, r)
        _, b = risk.d3r_update(b, r)
    saved = json.loads(json.dumps([a.__dict__, b.__dict__]))
    a, b = risk.DsrState(**saved[0]), risk.D3rState(**saved[1])
    for i, r in enumerate(stream[40:], start=40):
        d1, a = risk.dsr_update(a, r)
        d2, b = risk.d3r_update(b, r)
        assert (d1, d2) == full[i]


# --- cross correlation ----------------------------------------------------------------

def test_xcorr_shift():
    x = np.random.default_rng(6).normal(size=500)
    y = np.roll(x, 2)  # y(t) = x(t-2)
    lags, R, lag = risk.cross_correlation(x, y, 5)
    assert lag == -2
    assert R[lags == -2][0] == pytest.approx(1.0, abs=0.02)


def test_xcorr_self_and_noise():
    rng = np.random.default_rng(7)
    x = rng.normal(size=10_000)
    assert risk.cross_correlation(x, x, 3)[2] == 0
    _, R, _ = risk.cross_correlation(x, rng.normal(size=10_000), 10)
    assert np.max(np.abs(R)) < 0.05
    with pytest.raises(ValueError):
        risk.cross_correlation(x[:3], x[:3], 3)


def test_xcorr_brute_force():
    rng = np.random.default_rng(8)
    x, y = rng.normal(size=30), rng.normal(size=30)
    lags, R, _ = risk.cross_correlation(x, y, 4)
    xd, yd = x - x.mean(), y - y.mean()
    for l, v in zip(lags, R):
        pairs = [(xd[t], yd[t - l]) for t in range(30) if 0 <= t - l < 30]
        ref = sum(a * b for a, b in pairs) / (len(pairs) * xd.std() * yd.std())
        assert v == pytest.approx(ref, rel=1e-12)


# --- report ---------------------------------------------------------------------------

def test_report_flat_and_keys():
    rep = risk.metrics_report([500_000.0] * 30)
    assert rep.final_account_value == 500_000.0 and rep.mdd == 0.0
    assert rep.sharpe is None and rep.sortino is None
    keys = set(json.loads(rep.to_json()))
    assert keys == {"final_account_value", "ann_return", "ann_volatility", "sharpe", "sortino",
                    "var_95", "cvar_95", "mdd"}


def test_report_recomputation():
    r = np.random.default_rng(9).normal(0.0005, 0.01, size=300)
    eq = 500_000 * np.exp(np.concatenate([[0], np.cumsum(r)]))
    rep = risk.metrics_report(eq)
    assert rep.sharpe == pytest.approx(risk.sharpe(r) * math.sqrt(252), rel=1e-9)
    assert rep.var_95 == pytest.approx(risk.var_cvar(r)[0], rel=1e-9)
    assert rep.cvar_95 >= rep.var_95
    assert rep.mdd == risk.mdd(eq)
