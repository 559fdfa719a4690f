import time

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from deepfolio import ipm
from deepfolio.nn import NonFiniteError

from helpers import central_diff, rel_err


def _small(seed=0, N=2, d=2, decay=(0.5,), M=3):
    rng = np.random.default_rng(seed)
    s = ipm.init_state(N, rng, d=d, decay=decay, rnn_dim=M)
    return s, rng


def _randomize(s, rng):
    for k in ("b", "F", "G", "A", "alpha", "fifo", "psi"):
        setattr(s, k, rng.normal(size=getattr(s, k).shape))
    s.psi = np.tanh(s.psi)
    s.log_sigma2 = rng.normal(scale=0.3, size=s.N)
    return s


def test_mu_zero_weights_is_bias():
    s, rng = _small()
    s.b = np.array([0.3, -1.2])
    s.fifo = rng.normal(size=s.fifo.shape)
    s.alpha = rng.normal(size=s.alpha.shape)
    np.testing.assert_array_equal(ipm.ndybm_mu(s), s.b)


def test_mu_fresh_state_any_weights():
    s, rng = _small()
    s.F = rng.normal(size=s.F.shape)
    s.G = rng.normal(size=s.G.shape)
    s.b = np.array([1.0, 2.0])
    np.testing.assert_array_equal(ipm.ndybm_mu(s), [1.0, 2.0])


def test_mu_hand_example():
    s, _ = _small()
    s.b = np.array([0.1, 0.2])
    s.F[0] = [[1.0, 2.0], [0.0, -1.0]]
    s.G[0] = [[0.5, 0.0], [1.0, 1.0]]
    s.fifo[0] = [1.0, 3.0]
    s.alpha[0] = [2.0, -2.0]
    # F x = (7, -3); G a = (1, 0)
    np.testing.assert_allclose(ipm.ndybm_mu(s), [8.1, -2.8], rtol=1e-15)


def test_trace_examples():
    s, _ = _small(decay=(0.0, 0.5))
    s.alpha[:] = 1.0
    ipm.trace_update(s, np.array([2.0, 2.0]))
    np.testing.assert_array_equal(s.alpha[0], [2.0, 2.0])
    np.testing.assert_array_equal(s.alpha[1], [2.5, 2.5])


def test_trace_geometric_sum():
    s, _ = _small(decay=(0.5,))
    v = np.array([1.5, -0.25])
    for _ in range(10):
        ipm.trace_update(s, v)
    np.testing.assert_allclose(s.alpha[0], v * (1 - 0.5 ** 10) / (1 - 0.5), rtol=1e-14)


def test_fifo_delay_convention():
    s, _ = _small(N=1, d=3, decay=(0.0,))
    outs = [ipm.fifo_push(s, np.array([float(t)]))[0] for t in range(1, 6)]
    # two zero vectors first, then x[t-2]
    assert outs == [0.0, 0.0, 1.0, 2.0, 3.0]
    np.testing.assert_array_equal(s.fifo[:, 0], [5.0, 4.0])


def test_rnn_zero_weights():
    s, rng = _small()
    s.W_rnn[:] = 0
    s.W_in[:] = 0
    s.A = rng.normal(size=s.A.shape)
    before = s.bias().copy()
    ipm.rnn_bias_update(s, np.array([3.0, -1.0]))
    assert np.all(s.psi == 0)
    np.testing.assert_array_equal(s.bias(), before)


def test_rnn_scalar_hand_example():
    s, _ = _small(N=1, M=1)
    s.W_rnn[:] = 0
    s.W_in[:] = 1
    s.A[:] = 2
    before = s.bias()[0]
    ipm.rnn_bias_update(s, np.array([0.5]))
    assert s.psi[0] == pytest.approx(0.46211715726, abs=1e-10)
    assert s.bias()[0] - before == pytest.approx(0.92423431452, abs=1e-10)


@given(st.integers(0, 10**6), st.floats(-1e6, 1e6))
@settings(max_examples=30, deadline=None)
def test_rnn_state_bounded(seed, scale):
    s, rng = _small(seed, M=5)
    for _ in range(5):
        ipm.rnn_bias_update(s, rng.normal(size=2) * scale)
        assert np.all(np.abs(s.psi) <= 1)


def test_stationary_point_zero_mean_gradients():
    s, rng = _small(3)
    _randomize(s, rng)
    g = ipm.gradients(s, ipm.ndybm_mu(s))
    for k in ("b", "F", "G", "A"):
        assert np.all(g[k] == 0), k


@pytest.mark.parametrize("seed", range(4))
def test_gradients_vs_finite_differences(seed):
    s, rng = _small(seed)
    _randomize(s, rng)
    x = rng.normal(size=s.N)
    g = ipm.gradients(s, x)
    f = lambda: ipm.log_density(s, x)
    for k in ("b", "F", "G", "A", "log_sigma2"):
        numeric = central_diff(f, getattr(s, k), eps=1e-6)
        assert rel_err(g[k], numeric, floor=1e-6) < 1e-5, k


def test_variance_gradient_in_sigma2_space():
    s, rng = _small(9)
    _randomize(s, rng)
    x = rng.normal(size=s.N)
    r = x - ipm.ndybm_mu(s)
    s2 = s.sigma2.copy()
    analytic = (r ** 2 - s2) / (2 * s2 ** 2)

    def f():
        mu = ipm.ndybm_mu(s)
        return float(np.sum(-0.5 * np.log(2 * np.pi * s2) - (x - mu) ** 2 / (2 * s2)))
    assert rel_err(analytic, central_diff(f, s2, eps=1e-7), floor=1e-6) < 1e-5


def test_update_applies_suborders():
    s, rng = _small(1, d=3)
    _randomize(s, rng)
    x = rng.normal(size=s.N)
    ref = s.copy()
    ipm.ndybm_update(s, x)
    # oracle: the same steps called one at a time
    g = ipm.gradients(ref, x)
    for k, gk in g.items():
        v = 0.1 * gk * gk
        setattr(ref, k, getattr(ref, k) + 1e-3 * gk / (np.sqrt(v) + 1e-8))
    out = ipm.fifo_push(ref, x)
    ipm.trace_update(ref, out)
    ipm.rnn_bias_update(ref, x)
    for k in ("b", "F", "G", "A", "log_sigma2", "alpha", "fifo", "psi"):
        np.testing.assert_allclose(getattr(s, k), getattr(ref, k), rtol=1e-14, atol=1e-15, err_msg=k)


def test_non_finite_rolls_back():
    s, rng = _small(2)
    _randomize(s, rng)
    snap = s.copy()
    with pytest.raises(NonFiniteError):
        ipm.ndybm_update(s, np.array([np.inf, 0.0]))
    for k in ("b", "F", "G", "A", "log_sigma2", "alpha", "fifo", "psi"):
        np.testing.assert_array_equal(getattr(s, k), getattr(snap, k))
    assert s.steps == snap.steps


def test_variance_floor():
    s = ipm.init_state(2, np.random.default_rng(0), sigma2=1e-6 * 1.0001)
    for _ in range(50):
        ipm.ndybm_update(s, np.zeros(2))
    assert np.all(s.sigma2 >= 1e-6 * (1 - 1e-12))


def _var1(n, rng):
    A = np.array([[0.6, 0.2, 0.0], [-0.3, 0.5, 0.0], [0.1, 0.0, 0.7]])
    x = np.zeros((n, 3))
    for t in range(1, n):
        x[t] = A @ x[t - 1] + 0.1 * rng.normal(size=3)
    return x


def test_beats_naive_on_var1():
    rng = np.random.default_rng(0)
    x = _var1(2000, rng)
    s = ipm.init_state(3, rng, sigma2=0.01)
    preds = np.array([ipm.ipm_step(s, xt).as_vector() for xt in x])
    tail = slice(1500, 2000)
    model_mse = np.mean((preds[tail] - x[tail]) ** 2)
    naive_mse = np.mean((x[1499:1999] - x[tail]) ** 2)
    assert model_mse < naive_mse


def test_sigma2_converges_on_iid_noise():
    rng = np.random.default_rng(1)
    true_var = 0.25
    s = ipm.init_state(3, rng)
    for _ in range(6000):
        ipm.ndybm_update(s, rng.normal(0, np.sqrt(true_var), size=3))
    np.testing.assert_allclose(s.sigma2, true_var, rtol=0.2)


# --- smoothing --------------------------------------------------------------

def _savgol_oracle_weights(window, order):
    # least-squares polynomial fit evaluated at the center, written as a projection
    z = np.arange(window) - window // 2
    V = np.vander(z, order + 1, increasing=True)
    return np.linalg.pinv(V)[0]


def test_savgol_center_weights():
    np.testing.assert_allclose(_savgol_oracle_weights(5, 3), np.array([-3, 12, 17, 12, -3]) / 35, atol=1e-14)
    x = np.array([1.0, 2, 3, 4, 5])
    assert ipm.smooth_inputs(x, noise_sd=0)[2] == pytest.approx((-3 + 24 + 51 + 48 - 15) / 35, abs=1e-12)


def test_savgol_interior_matches_oracle():
    x = np.random.default_rng(0).normal(size=(40, 2))
    out = ipm.smooth_inputs(x, noise_sd=0)
    w = _savgol_oracle_weights(5, 3)
    for t in range(2, 38):
        np.testing.assert_allclose(out[t], w @ x[t - 2:t + 3], atol=1e-12)


def test_savgol_reproduces_cubic_and_constant():
    t = np.arange(30.0)
    cubic = 0.01 * t ** 3 - 0.2 * t ** 2 + t - 4
    np.testing.assert_allclose(ipm.smooth_inputs(cubic, noise_sd=0)[2:-2], cubic[2:-2], atol=1e-9)
    # reduced-window polynomial fits at the edges reproduce the cubic too
    np.testing.assert_allclose(ipm.smooth_inputs(cubic, noise_sd=0), cubic, atol=1e-9)
    np.testing.assert_allclose(ipm.smooth_inputs(np.full(9, 0.7), noise_sd=0), 0.7, atol=1e-14)


def test_savgol_errors():
    with pytest.raises(ValueError):
        ipm.smooth_inputs(np.zeros(10), window=4)
    with pytest.raises(ValueError):
        ipm.smooth_inputs(np.zeros(10), window=3, order=3)
    with pytest.raises(ValueError):
        ipm.smooth_inputs(np.zeros(3))


def test_smoothing_removes_injected_noise():
    t = np.linspace(0, 4, 400)
    base = np.sin(t)[:, None]
    out = ipm.smooth_inputs(base, noise_sd=0.01, rng=np.random.default_rng(0))
    # residual noise sd shrinks below the injected 0.01
    assert np.std(out - base) < 0.01


# --- ipm_step -------------------------------------------------------------------

def test_fresh_prediction_is_bias():
    s = ipm.init_state(6, np.random.default_rng(0))
    s.b = np.arange(6.0)
    tr = ipm.ipm_step(s, np.ones(6))
    np.testing.assert_array_equal(tr.h_close, [0, 1])
    np.testing.assert_array_equal(tr.h_high, [2, 3])
    np.testing.assert_array_equal(tr.h_low, [4, 5])


def test_prediction_independent_of_current_input():
    rng = np.random.default_rng(4)
    s = ipm.init_state(6, rng)
    for _ in range(30):
        ipm.ndybm_update(s, rng.normal(scale=0.01, size=6))
    a = ipm.ipm_step(s.copy(), np.zeros(6)).as_vector()
    b = ipm.ipm_step(s.copy(), np.full(6, 5.0)).as_vector()
    np.testing.assert_array_equal(a, b)


def test_causality_under_future_permutation():
    rng = np.random.default_rng(5)
    x = rng.normal(scale=0.01, size=(120, 6))
    y = x.copy()
    y[80:] = y[80:][rng.permutation(40)]
    run = lambda data: np.array([ipm.ipm_step(s, xt).as_vector() for s in [ipm.init_state(6, np.random.default_rng(0))]
                                 for xt in data])
    px, py = run(x), run(y)
    np.testing.assert_array_equal(px[:81], py[:81])


def test_composition_oracle_500_steps():
    rng = np.random.default_rng(6)
    x = np.random.default_rng(7).normal(scale=0.01, size=(500, 6))
    a = ipm.init_state(6, rng)
    b = a.copy()
    out_a = np.array([ipm.ipm_step(a, xt).as_vector() for xt in x])
    out_b = []
    for xt in x:
        out_b.append(ipm.ndybm_mu(b))
        g = ipm.gradients(b, xt)
        for k, gk in g.items():
            b.rms[k] = 0.9 * b.rms[k] + 0.1 * gk * gk
            setattr(b, k, getattr(b, k) + 1e-3 * gk / (np.sqrt(b.rms[k]) + 1e-8))
        b.log_sigma2 = np.maximum(b.log_sigma2, np.log(1e-6))
        ipm.trace_update(b, ipm.fifo_push(b, xt))
        ipm.rnn_bias_update(b, xt)
    np.testing.assert_allclose(out_a, np.array(out_b), rtol=1e-12, atol=1e-15)


def test_step_time_constant():
    rng = np.random.default_rng(0)
    s = ipm.init_state(21, rng)
    x = rng.normal(scale=0.01, size=(1100, 21))
    times = np.empty(1100)
    for t in range(1100):
        t0 = time.perf_counter()
        ipm.ipm_step(s, x[t])
        times[t] = time.perf_counter() - t0
    # medians resist scheduler hiccups on a shared CPU
    assert np.median(times[1000:1100]) < 2 * np.median(times[100:200])


def test_checkpoint_roundtrip(tmp_path):
    rng = np.random.default_rng(8)
    s = ipm.init_state(6, rng)
    for _ in range(20):
        ipm.ndybm_update(s, rng.normal(scale=0.01, size=6))
    ipm.save_state(s, tmp_path / "ipm.json")
    r = ipm.load_state(tmp_path / "ipm.json")
    x = rng.normal(scale=0.01, size=6)
    np.testing.assert_array_equal(ipm.ipm_step(s, x).as_vector(), ipm.ipm_step(r, x).as_vector())
    np.testing.assert_array_equal(s.A, r.A)


def test_reset_history_keeps_weights():
    rng = np.random.default_rng(9)
    s = ipm.init_state(6, rng)
    for _ in range(20):
        ipm.ndybm_update(s, rng.normal(scale=0.01, size=6))
    b = s.b.copy()
    s.reset_history()
    np.testing.assert_array_equal(ipm.ndybm_mu(s), b)
