import numpy as np
import pytest

from pdgm import autodiff as ad
from pdgm import nn
from pdgm.kernels import BACKENDS
from pdgm.paths import DiscretePath

from oracles import heat_loss


def sig(x):
    return 1.0 / (1.0 + np.exp(-x))


def zero_params(d=1, k=3, widths=(4,)):
    return nn.zeros_like_params(nn.init_params(d, k, widths, seed=0))


def test_init_deterministic_and_seeded():
    a, b = nn.init_params(1, 8, (8, 8), seed=3), nn.init_params(1, 8, (8, 8), seed=3)
    assert a.equals(b)
    assert not a.equals(nn.init_params(1, 8, (8, 8), seed=0))
    assert np.array_equal(a.lstm.b["F"], np.ones(8))


def test_parameter_count_by_hand():
    p = nn.init_params(1, 64, (64, 128, 64, 1))
    lstm = 4 * (64 * 1 + 64 * 64 + 64)
    head = (66 * 64 + 64) + (64 * 128 + 128) + (128 * 64 + 64) + (64 * 1 + 1)
    assert p.size() == lstm + head == 37825
    assert p.ff.widths == (64, 128, 64, 1)


def test_lstm_step_zero_weights():
    p = zero_params().lstm
    a, c = nn.lstm_step(p, np.array([0.7]), np.zeros(3), np.zeros(3))
    assert np.array_equal(a.data, np.zeros(3)) and np.array_equal(c.data, np.zeros(3))
    c_prev = np.array([1.0, -2.0, 0.5])
    a, c = nn.lstm_step(p, np.array([0.7]), np.zeros(3), c_prev)
    assert np.allclose(c.data, 0.5 * c_prev, rtol=0, atol=1e-15)
    assert np.allclose(a.data, 0.5 * np.tanh(0.5 * c_prev), rtol=0, atol=1e-15)


def transcribed_step(p, x, a, c):
    # the gate equations written out with plain numpy
    f = sig(p.A["F"] @ x + p.U["F"] @ a + p.b["F"])
    i = sig(p.A["I"] @ x + p.U["I"] @ a + p.b["I"])
    o = sig(p.A["O"] @ x + p.U["O"] @ a + p.b["O"])
    c_new = f * c + i * np.tanh(p.A["C"] @ x + p.U["C"] @ a + p.b["C"])
    return o * np.tanh(c_new), c_new


def test_lstm_step_transcription_oracle():
    rng = np.random.default_rng(12)
    p = nn.init_params(2, 3, (4,), seed=12).lstm
    p = nn.LstmParams({g: 0.3 * rng.standard_normal((3, 2)) for g in nn.GATES},
                      {g: 0.3 * rng.standard_normal((3, 3)) for g in nn.GATES},
                      {g: 0.3 * rng.standard_normal(3) for g in nn.GATES})
    x, a0, c0 = rng.standard_normal(2), rng.standard_normal(3), rng.standard_normal(3)
    a, c = nn.lstm_step(p, x, a0, c0)
    ea, ec = transcribed_step(p, x, a0, c0)
    assert np.allclose(a.data, ea, rtol=0, atol=1e-12) and np.allclose(c.data, ec, rtol=0, atol=1e-12)


def test_composition_oracle():
    params = nn.init_params(1, 5, (6, 4), seed=21)
    path = DiscretePath(0.0, 1 / 3, [0.2, -0.4, 1.1, 0.3])
    u, a_seq, c_seq = nn.pdgm_forward(params, path)
    a, c = np.zeros(5), np.zeros(5)
    for i, (t, y) in enumerate(zip(path.times, path.values)):
        h = np.concatenate([[t], y, a])
        for w, b, act in zip(params.ff.weights, params.ff.biases, params.ff.activations):
            h = w @ h + b
            h = np.tanh(h) if act == "tanh" else h
        assert abs(u[i] - h[0]) < 1e-12
        a, c = transcribed_step(params.lstm, y, a, c)
        assert np.allclose(a_seq[i], a, rtol=0, atol=1e-12) and np.allclose(c_seq[i], c, rtol=0, atol=1e-12)


def test_zero_params_give_zero():
    u, _, _ = nn.pdgm_forward(zero_params(), DiscretePath(0.0, 0.1, np.linspace(0, 1, 11)))
    assert np.array_equal(u, np.zeros(11))


@pytest.mark.parametrize("backend", sorted(BACKENDS))
def test_non_anticipative(backend):
    params = nn.init_params(2, 6, (8,), seed=2)
    rng = np.random.default_rng(0)
    base = rng.standard_normal((21, 2))
    u0 = nn.pdgm_forward(params, DiscretePath(0.0, 0.05, base), backend)[0]
    for i in (0, 7, 19):
        other = base.copy()
        other[i + 1 :] = rng.standard_normal(other[i + 1 :].shape) * 10
        u1 = nn.pdgm_forward(params, DiscretePath(0.0, 0.05, other), backend)[0]
        assert np.array_equal(u0[: i + 1], u1[: i + 1])
        assert not np.array_equal(u0[i + 1 :], u1[i + 1 :])


def test_gates_stay_in_unit_interval_for_large_inputs():
    params = nn.init_params(1, 4, (4,), seed=1)
    path = DiscretePath(0.0, 0.1, np.linspace(-1e4, 1e4, 11))
    u, a, c = nn.pdgm_forward(params, path)
    assert np.all(np.isfinite(u)) and np.all(np.abs(a) <= 1.0) and np.all(np.isfinite(c))


def test_zero_loss_zero_gradient():
    params = nn.init_params(1, 4, (4,), seed=1)
    path = DiscretePath(0.0, 0.25, [0.0, 0.5, 0.1, 0.2, 0.3])
    g = nn.gradient(params, lambda p: 0.0 * ad.tsum(nn.pdgm_forward(p, path)[0]))
    assert all(np.all(x == 0) for x in g.arrays())


def test_linear_layer_gradient_by_hand():
    w = ad.parameter(np.array([[0.5, -1.0, 2.0]]))
    x, target = np.array([1.0, 2.0, 3.0]), 1.5
    pred = ad.tsum(w * x)
    (g,) = ad.grad((pred - target) ** 2, [w])
    assert np.allclose(g, 2 * (4.5 - target) * x)


def test_loss_matches_straight_line_oracle():
    from pdgm.problems import build_problem
    from pdgm.simulation import simulate
    from pdgm.trainer import loss

    problem = build_problem("path_independent", {"T": 1.0, "N": 5})
    batch = simulate(problem.sim_spec.with_seed(3), 3)
    params = nn.init_params(1, 4, (5, 3), seed=5)
    ref = float(heat_loss(params, batch.values, batch.dt, 1e-2))
    assert float(ad.value(loss(problem, params, batch))) == pytest.approx(ref, rel=1e-12)


def test_pdgm_gradient_finite_differences():
    from pdgm.problems import build_problem
    from pdgm.simulation import simulate
    from pdgm.trainer import loss

    problem = build_problem("path_independent", {"T": 1.0, "N": 5})
    batch = simulate(problem.sim_spec.with_seed(4), 2)
    params = nn.init_params(1, 4, (4,), seed=5)
    _, grads = nn.value_and_grad(params, lambda p: loss(problem, p, batch))
    leaves, g = params.arrays(), grads.arrays()
    rng = np.random.default_rng(6)
    for _ in range(10):
        li = rng.integers(len(leaves))
        idx = tuple(rng.integers(s) for s in leaves[li].shape)
        vals = []
        for eps in (1e-6, -1e-6):
            bumped = [a.astype(np.longdouble) for a in leaves]
            bumped[li][idx] += np.longdouble(eps)
            vals.append(heat_loss(params.with_leaves(bumped), batch.values, batch.dt, 1e-2))
        fd = float((vals[0] - vals[1]) / np.longdouble(2e-6))
        assert abs(fd - g[li][idx]) <= 1e-5 * max(abs(fd), abs(g[li][idx]))


def test_adam_examples():
    params = nn.init_params(1, 3, (3,), seed=0)
    state = nn.AdamState.fresh(params, lr=1e-3)
    same, _ = nn.adam_update(params, nn.zeros_like_params(params), state)
    assert same.equals(params)
    grads = params.map(lambda a: np.full_like(a, 0.25))
    moved, s1 = nn.adam_update(params, grads, state)
    for p0, p1 in zip(params.arrays(), moved.arrays()):
        assert np.allclose(p0 - p1, 1e-3 * 0.25 / (0.25 + 1e-8), rtol=1e-12)
    again, s2 = nn.adam_update(params, grads, state)
    assert again.equals(moved) and s1.step == s2.step == 1 and state.step == 0


def test_checkpoint_roundtrip_and_errors():
    params = nn.init_params(2, 5, (7, 3), seed=8, activation="sigmoid")
    opt = nn.AdamState.fresh(params, lr=3e-3)
    _, opt = nn.adam_update(params, params, opt)
    blob = nn.save_params(params, opt, {"epoch": 4})
    back, opt2, meta = nn.load_checkpoint(blob)
    assert back.equals(params) and meta == {"epoch": 4} and opt2.step == 1 and opt2.lr == 3e-3
    assert all(np.array_equal(a, b) for a, b in zip(opt.m + opt.v, opt2.m + opt2.v))
    assert nn.save_params(back, opt2, meta) == blob
    path = DiscretePath(0.0, 0.1, np.random.default_rng(1).standard_normal((11, 2)))
    assert np.array_equal(nn.pdgm_forward(params, path)[0], nn.pdgm_forward(back, path)[0])
    for bad in (blob[:-9], blob[:20], b"NOTACKPT" + blob[8:], blob[:-1] + bytes([blob[-1] ^ 1])):
        with pytest.raises(nn.CheckpointError):
            nn.load_params(bad)
    future = blob[:8] + (2).to_bytes(4, "little") + blob[12:]
    with pytest.raises(nn.CheckpointError, match="version"):
        nn.load_params(future)


def test_checkpoint_is_little_endian_float64():
    params = nn.zeros_like_params(nn.init_params(1, 1, (1,)))
    params = params.map(lambda a: a + 1.5)
    blob = nn.save_params(params)
    assert blob[:8] == nn.MAGIC
    assert blob.count(np.float64(1.5).astype("<f8").tobytes()) == params.size()
