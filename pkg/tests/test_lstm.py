import numpy as np
import pytest

from deepindex.lstm import (
    LstmCell,
    LstmState,
    Readout,
    RnnCell,
    SequenceData,
    init_lstm,
    init_rnn,
    lag_recall_task,
    lstm_forward,
    lstm_loss_and_grads,
    lstm_states,
    lstm_step,
    lstm_train,
    recall_accuracy,
    regime_volatility_task,
    rnn_forward,
    rnn_loss_and_grads,
    rnn_train,
    sequence_loss,
    zero_state,
)
from deepindex.numerics import ShapeError, finite_diff_grad, make_rng, relative_error
from deepindex.training import TrainConfig, TrainingDivergedError


def zero_cell(H, I):
    z = np.zeros((H, H + I))
    return LstmCell(z, z, z, z, np.zeros(H), np.zeros(H), np.zeros(H), np.zeros(H))


def random_cell(rng, H, I, scale=0.8):
    return LstmCell(*(scale * rng.standard_normal((H, H + I)) for _ in range(4)),
                    *(scale * rng.standard_normal(H) for _ in range(4)))


def hand_step(cell, z, c, x):
    """Scalar-loop reference step, written independently of lstm_step."""
    H = len(z)
    h = list(z) + list(x)
    zn, cn = np.empty(H), np.empty(H)
    for j in range(H):
        pre = [sum(w[j, k] * h[k] for k in range(len(h))) + b[j]
               for w, b in ((cell.w_f, cell.b_f), (cell.w_i, cell.b_i), (cell.w_c, cell.b_c), (cell.w_o, cell.b_o))]
        f, i, o = (1 / (1 + np.exp(-pre[0])), 1 / (1 + np.exp(-pre[1])), 1 / (1 + np.exp(-pre[3])))
        cn[j] = f * c[j] + i * np.tanh(pre[2])
        zn[j] = o * np.tanh(cn[j])
    return zn, cn


def test_zero_parameters_step():
    cell = zero_cell(3, 2)
    c_prev = np.array([1.0, -2.0, 0.5])
    s = lstm_step(cell, LstmState(np.array([0.3, 0.1, -0.2]), c_prev), np.array([1.0, 2.0]))
    np.testing.assert_allclose(s.c, 0.5 * c_prev, rtol=1e-15)
    np.testing.assert_allclose(s.z, 0.5 * np.tanh(0.5 * c_prev), rtol=1e-15)


def test_saturated_forget_gate_preserves_memory():
    rng = make_rng(0)
    cell = random_cell(rng, 3, 2)
    cell.b_f = np.full(3, 50.0)
    cell.w_f = np.zeros_like(cell.w_f)
    st = LstmState(rng.standard_normal(3), rng.standard_normal(3))
    x = rng.standard_normal(2)
    h = np.concatenate([st.z, x])
    i = 1 / (1 + np.exp(-(cell.w_i @ h + cell.b_i)))
    cb = np.tanh(cell.w_c @ h + cell.b_c)
    np.testing.assert_allclose(lstm_step(cell, st, x).c, st.c + i * cb, atol=1e-20, rtol=1e-14)


def test_step_matches_hand_rolled():
    rng = make_rng(1)
    for _ in range(10):
        cell = random_cell(rng, 4, 3)
        z, c, x = rng.standard_normal(4), rng.standard_normal(4), rng.standard_normal(3)
        s = lstm_step(cell, LstmState(z, c), x)
        zr, cr = hand_step(cell, z, c, x)
        np.testing.assert_allclose(s.z, zr, rtol=1e-13, atol=1e-15)
        np.testing.assert_allclose(s.c, cr, rtol=1e-13, atol=1e-15)


def test_step_shape_errors():
    cell = zero_cell(2, 3)
    with pytest.raises(ShapeError):
        lstm_step(cell, zero_state(2), np.ones(2))
    with pytest.raises(ShapeError):
        lstm_step(cell, zero_state(3), np.ones(3))
    with pytest.raises(ShapeError):
        LstmCell(np.ones((2, 5)), np.ones((3, 5)), np.ones((2, 5)), np.ones((2, 5)), *[np.zeros(2)] * 4)


def test_forward_matches_step_loop():
    rng = make_rng(2)
    cell = random_cell(rng, 3, 2)
    readout = Readout(rng.standard_normal((2, 3)), rng.standard_normal(2))
    seq = rng.standard_normal((6, 2))
    st = zero_state(3)
    ref = []
    for x in seq:
        st = lstm_step(cell, st, x)
        ref.append(readout.weight @ st.z + readout.bias)
    np.testing.assert_allclose(lstm_forward(cell, seq, readout), ref, rtol=1e-12, atol=1e-14)


def test_length_one_sequence():
    rng = make_rng(3)
    cell, readout = init_lstm(2, 3, 1, rng)
    x = rng.standard_normal(2)
    z = lstm_step(cell, zero_state(3), x).z
    np.testing.assert_allclose(lstm_forward(cell, x[None, :], readout)[0], readout.weight @ z + readout.bias,
                               rtol=1e-13)


def test_zero_weights_contract():
    cell = zero_cell(2, 1)
    readout = Readout(np.eye(2), np.zeros(2))
    seq = np.ones((30, 1))
    Y = lstm_forward(cell, seq, readout)
    # zero state stays zero: C_t = 0.5 C_{t-1} from C_0 = 0
    assert np.all(Y == 0)
    c = np.array([1.0, -1.0])
    st = LstmState(np.zeros(2), c)
    for t in range(1, 11):
        st = lstm_step(cell, st, np.ones(1))
        np.testing.assert_allclose(st.c, 0.5**t * c, rtol=1e-15)


def test_causality():
    rng = make_rng(4)
    cell, readout = init_lstm(2, 4, 1, rng)
    seq = rng.standard_normal((12, 2))
    full = lstm_forward(cell, seq, readout)
    for k in (1, 5, 12):
        np.testing.assert_array_equal(lstm_forward(cell, seq[:k], readout), full[:k])


def test_gate_ranges():
    rng = make_rng(5)
    for _ in range(20):
        # moderate scale: in float64 sigmoid rounds to exactly 1.0 beyond ~37
        cell = random_cell(rng, 4, 3, scale=1.0)
        Z, C, G = lstm_states(cell, rng.standard_normal((8, 3)))
        H = 4
        F, I, Cb, O = (G[:, k * H:(k + 1) * H] for k in range(4))
        for gate in (F, I, O):
            assert np.all((gate > 0) & (gate < 1))
        assert np.all((Cb > -1) & (Cb < 1))
        assert np.all((Z > -1) & (Z < 1))


def test_init_forget_bias():
    cell, readout = init_lstm(3, 5, 2, make_rng(0))
    assert np.all(cell.b_f == 1.0)
    assert np.all(cell.b_i == 0) and np.all(cell.b_c == 0) and np.all(cell.b_o == 0)
    assert cell.w_f.shape == (5, 8) and readout.weight.shape == (2, 5)


def test_batch_equals_single():
    rng = make_rng(6)
    cell, readout = init_lstm(2, 3, 1, rng)
    seqs = rng.standard_normal((4, 7, 2))
    batch = lstm_forward(cell, seqs, readout)
    for b in range(4):
        np.testing.assert_allclose(batch[b], lstm_forward(cell, seqs[b], readout), rtol=1e-14)


def _flat_lstm(cell, readout):
    W, b = cell.stacked()
    return np.concatenate([W.ravel(), b, readout.weight.ravel(), readout.bias])


def _unflat_lstm(theta, H, I, O):
    n = 4 * H * (H + I)
    W = theta[:n].reshape(4 * H, H + I)
    b = theta[n:n + 4 * H]
    Wy = theta[n + 4 * H:n + 4 * H + O * H].reshape(O, H)
    by = theta[n + 4 * H + O * H:]
    return LstmCell.from_stacked(W, b), Readout(Wy, by)


def test_bptt_gradient_three_steps_hidden_three():
    rng = make_rng(7)
    H, I, O = 3, 2, 1
    cell = random_cell(rng, H, I)
    readout = Readout(rng.standard_normal((O, H)), rng.standard_normal(O))
    data = SequenceData(rng.standard_normal((2, 3, I)), rng.standard_normal((2, 3, O)))
    _, grads = lstm_loss_and_grads(cell, readout, data)
    analytic = np.concatenate([np.ravel(g) for g in grads])

    def f(theta):
        c, r = _unflat_lstm(theta, H, I, O)
        return sequence_loss(lstm_forward(c, data.inputs, r), data)

    assert relative_error(analytic, finite_diff_grad(f, _flat_lstm(cell, readout))) < 1e-5


def test_rnn_gradient():
    rng = make_rng(8)
    cell = init_rnn(2, 3, 2, rng, "tanh", "identity")
    data = SequenceData(rng.standard_normal((3, 5, 2)), rng.standard_normal((3, 5, 2)))
    _, grads = rnn_loss_and_grads(cell, data)
    shapes = [cell.w_xz.shape, cell.w_zz.shape, cell.b_x.shape, cell.w_hz.shape, cell.b_z.shape]

    def f(theta):
        parts, pos = [], 0
        for s in shapes:
            n = int(np.prod(s))
            parts.append(theta[pos:pos + n].reshape(s))
            pos += n
        return sequence_loss(rnn_forward(RnnCell(*parts, "tanh", "identity"), data.inputs), data)

    theta = np.concatenate([np.ravel(a) for a in (cell.w_xz, cell.w_zz, cell.b_x, cell.w_hz, cell.b_z)])
    assert relative_error(np.concatenate([np.ravel(g) for g in grads]), finite_diff_grad(f, theta)) < 1e-5


def hand_rnn(cell, seq):
    f = {"tanh": np.tanh, "identity": lambda v: v, "sigmoid": lambda v: 1 / (1 + np.exp(-v)),
         "relu": lambda v: np.maximum(v, 0)}
    z = np.zeros(cell.hidden_size)
    out = []
    for x in seq:
        z = f[cell.activation](cell.w_xz @ x + cell.w_zz @ z + cell.b_x)
        out.append(f[cell.output_activation](cell.w_hz @ z + cell.b_z))
    return np.array(out)


@pytest.mark.parametrize("acts", [("tanh", "tanh"), ("sigmoid", "identity"), ("relu", "sigmoid")])
def test_rnn_matches_hand_rolled(acts):
    rng = make_rng(9)
    cell = init_rnn(3, 4, 2, rng, *acts)
    cell.b_x = rng.standard_normal(4)
    seq = rng.standard_normal((9, 3))
    np.testing.assert_allclose(rnn_forward(cell, seq), hand_rnn(cell, seq), rtol=1e-12, atol=1e-14)


def test_rnn_zero_recurrence_is_feedforward():
    rng = make_rng(10)
    cell = init_rnn(2, 3, 1, rng)
    cell.w_zz = np.zeros((3, 3))
    seq = rng.standard_normal((5, 2))
    Y = rnn_forward(cell, seq)
    for t in range(5):
        np.testing.assert_allclose(Y[t], np.tanh(cell.w_hz @ np.tanh(cell.w_xz @ seq[t] + cell.b_x) + cell.b_z),
                                   rtol=1e-14)
    assert rnn_forward(cell, seq[:1]).shape == (1, 1)


def test_zero_epochs_unchanged():
    rng = make_rng(11)
    cell, readout = init_lstm(1, 3, 1, rng)
    data = lag_recall_task(rng, 8, 6, 2)
    c2, r2, hist = lstm_train(cell, readout, data, TrainConfig(epochs=0), make_rng(0))
    np.testing.assert_array_equal(c2.stacked()[0], cell.stacked()[0])
    np.testing.assert_array_equal(r2.weight, readout.weight)
    assert hist.epochs == [0]


def test_lag_two_recall():
    rng = make_rng(12)
    train = lag_recall_task(make_rng(12, 0), 256, 20, 2)
    test = lag_recall_task(make_rng(12, 1), 256, 20, 2)
    cell, readout = init_lstm(1, 4, 1, rng)
    cfg = TrainConfig(penalty="none", learning_rate=0.5, batch_size=16, epochs=100)
    cell, readout, hist = lstm_train(cell, readout, train, cfg, make_rng(12, 2))
    assert recall_accuracy(lstm_forward(cell, test.inputs, readout), test) > 0.95
    assert hist.objective[-1] < hist.objective[0]


def test_training_deterministic():
    data = lag_recall_task(make_rng(0), 32, 8, 1)
    cfg = TrainConfig(penalty="ridge", lam=1e-3, learning_rate=0.3, batch_size=8, epochs=5)
    out = []
    for _ in range(2):
        cell, readout = init_lstm(1, 3, 1, make_rng(1))
        c, r, _ = lstm_train(cell, readout, data, cfg, make_rng(2))
        out.append(np.concatenate([c.stacked()[0].ravel(), r.weight.ravel()]))
    np.testing.assert_array_equal(out[0], out[1])


def test_rnn_train_reduces_loss():
    data = lag_recall_task(make_rng(0), 64, 10, 1)
    cell = init_rnn(1, 4, 1, make_rng(1))
    cfg = TrainConfig(penalty="none", learning_rate=0.2, batch_size=16, epochs=30)
    trained, hist = rnn_train(cell, data, cfg, make_rng(2))
    assert hist.objective[-1] < hist.objective[0]
    assert recall_accuracy(rnn_forward(trained, data.inputs), data) > 0.9


def test_recurrent_divergence_guard():
    data = regime_volatility_task(make_rng(0), 16, 20, vol_high=20.0)
    cell, readout = init_lstm(2, 3, 1, make_rng(1))
    with pytest.raises(TrainingDivergedError, match="epoch"):
        lstm_train(cell, readout, data, TrainConfig(learning_rate=5.0, epochs=50, batch_size=4), make_rng(2))


def test_recurrent_rejects_dropout_and_ce():
    data = lag_recall_task(make_rng(0), 4, 5, 1)
    cell, readout = init_lstm(1, 2, 1, make_rng(1))
    with pytest.raises(ValueError):
        lstm_train(cell, readout, data, TrainConfig(dropout_p=0.5, epochs=1))
    with pytest.raises(ValueError):
        lstm_train(cell, readout, data, TrainConfig(loss="cross_entropy", epochs=1))


def test_lag_task_layout():
    d = lag_recall_task(make_rng(0), 3, 10, 4)
    np.testing.assert_array_equal(d.targets[:, 4:], d.inputs[:, :-4])
    assert np.all(d.mask[:, :4] == 0) and np.all(d.mask[:, 4:] == 1)
    assert set(np.unique(d.inputs)) == {-1.0, 1.0}


def test_volatility_task_layout():
    d = regime_volatility_task(make_rng(0), 2, 50)
    np.testing.assert_allclose(d.inputs[:, :, 1], d.inputs[:, :, 0] ** 2)
    np.testing.assert_allclose(d.targets[:, :-1, 0], d.inputs[:, 1:, 1])
