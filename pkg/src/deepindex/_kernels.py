"""Hot loops: recurrent forward/backward passes and dropout moment sums.

Every kernel has a numpy implementation (``*_np``) and a numba one
(``*_nb``). The public names bind to the numba version unless numba is
missing or ``DEEPINDEX_DISABLE_NUMBA`` is set. Both produce the same values up
to floating-point summation order.

LSTM parameters are stacked: ``W`` is (4H, H + I) with gate blocks in the
order forget, input, modulation, output, acting on ``[z_prev, x_t]``.
"""

import numpy as np

from ._accel import USE_NUMBA, njit
from .network import sigmoid as _sig

# activation codes for the RNN kernels
IDENTITY, TANH, SIGMOID, RELU = 0, 1, 2, 3
ACT_CODES = {"identity": IDENTITY, "tanh": TANH, "sigmoid": SIGMOID, "relu": RELU}


def _act_np(code, x):
    if code == TANH:
        return np.tanh(x)
    if code == SIGMOID:
        return _sig(x)
    if code == RELU:
        return np.maximum(x, 0.0)
    return x.copy()


def _dact_np(code, pre, a):
    if code == TANH:
        return 1.0 - a * a
    if code == SIGMOID:
        return a * (1.0 - a)
    if code == RELU:
        return (pre > 0).astype(np.float64)
    return np.ones_like(a)


# LSTM -----------------------------------------------------------------------

def lstm_forward_np(X, W, b, Wy, by):
    """Run a batch of sequences ``X`` (B, T, I).

    Returns ``(Y, Z, C, G, tC)``: read-outs (B, T, O), hidden states and cells
    (B, T+1, H) including the zero initial state, activated gates (B, T, 4H)
    and tanh(C_t) (B, T, H).
    """
    B, T, _ = X.shape
    H = W.shape[0] // 4
    Z = np.zeros((B, T + 1, H))
    C = np.zeros((B, T + 1, H))
    G = np.empty((B, T, 4 * H))
    tC = np.empty((B, T, H))
    for t in range(T):
        cat = np.concatenate((Z[:, t], X[:, t]), axis=1)
        pre = cat @ W.T + b
        g = G[:, t]
        g[:, :2 * H] = _sig(pre[:, :2 * H])
        g[:, 2 * H:3 * H] = np.tanh(pre[:, 2 * H:3 * H])
        g[:, 3 * H:] = _sig(pre[:, 3 * H:])
        C[:, t + 1] = g[:, :H] * C[:, t] + g[:, H:2 * H] * g[:, 2 * H:3 * H]
        tC[:, t] = np.tanh(C[:, t + 1])
        Z[:, t + 1] = g[:, 3 * H:] * tC[:, t]
    Y = Z[:, 1:] @ Wy.T + by
    return Y, Z, C, G, tC


def lstm_backward_np(X, W, Wy, Z, C, G, tC, dY):
    """Back-propagation through time for :func:`lstm_forward_np`.

    ``dY`` is dJ/dY (B, T, O). Returns ``(dW, db, dWy, dby)``.
    """
    B, T, _ = X.shape
    H = W.shape[0] // 4
    dW = np.zeros_like(W)
    db = np.zeros(W.shape[0])
    dWy = np.einsum("bto,bth->oh", dY, Z[:, 1:])
    dby = dY.sum(axis=(0, 1))
    dz_next = np.zeros((B, H))
    dc_next = np.zeros((B, H))
    for t in range(T - 1, -1, -1):
        g = G[:, t]
        f, i, cb, o = g[:, :H], g[:, H:2 * H], g[:, 2 * H:3 * H], g[:, 3 * H:]
        dz = dY[:, t] @ Wy + dz_next
        dc = dz * o * (1.0 - tC[:, t] ** 2) + dc_next
        dpre = np.empty((B, 4 * H))
        dpre[:, :H] = dc * C[:, t] * f * (1.0 - f)
        dpre[:, H:2 * H] = dc * cb * i * (1.0 - i)
        dpre[:, 2 * H:3 * H] = dc * i * (1.0 - cb * cb)
        dpre[:, 3 * H:] = dz * tC[:, t] * o * (1.0 - o)
        cat = np.concatenate((Z[:, t], X[:, t]), axis=1)
        dW += dpre.T @ cat
        db += dpre.sum(axis=0)
        dz_next = (dpre @ W)[:, :H]
        dc_next = dc * f
    return dW, db, dWy, dby


@njit
def _sig_nb(x):
    if x >= 0.0:
        return 1.0 / (1.0 + np.exp(-x))
    e = np.exp(x)
    return e / (1.0 + e)


@njit
def lstm_forward_nb(X, W, b, Wy, by):
    B, T, I = X.shape
    H = W.shape[0] // 4
    O = Wy.shape[0]
    Z = np.zeros((B, T + 1, H))
    C = np.zeros((B, T + 1, H))
    G = np.empty((B, T, 4 * H))
    tC = np.empty((B, T, H))
    Y = np.empty((B, T, O))
    for s in range(B):
        for t in range(T):
            for r in range(4 * H):
                acc = b[r]
                for k in range(H):
                    acc += W[r, k] * Z[s, t, k]
                for k in range(I):
                    acc += W[r, H + k] * X[s, t, k]
                if 2 * H <= r < 3 * H:
                    G[s, t, r] = np.tanh(acc)
                else:
                    G[s, t, r] = _sig_nb(acc)
            for h in range(H):
                c = G[s, t, h] * C[s, t, h] + G[s, t, H + h] * G[s, t, 2 * H + h]
                C[s, t + 1, h] = c
                tc = np.tanh(c)
                tC[s, t, h] = tc
                Z[s, t + 1, h] = G[s, t, 3 * H + h] * tc
            for q in range(O):
                acc = by[q]
                for h in range(H):
                    acc += Wy[q, h] * Z[s, t + 1, h]
                Y[s, t, q] = acc
    return Y, Z, C, G, tC


@njit
def lstm_backward_nb(X, W, Wy, Z, C, G, tC, dY):
    B, T, I = X.shape
    H = W.shape[0] // 4
    O = Wy.shape[0]
    dW = np.zeros_like(W)
    db = np.zeros(W.shape[0])
    dWy = np.zeros_like(Wy)
    dby = np.zeros(O)
    dz = np.empty(H)
    dc = np.empty(H)
    dpre = np.empty(4 * H)
    for s in range(B):
        dz_next = np.zeros(H)
        dc_next = np.zeros(H)
        for t in range(T - 1, -1, -1):
            for q in range(O):
                dby[q] += dY[s, t, q]
                for h in range(H):
                    dWy[q, h] += dY[s, t, q] * Z[s, t + 1, h]
            for h in range(H):
                acc = dz_next[h]
                for q in range(O):
                    acc += dY[s, t, q] * Wy[q, h]
                dz[h] = acc
                f = G[s, t, h]
                i = G[s, t, H + h]
                cb = G[s, t, 2 * H + h]
                o = G[s, t, 3 * H + h]
                tc = tC[s, t, h]
                dc[h] = acc * o * (1.0 - tc * tc) + dc_next[h]
                dpre[h] = dc[h] * C[s, t, h] * f * (1.0 - f)
                dpre[H + h] = dc[h] * cb * i * (1.0 - i)
                dpre[2 * H + h] = dc[h] * i * (1.0 - cb * cb)
                dpre[3 * H + h] = acc * tc * o * (1.0 - o)
                dc_next[h] = dc[h] * f
            for r in range(4 * H):
                g = dpre[r]
                db[r] += g
                for k in range(H):
                    dW[r, k] += g * Z[s, t, k]
                for k in range(I):
                    dW[r, H + k] += g * X[s, t, k]
            for k in range(H):
                acc = 0.0
                for r in range(4 * H):
                    acc += dpre[r] * W[r, k]
                dz_next[k] = acc
    return dW, db, dWy, dby


# vanilla RNN ------------------------------------------------------------------

def rnn_forward_np(X, Wxz, Wzz, bx, Why, bz, hid_code, out_code):
    """Returns ``(Y, Z, P, Q)``: outputs, states (with zero initial state),
    hidden pre-activations and output pre-activations."""
    B, T, _ = X.shape
    H = Wzz.shape[0]
    Z = np.zeros((B, T + 1, H))
    P = np.empty((B, T, H))
    for t in range(T):
        P[:, t] = X[:, t] @ Wxz.T + Z[:, t] @ Wzz.T + bx
        Z[:, t + 1] = _act_np(hid_code, P[:, t])
    Q = Z[:, 1:] @ Why.T + bz
    Y = _act_np(out_code, Q)
    return Y, Z, P, Q


def rnn_backward_np(X, Wxz, Wzz, Why, Y, Z, P, Q, dY, hid_code, out_code):
    B, T, _ = X.shape
    H = Wzz.shape[0]
    dQ = dY * _dact_np(out_code, Q, Y)
    dWhy = np.einsum("bto,bth->oh", dQ, Z[:, 1:])
    dbz = dQ.sum(axis=(0, 1))
    dWxz = np.zeros_like(Wxz)
    dWzz = np.zeros_like(Wzz)
    dbx = np.zeros(H)
    dz_next = np.zeros((B, H))
    for t in range(T - 1, -1, -1):
        dz = dQ[:, t] @ Why + dz_next
        dp = dz * _dact_np(hid_code, P[:, t], Z[:, t + 1])
        dWxz += dp.T @ X[:, t]
        dWzz += dp.T @ Z[:, t]
        dbx += dp.sum(axis=0)
        dz_next = dp @ Wzz
    return dWxz, dWzz, dbx, dWhy, dbz


@njit
def _act_nb(code, x):
    if code == TANH:
        return np.tanh(x)
    if code == SIGMOID:
        return _sig_nb(x)
    if code == RELU:
        return max(x, 0.0)
    return x


@njit
def _dact_nb(code, pre, a):
    if code == TANH:
        return 1.0 - a * a
    if code == SIGMOID:
        return a * (1.0 - a)
    if code == RELU:
        return 1.0 if pre > 0 else 0.0
    return 1.0


@njit
def rnn_forward_nb(X, Wxz, Wzz, bx, Why, bz, hid_code, out_code):
    B, T, I = X.shape
    H = Wzz.shape[0]
    O = Why.shape[0]
    Z = np.zeros((B, T + 1, H))
    P = np.empty((B, T, H))
    Q = np.empty((B, T, O))
    Y = np.empty((B, T, O))
    for s in range(B):
        for t in range(T):
            for h in range(H):
                acc = bx[h]
                for k in range(I):
                    acc += Wxz[h, k] * X[s, t, k]
                for k in range(H):
                    acc += Wzz[h, k] * Z[s, t, k]
                P[s, t, h] = acc
                Z[s, t + 1, h] = _act_nb(hid_code, acc)
            for q in range(O):
                acc = bz[q]
                for h in range(H):
                    acc += Why[q, h] * Z[s, t + 1, h]
                Q[s, t, q] = acc
                Y[s, t, q] = _act_nb(out_code, acc)
    return Y, Z, P, Q


@njit
def rnn_backward_nb(X, Wxz, Wzz, Why, Y, Z, P, Q, dY, hid_code, out_code):
    B, T, I = X.shape
    H = Wzz.shape[0]
    O = Why.shape[0]
    dWxz = np.zeros_like(Wxz)
    dWzz = np.zeros_like(Wzz)
    dbx = np.zeros(H)
    dWhy = np.zeros_like(Why)
    dbz = np.zeros(O)
    dq = np.empty(O)
    dp = np.empty(H)
    for s in range(B):
        dz_next = np.zeros(H)
        for t in range(T - 1, -1, -1):
            for q in range(O):
                dq[q] = dY[s, t, q] * _dact_nb(out_code, Q[s, t, q], Y[s, t, q])
                dbz[q] += dq[q]
                for h in range(H):
                    dWhy[q, h] += dq[q] * Z[s, t + 1, h]
            for h in range(H):
                acc = dz_next[h]
                for q in range(O):
                    acc += dq[q] * Why[q, h]
                dp[h] = acc * _dact_nb(hid_code, P[s, t, h], Z[s, t + 1, h])
                dbx[h] += dp[h]
                for k in range(I):
                    dWxz[h, k] += dp[h] * X[s, t, k]
                for k in range(H):
                    dWzz[h, k] += dp[h] * Z[s, t, k]
            for k in range(H):
                acc = 0.0
                for h in range(H):
                    acc += dp[h] * Wzz[h, k]
                dz_next[k] = acc
    return dWxz, dWzz, dbx, dWhy, dbz


# dropout moments ----------------------------------------------------------------

def dropout_moments_np(X, y, masks):
    """Sum over masks D of (D*X)^T (D*X) and (D*X)^T y; ``masks`` is (n, T, p)."""
    XM = masks * X
    flat = XM.reshape(-1, X.shape[1])
    return flat.T @ flat, XM.sum(axis=0).T @ y


@njit
def dropout_moments_nb(X, y, masks):
    n, T, p = masks.shape
    A = np.zeros((p, p))
    c = np.zeros(p)
    for m in range(n):
        for t in range(T):
            for i in range(p):
                xi = masks[m, t, i] * X[t, i]
                if xi == 0.0:
                    continue
                c[i] += xi * y[t]
                for j in range(p):
                    A[i, j] += xi * masks[m, t, j] * X[t, j]
    return A, c


if USE_NUMBA:
    lstm_forward = lstm_forward_nb
    lstm_backward = lstm_backward_nb
    rnn_forward = rnn_forward_nb
    rnn_backward = rnn_backward_nb
else:
    lstm_forward = lstm_forward_np
    lstm_backward = lstm_backward_np
    rnn_forward = rnn_forward_np
    rnn_backward = rnn_backward_np

# one BLAS matmul over the stacked masked rows beats the compiled loop
dropout_moments = dropout_moments_np
