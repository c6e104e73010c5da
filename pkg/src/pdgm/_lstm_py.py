"""Pure numpy LSTM recurrences; the fallback when the compiled core is absent.

Gate blocks in the packed ``(., 4k)`` layout are ordered forget, input,
output, candidate.
"""

import numpy as np


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def lstm_forward(xw, wh):
    """Run the recurrence given precomputed input projections.

    xw: (B, T, 4k) input projections ``x_t @ Wx + b``.
    wh: (k, 4k) recurrent weights.
    Returns (a, c, gates), each (B, T, k) / (B, T, 4k) with activated gates.
    """
    B, T, k4 = xw.shape
    k = k4 // 4
    a_seq = np.empty((B, T, k))
    c_seq = np.empty((B, T, k))
    gates = np.empty((B, T, k4))
    a = np.zeros((B, k))
    c = np.zeros((B, k))
    for t in range(T):
        z = xw[:, t] + a @ wh if t else xw[:, t].copy()
        g = gates[:, t]
        g[:, : 3 * k] = _sigmoid(z[:, : 3 * k])
        g[:, 3 * k :] = np.tanh(z[:, 3 * k :])
        c = g[:, :k] * c + g[:, k : 2 * k] * g[:, 3 * k :]
        a = g[:, 2 * k : 3 * k] * np.tanh(c)
        a_seq[:, t] = a
        c_seq[:, t] = c
    return a_seq, c_seq, gates


def lstm_backward(wh, c_seq, gates, d_a, d_c):
    """Back-propagate through time.

    Returns dz: (B, T, 4k), the gradient with respect to the gate
    pre-activations at every step.
    """
    B, T, k4 = gates.shape
    k = k4 // 4
    dz = np.empty((B, T, k4))
    da_next = np.zeros((B, k))
    dc_next = np.zeros((B, k))
    for t in range(T - 1, -1, -1):
        g = gates[:, t]
        f, i, o, cand = g[:, :k], g[:, k : 2 * k], g[:, 2 * k : 3 * k], g[:, 3 * k :]
        tc = np.tanh(c_seq[:, t])
        c_prev = c_seq[:, t - 1] if t else 0.0
        da = d_a[:, t] + da_next
        dc = d_c[:, t] + dc_next + da * o * (1.0 - tc * tc)
        out = dz[:, t]
        out[:, :k] = dc * c_prev * f * (1.0 - f)
        out[:, k : 2 * k] = dc * cand * i * (1.0 - i)
        out[:, 2 * k : 3 * k] = da * tc * o * (1.0 - o)
        out[:, 3 * k :] = dc * i * (1.0 - cand * cand)
        dc_next = dc * f
        da_next = out @ wh.T
    return dz
