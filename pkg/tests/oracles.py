"""Straight-line reference implementations used as test oracles.

Everything here is written independently of the package internals and in
extended precision where finite differences need it.
"""

import numpy as np

LD = np.longdouble


def _sig(x):
    return 1 / (1 + np.exp(-x))


def lstm_run(A, U, b, ys):
    """Gate-by-gate recurrence over the rows of ``ys``; returns the a_i."""
    k = U["F"].shape[0]
    a, c = np.zeros(k, dtype=ys.dtype), np.zeros(k, dtype=ys.dtype)
    out = []
    for y in ys:
        f = _sig(A["F"] @ y + U["F"] @ a + b["F"])
        i = _sig(A["I"] @ y + U["I"] @ a + b["I"])
        o = _sig(A["O"] @ y + U["O"] @ a + b["O"])
        c = f * c + i * np.tanh(A["C"] @ y + U["C"] @ a + b["C"])
        a = o * np.tanh(c)
        out.append(a)
    return out


def head(weights, biases, acts, t, y, a):
    z = np.concatenate([np.array([t], dtype=y.dtype), y, a])
    for w, bb, act in zip(weights, biases, acts):
        z = w @ z + bb
        if act == "tanh":
            z = np.tanh(z)
        elif act == "sigmoid":
            z = _sig(z)
    return z[0]


def heat_loss(params, values, dt, h, sigma=1.0, dtype=LD):
    """Path-independent PDGM loss (heat operator, terminal y_T^2) for 1-D paths.

    Interior points i = 0..N use u(t_i, y_i, a_{i-1}); the time difference
    feeds a_i at t_i + dt; spot differences are central with step h.
    """
    A = {g: params.lstm.A[g].astype(dtype) for g in params.lstm.A}
    U = {g: params.lstm.U[g].astype(dtype) for g in params.lstm.U}
    b = {g: params.lstm.b[g].astype(dtype) for g in params.lstm.b}
    W = [w.astype(dtype) for w in params.ff.weights]
    B = [x.astype(dtype) for x in params.ff.biases]
    acts = params.ff.activations
    dt, h = dtype(dt), dtype(h)
    M, n1 = values.shape[:2]
    N = n1 - 1
    interior = dtype(0)
    terminal = dtype(0)
    for path in values.astype(dtype):
        hist = lstm_run(A, U, b, path)
        prev = [np.zeros_like(hist[0])] + hist[:-1]
        for i in range(n1):
            t, y = i * dt, path[i]
            u = head(W, B, acts, t, y, prev[i])
            up = head(W, B, acts, t, y + h, prev[i])
            um = head(W, B, acts, t, y - h, prev[i])
            us = head(W, B, acts, t + dt, y, hist[i])
            res = (us - u) / dt + dtype(0.5) * dtype(sigma) ** 2 * (up - 2 * u + um) / h**2
            interior += res * res
        terminal += (u - path[-1, 0] ** 2) ** 2
    return interior / (M * N) + terminal / M
