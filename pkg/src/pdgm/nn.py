"""The PDGM network: an LSTM that summarises the path history feeding a
feed-forward head evaluated at ``(t_i, y_{t_i}, a_{t_{i-1}})``.

Parameter containers hold either numpy arrays or autodiff Tensors, so the
same forward code serves plain evaluation and gradient recording.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from . import kernels
from .autodiff import Tensor, value
from .paths import DiscretePath, PathBatch

GATES = ("F", "I", "O", "C")
ACTIVATIONS = {"tanh": ad.tanh, "sigmoid": ad.sigmoid, "identity": lambda x: x}


@dataclass
class LstmParams:
    A: dict  # gate -> (k, d) input weights
    U: dict  # gate -> (k, k) recurrent weights
    b: dict  # gate -> (k,) biases

    @property
    def hidden_units(self) -> int:
        return value(self.b["F"]).shape[0]

    @property
    def input_dim(self) -> int:
        return value(self.A["F"]).shape[1]


@dataclass
class FeedForwardParams:
    weights: list  # (k_out, k_in) each
    biases: list
    activations: list[str]

    def __post_init__(self):
        if not (len(self.weights) == len(self.biases) == len(self.activations)):
            raise ValueError("weights, biases and activations must align")
        for prev, nxt in zip(self.weights, self.weights[1:]):
            if value(nxt).shape[1] != value(prev).shape[0]:
                raise ValueError("feed-forward layer widths do not chain")
        if self.activations[-1] != "identity":
            raise ValueError("the output layer must be linear")

    @property
    def widths(self) -> tuple[int, ...]:
        return tuple(value(w).shape[0] for w in self.weights)


@dataclass
class PdgmParams:
    lstm: LstmParams
    ff: FeedForwardParams

    def __post_init__(self):
        k, d = self.hidden_units, self.input_dim
        if value(self.ff.weights[0]).shape[1] != k + 1 + d:
            raise ValueError(f"feed-forward input width must be k + 1 + d = {k + 1 + d}")

    @property
    def input_dim(self) -> int:
        return self.lstm.input_dim

    @property
    def hidden_units(self) -> int:
        return self.lstm.hidden_units

    def named(self) -> list[tuple[str, object]]:
        out = []
        for g in GATES:
            out.append((f"lstm.A_{g}", self.lstm.A[g]))
        for g in GATES:
            out.append((f"lstm.U_{g}", self.lstm.U[g]))
        for g in GATES:
            out.append((f"lstm.b_{g}", self.lstm.b[g]))
        for i, (w, b) in enumerate(zip(self.ff.weights, self.ff.biases)):
            out.append((f"ff.{i}.A", w))
            out.append((f"ff.{i}.b", b))
        return out

    def leaves(self) -> list:
        return [a for _, a in self.named()]

    def with_leaves(self, leaves: Sequence) -> "PdgmParams":
        leaves = list(leaves)
        it = iter(leaves)
        A = {g: next(it) for g in GATES}
        U = {g: next(it) for g in GATES}
        b = {g: next(it) for g in GATES}
        weights, biases = [], []
        for _ in self.ff.weights:
            weights.append(next(it))
            biases.append(next(it))
        return PdgmParams(LstmParams(A, U, b), FeedForwardParams(weights, biases, list(self.ff.activations)))

    def map(self, fn: Callable) -> "PdgmParams":
        return self.with_leaves([fn(a) for a in self.leaves()])

    def arrays(self) -> list[np.ndarray]:
        return [value(a) for a in self.leaves()]

    def size(self) -> int:
        return sum(value(a).size for a in self.leaves())

    def architecture(self) -> dict:
        return {
            "input_dim": self.input_dim,
            "hidden_units": self.hidden_units,
            "ff_widths": list(self.ff.widths),
            "activations": list(self.ff.activations),
        }

    def equals(self, other: "PdgmParams") -> bool:
        a, b = self.arrays(), other.arrays()
        return (
            self.architecture() == other.architecture()
            and len(a) == len(b)
            and all(x.shape == y.shape and np.array_equal(x, y) for x, y in zip(a, b))
        )


def _normalize_widths(ff_widths: Sequence[int]) -> tuple[int, ...]:
    widths = tuple(int(w) for w in ff_widths)
    if not widths or min(widths) < 1:
        raise ValueError("feed-forward widths must be positive")
    return widths if widths[-1] == 1 and len(widths) > 1 else widths + (1,)


def init_params(
    input_dim: int,
    hidden_units: int,
    ff_widths: Sequence[int],
    seed: int = 0,
    activation: str = "tanh",
) -> PdgmParams:
    """Fan-in scaled normal weights, zero biases, forget-gate bias 1.

    ``ff_widths`` lists the hidden widths of the head; a trailing 1 (the
    scalar output) is appended when missing.
    """
    d, k = int(input_dim), int(hidden_units)
    if d < 1 or k < 1:
        raise ValueError("input_dim and hidden_units must be positive")
    if activation not in ACTIVATIONS:
        raise ValueError(f"unknown activation {activation!r}")
    widths = _normalize_widths(ff_widths)
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed))))
    A = {g: rng.standard_normal((k, d)) / np.sqrt(d) for g in GATES}
    U = {g: rng.standard_normal((k, k)) / np.sqrt(k) for g in GATES}
    b = {g: np.zeros(k) for g in GATES}
    b["F"] = np.ones(k)
    fan_in = k + 1 + d
    weights, biases = [], []
    for w in widths:
        weights.append(rng.standard_normal((w, fan_in)) / np.sqrt(fan_in))
        biases.append(np.zeros(w))
        fan_in = w
    acts = [activation] * (len(widths) - 1) + ["identity"]
    return PdgmParams(LstmParams(A, U, b), FeedForwardParams(weights, biases, acts))


def zeros_like_params(params: PdgmParams) -> PdgmParams:
    return params.map(lambda a: np.zeros_like(value(a)))


# -- LSTM -------------------------------------------------------------------------

def lstm_step(p: LstmParams, x, a_prev, c_prev):
    """One cell update; works on vectors ``(d,)`` or row batches ``(B, d)``."""
    x, a_prev, c_prev = ad.lift(x), ad.lift(a_prev), ad.lift(c_prev)
    k, d = p.hidden_units, p.input_dim
    if x.shape[-1] != d or a_prev.shape[-1] != k or c_prev.shape[-1] != k:
        raise ValueError(f"lstm_step expects x[..., {d}], a/c[..., {k}]")

    def affine(g):
        return x @ ad.transpose(p.A[g]) + a_prev @ ad.transpose(p.U[g]) + p.b[g] if x.ndim == 2 else (
            _matvec(p.A[g], x) + _matvec(p.U[g], a_prev) + p.b[g]
        )

    forget = ad.sigmoid(affine("F"))
    inp = ad.sigmoid(affine("I"))
    out = ad.sigmoid(affine("O"))
    c = forget * c_prev + inp * ad.tanh(affine("C"))
    a = out * ad.tanh(c)
    return a, c


def _matvec(m, v):
    return ad.reshape(ad.matmul(m, ad.reshape(v, (-1, 1))), (-1,))


def _packed(p: LstmParams):
    wx = ad.concatenate([ad.transpose(p.A[g]) for g in GATES], axis=1)  # (d, 4k)
    wh = ad.concatenate([ad.transpose(p.U[g]) for g in GATES], axis=1)  # (k, 4k)
    bias = ad.concatenate([p.b[g] for g in GATES], axis=0)  # (4k,)
    return wx, wh, bias


def lstm_sequence(p: LstmParams, x: np.ndarray, backend: str | None = None):
    """Run the LSTM over ``x`` of shape ``(B, T, d)`` starting from zero state.

    Returns Tensors ``(a, c)`` of shape ``(B, T, k)``. The recurrence runs in
    the selected kernel backend and is recorded as a single graph node.
    """
    x = np.ascontiguousarray(x, dtype=np.float64)
    B, T, d = x.shape
    if d != p.input_dim:
        raise ValueError(f"path dimension {d} does not match LSTM input dimension {p.input_dim}")
    wx, wh, bias = _packed(p)
    xw = ad.add(ad.matmul(x.reshape(B * T, d), wx), bias)  # (B*T, 4k)
    xw_data = np.ascontiguousarray(xw.data.reshape(B, T, -1))
    wh_data = np.ascontiguousarray(wh.data)
    be = kernels.get_backend(backend)
    a_seq, c_seq, gates = be.lstm_forward(xw_data, wh_data)
    k = a_seq.shape[2]
    cache = {}

    def backward_dz(g_a, g_c):
        key = (id(g_a), id(g_c))
        if key not in cache:
            cache.clear()
            cache[key] = be.lstm_backward(
                wh_data, c_seq, gates, np.ascontiguousarray(g_a), np.ascontiguousarray(g_c)
            )
        return cache[key]

    # a and c are exposed as two nodes over one hidden "state" node holding both
    state = ad.make_op(np.concatenate([a_seq, c_seq], axis=2), (xw, wh), None)

    def state_vjp(g):
        dz = backward_dz(g[..., :k], g[..., k:])
        a_prev = np.concatenate([np.zeros((B, 1, k)), a_seq[:, :-1]], axis=1)
        d_wh = a_prev.reshape(B * T, k).T @ dz.reshape(B * T, -1)
        return dz.reshape(B * T, -1), d_wh

    if state.requires_grad:
        state._vjp = state_vjp
    a = ad.getitem(state, (Ellipsis, slice(0, k)))
    c = ad.getitem(state, (Ellipsis, slice(k, 2 * k)))
    return a, c


# -- feed-forward head --------------------------------------------------------------

def feedforward(ff: FeedForwardParams, inputs):
    h = ad.lift(inputs)
    for w, b, act in zip(ff.weights, ff.biases, ff.activations):
        h = ACTIVATIONS[act](h @ ad.transpose(w) + b)
    return h


def head_inputs(times, spots, hidden):
    """Concatenate ``(t, y, a)`` along the last axis. ``times`` broadcasts."""
    spots = np.asarray(spots, dtype=np.float64)
    t = np.broadcast_to(np.asarray(times, dtype=np.float64)[..., None], spots.shape[:-1] + (1,))
    return ad.concatenate([t, spots, hidden], axis=-1)


def head(ff: FeedForwardParams, inputs):
    """Apply the head to ``(..., width)`` inputs, returning ``(...)`` values."""
    inputs = ad.lift(inputs)
    lead = inputs.shape[:-1]
    out = feedforward(ff, ad.reshape(inputs, (-1, inputs.shape[-1])))
    return ad.reshape(out, lead)


def hidden_histories(params: PdgmParams, values: np.ndarray, backend=None):
    """LSTM outputs and the lagged history ``a_{t_{i-1}}`` (zero at i = 0)."""
    a, c = lstm_sequence(params.lstm, values, backend)
    B, _, k = a.shape
    a_prev = ad.concatenate([np.zeros((B, 1, k)), a[:, :-1]], axis=1)
    return a, c, a_prev


def _as_values(path_or_batch):
    if isinstance(path_or_batch, DiscretePath):
        return path_or_batch.values[None], path_or_batch.dt, path_or_batch.start_time
    if isinstance(path_or_batch, PathBatch):
        return path_or_batch.values, path_or_batch.dt, path_or_batch.start_time
    raise TypeError("expected a DiscretePath or PathBatch")


def pdgm_forward(params: PdgmParams, path, backend=None):
    """Network value at every grid point.

    Returns ``(u, a, c)``; for a single path ``u`` is ``(N+1,)`` and
    ``a``/``c`` are ``(N+1, k)``, for a batch a leading ``M`` axis is added.
    Values are Tensors when ``params`` holds Tensors.
    """
    values, dt, start = _as_values(path)
    if values.shape[2] != params.input_dim:
        raise ValueError("path dimension does not match the network input dimension")
    times = start + np.arange(values.shape[1]) * dt
    a, c, a_prev = hidden_histories(params, values, backend)
    u = head(params.ff, head_inputs(times, values, a_prev))
    if isinstance(path, DiscretePath):
        u, a, c = u[0], a[0], c[0]
    if not any(isinstance(x, Tensor) and x.requires_grad for x in params.leaves()):
        return value(u), value(a), value(c)
    return u, a, c


# -- gradients ------------------------------------------------------------------------

def value_and_grad(params: PdgmParams, loss_fn: Callable[[PdgmParams], Tensor]):
    """Evaluate ``loss_fn`` on recorded parameters and back-propagate.

    Returns ``(loss value, gradients shaped like params)``.
    """
    tparams = params.map(lambda a: ad.parameter(value(a)))
    loss = loss_fn(tparams)
    if not isinstance(loss, Tensor):
        loss = Tensor(loss)
    grads = ad.grad(loss, tparams.leaves())
    return float(loss.data), params.with_leaves(grads)


def gradient(params: PdgmParams, loss_fn: Callable[[PdgmParams], Tensor]) -> PdgmParams:
    return value_and_grad(params, loss_fn)[1]


# -- Adam -----------------------------------------------------------------------------

@dataclass
class AdamState:
    m: list
    v: list
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def fresh(cls, params: PdgmParams, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8) -> "AdamState":
        zeros = [np.zeros_like(a) for a in params.arrays()]
        return cls([z.copy() for z in zeros], zeros, 0, lr, beta1, beta2, eps)

    def hyper(self) -> dict:
        return {"step": self.step, "lr": self.lr, "beta1": self.beta1, "beta2": self.beta2, "eps": self.eps}


def adam_update(params: PdgmParams, grads: PdgmParams, state: AdamState):
    """One bias-corrected Adam step. Inputs are left untouched."""
    p_arr, g_arr = params.arrays(), grads.arrays()
    if len(p_arr) != len(g_arr) or len(p_arr) != len(state.m):
        raise ValueError("parameter, gradient and optimizer layouts differ")
    step = state.step + 1
    b1, b2 = state.beta1, state.beta2
    c1, c2 = 1.0 - b1**step, 1.0 - b2**step
    new_p, new_m, new_v = [], [], []
    for p, g, m, v in zip(p_arr, g_arr, state.m, state.v):
        if p.shape != g.shape or p.shape != m.shape:
            raise ValueError(f"shape mismatch {p.shape} vs {g.shape}")
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        new_p.append(p - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps))
        new_m.append(m)
        new_v.append(v)
    new_state = AdamState(new_m, new_v, step, state.lr, b1, b2, state.eps)
    return params.with_leaves(new_p), new_state


# -- checkpoints ------------------------------------------------------------------------

MAGIC = b"PDGMCKPT"
FORMAT_VERSION = 1


class CheckpointError(ValueError):
    pass


def save_params(params: PdgmParams, optimizer: AdamState | None = None, meta: dict | None = None) -> bytes:
    """Serialize to ``MAGIC | version | header length | JSON header | float64 blob | crc32``."""
    names, arrays = [], []
    for name, arr in params.named():
        names.append(name)
        arrays.append(value(arr))
    header = {"architecture": params.architecture(), "meta": meta or {}}
    if optimizer is not None:
        header["adam"] = optimizer.hyper()
        for i, (n, _) in enumerate(params.named()):
            names.append(f"adam.m.{n}")
            arrays.append(optimizer.m[i])
        for i, (n, _) in enumerate(params.named()):
            names.append(f"adam.v.{n}")
            arrays.append(optimizer.v[i])
    header["arrays"] = [[n, list(a.shape)] for n, a in zip(names, arrays)]
    head_bytes = json.dumps(header, sort_keys=True).encode()
    blob = b"".join(np.ascontiguousarray(a, dtype="<f8").tobytes() for a in arrays)
    body = MAGIC + struct.pack("<II", FORMAT_VERSION, len(head_bytes)) + head_bytes + blob
    return body + struct.pack("<I", zlib.crc32(body))


def load_checkpoint(payload: bytes) -> tuple[PdgmParams, AdamState | None, dict]:
    if len(payload) < len(MAGIC) + 12 or payload[: len(MAGIC)] != MAGIC:
        raise CheckpointError("not a PDGM checkpoint (bad magic or too short)")
    version, hlen = struct.unpack_from("<II", payload, len(MAGIC))
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    (crc,) = struct.unpack_from("<I", payload, len(payload) - 4)
    if zlib.crc32(payload[:-4]) != crc:
        raise CheckpointError("checkpoint is truncated or corrupt (checksum mismatch)")
    start = len(MAGIC) + 8
    try:
        header = json.loads(payload[start : start + hlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"unreadable checkpoint header: {exc}") from None
    offset = start + hlen
    arrays = {}
    for name, shape in header["arrays"]:
        n = int(np.prod(shape)) if shape else 1
        chunk = payload[offset : offset + 8 * n]
        if len(chunk) != 8 * n:
            raise CheckpointError("checkpoint blob is truncated")
        arrays[name] = np.frombuffer(chunk, dtype="<f8").astype(np.float64).reshape(shape)
        offset += 8 * n
    if offset != len(payload) - 4:
        raise CheckpointError("checkpoint has trailing bytes")
    arch = header["architecture"]
    template = init_params(arch["input_dim"], arch["hidden_units"], arch["ff_widths"], 0)
    template.ff.activations[:] = arch["activations"]
    names = [n for n, _ in template.named()]
    params = template.with_leaves([arrays[n] for n in names])
    opt = None
    if "adam" in header:
        h = header["adam"]
        opt = AdamState(
            [arrays[f"adam.m.{n}"] for n in names],
            [arrays[f"adam.v.{n}"] for n in names],
            h["step"], h["lr"], h["beta1"], h["beta2"], h["eps"],
        )
    return params, opt, header.get("meta", {})


def load_params(payload: bytes) -> PdgmParams:
    return load_checkpoint(payload)[0]
