"""Finite-difference functional derivatives.

Three evaluators share one set of difference quotients:

* :func:`network_derivs_batch` for the PDGM network, where bumps change only
  the spot input of the head and the time shift feeds ``(t_{i+1}, y_i, a_i)``;
* :func:`functional_derivs` for an arbitrary functional of a DiscretePath,
  built from :func:`~pdgm.paths.bump` and :func:`~pdgm.paths.flat_extend`;
* :func:`state_derivs` for functionals written in terms of a
  :class:`~pdgm.paths.PathState`, vectorised over many points at once.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autodiff as ad
from . import nn
from .autodiff import value
from .paths import DiscretePath, PathBatch, PathState, bump, flat_extend

SCHEMES = ("central", "one_sided")


@dataclass
class DerivBundle:
    """Values and difference quotients at one or many points.

    ``du_dx`` and ``d2u_dx2`` carry a trailing coordinate axis. Entries are
    numpy arrays or autodiff Tensors (when produced from recorded params).
    ``cross`` is the mixed price/variance difference when requested.
    """

    u: object
    du_dt: object
    du_dx: object
    d2u_dx2: object
    h: float
    dt: float
    scheme: str = "central"
    cross: object = None

    def __post_init__(self):
        if not self.h > 0 or not self.dt > 0:
            raise ValueError("h and dt must be positive")
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}")

    def at(self, *index) -> "DerivBundle":
        """Select points (leading axes) from a batched bundle."""
        pick = lambda x: None if x is None else x[index]  # noqa: E731
        return DerivBundle(
            pick(self.u), pick(self.du_dt), pick(self.du_dx), pick(self.d2u_dx2),
            self.h, self.dt, self.scheme, pick(self.cross),
        )

    def numpy(self) -> "DerivBundle":
        v = lambda x: None if x is None else value(x)  # noqa: E731
        return DerivBundle(
            v(self.u), v(self.du_dt), v(self.du_dx), v(self.d2u_dx2),
            self.h, self.dt, self.scheme, v(self.cross),
        )


def _quotients(u, shift, plus, minus, h, delta_t, scheme):
    """Assemble difference quotients from stencil values.

    ``plus``/``minus`` are sequences over coordinates.
    """
    du_dt = (shift - u) / delta_t
    if scheme == "central":
        dx = [(p - m) / (2.0 * h) for p, m in zip(plus, minus)]
    else:
        dx = [(p - u) / h for p in plus]
    dxx = [(p - 2.0 * u + m) / (h * h) for p, m in zip(plus, minus)]
    return du_dt, dx, dxx


def _stack_last(items):
    if any(isinstance(x, ad.Tensor) for x in items):
        return ad.stack(items, axis=-1)
    return np.stack([np.asarray(x, dtype=np.float64) for x in items], axis=-1)


def _check(h, scheme):
    if not h > 0:
        raise ValueError("h must be positive")
    if scheme not in SCHEMES:
        raise ValueError(f"scheme must be one of {SCHEMES}")


# -- the network -----------------------------------------------------------------

def network_derivs_batch(
    params: nn.PdgmParams,
    paths,
    h: float = 1e-2,
    scheme: str = "central",
    cross: tuple[float, float] | None = None,
    backend: str | None = None,
) -> DerivBundle:
    """Derivatives of the network at every grid point of every path.

    Arrays have shape ``(M, N+1)`` (``du_dx``/``d2u_dx2``: ``(M, N+1, d)``).
    All stencils go through the head in a single pass, and the recurrent
    part of the first layer is computed once and shared. ``cross=(h_x, h_v)``
    adds the mixed difference in coordinates 0 and 1.
    """
    _check(h, scheme)
    if isinstance(paths, DiscretePath):
        paths = PathBatch(paths.values[None], paths.dt, paths.start_time)
    values, dt = paths.values, paths.dt
    M, n1, d = values.shape
    if d != params.input_dim:
        raise ValueError("path dimension does not match the network input dimension")
    if cross is not None and d < 2:
        raise ValueError("the mixed difference needs at least two coordinates")
    times = paths.start_time + np.arange(n1) * dt
    a, _, a_prev = nn.hidden_histories(params, values, backend)
    k = params.hidden_units

    # stencil spots: base, shift (same spot), then +h/-h per coordinate, then cross
    spots = [values]
    for j in range(d):
        for s in (h, -h):
            bumped = values.copy()
            bumped[..., j] += s
            spots.append(bumped)
    if cross is not None:
        hx, hv = cross
        for sx, sv in ((hx, hv), (hx, -hv), (-hx, hv), (-hx, -hv)):
            bumped = values.copy()
            bumped[..., 0] += sx
            bumped[..., 1] += sv
            spots.append(bumped)
    spots = np.stack(spots)  # (S, M, n1, d); the shift stencil is added separately
    S = spots.shape[0]

    w0, b0 = params.ff.weights[0], params.ff.biases[0]
    w_t = ad.getitem(w0, (slice(None), 0))
    w_y = ad.getitem(w0, (slice(None), slice(1, 1 + d)))
    w_a = ad.getitem(w0, (slice(None), slice(1 + d, 1 + d + k)))
    width = value(w0).shape[0]

    def hidden_term(h_seq):
        return ad.reshape(ad.reshape(h_seq, (M * n1, k)) @ ad.transpose(w_a), (M, n1, width))

    spot_term = ad.reshape(ad.matmul(spots.reshape(-1, d), ad.transpose(w_y)), (S, M, n1, width))
    time_term = ad.reshape(times, (n1, 1)) * w_t  # (n1, width)
    shift_time = ad.reshape(times + dt, (n1, 1)) * w_t
    pre_rest = spot_term + hidden_term(a_prev) + time_term + b0  # broadcasts over S
    pre_shift = ad.getitem(spot_term, 0) + hidden_term(a) + shift_time + b0
    pre = ad.concatenate([pre_rest, ad.reshape(pre_shift, (1, M, n1, width))], axis=0)

    ff = params.ff
    hcur = nn.ACTIVATIONS[ff.activations[0]](ad.reshape(pre, ((S + 1) * M * n1, width)))
    rest = nn.FeedForwardParams(ff.weights[1:], ff.biases[1:], ff.activations[1:]) if len(ff.weights) > 1 else None
    out = nn.feedforward(rest, hcur) if rest is not None else hcur
    out = ad.reshape(out, (S + 1, M, n1))

    u = out[0]
    shift = out[S]
    plus = [out[1 + 2 * j] for j in range(d)]
    minus = [out[2 + 2 * j] for j in range(d)]
    du_dt, dx, dxx = _quotients(u, shift, plus, minus, h, dt, scheme)
    mixed = None
    if cross is not None:
        hx, hv = cross
        c = 1 + 2 * d
        mixed = (out[c] - out[c + 1] - out[c + 2] + out[c + 3]) / (4.0 * hx * hv)
    bundle = DerivBundle(u, du_dt, _stack_last(dx), _stack_last(dxx), h, dt, scheme, mixed)
    recording = any(isinstance(x, ad.Tensor) and x.requires_grad for x in params.leaves())
    return bundle if recording else bundle.numpy()


def network_derivs(
    params: nn.PdgmParams,
    path: DiscretePath,
    step: int,
    h: float = 1e-2,
    scheme: str = "central",
    cross: tuple[float, float] | None = None,
) -> DerivBundle:
    """Derivatives of the network at grid point ``step`` of one path."""
    if not 0 <= step <= path.n_steps:
        raise IndexError(f"step {step} outside 0..{path.n_steps}")
    return network_derivs_batch(params, path, h, scheme, cross).at(0, step)


def cross_deriv_v(f, path: DiscretePath, step: int, h_x: float, h_v: float) -> float:
    """Mixed difference in price (coordinate 0) and variance (coordinate 1).

    ``f`` is either PDGM params or a callable on DiscretePath.
    """
    if path.dim != 2:
        raise ValueError("cross_deriv_v needs a 2-dimensional (price, variance) path")
    if isinstance(f, nn.PdgmParams):
        return float(value(network_derivs(f, path, step, min(h_x, h_v), cross=(h_x, h_v)).cross))
    p = path.prefix(step)
    vals = [f(bump(bump(p, sx, 0), sv, 1)) for sx, sv in ((h_x, h_v), (h_x, -h_v), (-h_x, h_v), (-h_x, -h_v))]
    return (vals[0] - vals[1] - vals[2] + vals[3]) / (4.0 * h_x * h_v)


# -- arbitrary functionals of a path -----------------------------------------------

def functional_derivs(
    f: Callable[[DiscretePath], float],
    path: DiscretePath,
    step: int,
    h: float = 1e-2,
    delta_t: float | None = None,
    scheme: str = "central",
) -> DerivBundle:
    """Difference quotients of ``f`` at the prefix of ``path`` ending at ``step``.

    ``delta_t`` must be a whole number of grid steps (default: one).
    """
    _check(h, scheme)
    if not 0 <= step <= path.n_steps:
        raise IndexError(f"step {step} outside 0..{path.n_steps}")
    delta_t = path.dt if delta_t is None else delta_t
    k_steps = int(round(delta_t / path.dt))
    if k_steps < 1 or not np.isclose(k_steps * path.dt, delta_t, rtol=1e-12, atol=0.0):
        raise ValueError("delta_t must be a positive multiple of the path's dt")
    p = path.prefix(step)
    u = float(f(p))
    shift = float(f(flat_extend(p, k_steps)))
    plus = [float(f(bump(p, h, j))) for j in range(p.dim)]
    minus = [float(f(bump(p, -h, j))) for j in range(p.dim)]
    du_dt, dx, dxx = _quotients(u, shift, plus, minus, h, k_steps * path.dt, scheme)
    return DerivBundle(u, du_dt, np.array(dx), np.array(dxx), h, k_steps * path.dt, scheme)


def state_derivs(
    f: Callable[[PathState], np.ndarray],
    state: PathState,
    h: float = 1e-2,
    delta_t: float = 1e-2,
    scheme: str = "central",
    cross: tuple[float, float] | None = None,
) -> DerivBundle:
    """Difference quotients of a state functional at every point of ``state``.

    Unlike :func:`functional_derivs`, ``delta_t`` may be any positive number.
    """
    _check(h, scheme)
    if not delta_t > 0:
        raise ValueError("delta_t must be positive")
    d = state.y.shape[-1]
    u = np.asarray(f(state), dtype=np.float64)
    shift = np.asarray(f(state.extended(delta_t)), dtype=np.float64)
    plus = [np.asarray(f(state.bumped(h, j))) for j in range(d)]
    minus = [np.asarray(f(state.bumped(-h, j))) for j in range(d)]
    du_dt, dx, dxx = _quotients(u, shift, plus, minus, h, delta_t, scheme)
    mixed = None
    if cross is not None:
        hx, hv = cross
        v = [f(state.bumped(sx, 0).bumped(sv, 1)) for sx, sv in ((hx, hv), (hx, -hv), (-hx, hv), (-hx, -hv))]
        mixed = (v[0] - v[1] - v[2] + v[3]) / (4.0 * hx * hv)
    return DerivBundle(u, du_dt, np.stack(dx, -1), np.stack(dxx, -1), h, delta_t, scheme, mixed)
