"""Catalogue of path-dependent PDE problems: operators, payoffs, closed forms.

Operators accept a :class:`~pdgm.funcderiv.DerivBundle` whose entries may be
numpy arrays or autodiff Tensors; the arithmetic is written so both work.
Closed forms are functions of a :class:`~pdgm.paths.PathState`, which lets
the same code serve single points, whole batches, bumps and extensions.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np
from scipy.stats import norm

from .autodiff import value
from .funcderiv import DerivBundle
from .paths import DiscretePath, PathState
from .simulation import SimSpec

# -- operators ---------------------------------------------------------------------

def _coord(x, j):
    return x[..., j]


def linear_operator(bundle: DerivBundle, mu=0.0, sigma=1.0, lam=0.0, k=0.0):
    """``Δ_t u + Σ μ_j Δ_x^j u + ½ Σ σ_j² Δ_xx^j u − λu + k``.

    ``mu`` and ``sigma`` are scalars or per-coordinate arrays.
    """
    d = value(bundle.du_dx).shape[-1]
    mu = np.broadcast_to(np.asarray(mu, dtype=np.float64), (d,))
    s2 = np.broadcast_to(np.asarray(sigma, dtype=np.float64) ** 2, (d,))
    out = bundle.du_dt
    for j in range(d):
        if mu[j]:
            out = out + mu[j] * _coord(bundle.du_dx, j)
        if s2[j]:
            out = out + 0.5 * s2[j] * _coord(bundle.d2u_dx2, j)
    if np.any(lam):
        out = out - lam * bundle.u
    if np.any(k):
        out = out + k
    return out


def black_scholes_operator(bundle: DerivBundle, y, r: float, q: float, sigma: float):
    """``Δ_t u + (r−q) y Δ_x u + ½ σ² y² Δ_xx u − r u``."""
    y = np.asarray(y, dtype=np.float64)
    return (
        bundle.du_dt
        + (r - q) * y * _coord(bundle.du_dx, 0)
        + 0.5 * sigma**2 * y * y * _coord(bundle.d2u_dx2, 0)
        - r * bundle.u
    )


def heston_operator(bundle: DerivBundle, y, v, r, q, kappa, m, xi, rho):
    """Black-Scholes part with variance ``v`` plus the variance terms.

    The variance is coordinate 1 of the bundle; ``bundle.cross`` holds the
    mixed price/variance difference.
    """
    if bundle.cross is None or value(bundle.du_dx).shape[-1] < 2:
        raise ValueError("the Heston operator needs variance derivatives and the cross term")
    y = np.asarray(y, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    return (
        bundle.du_dt
        + (r - q) * y * _coord(bundle.du_dx, 0)
        + 0.5 * v * y * y * _coord(bundle.d2u_dx2, 0)
        - r * bundle.u
        + kappa * (m - v) * _coord(bundle.du_dx, 1)
        + 0.5 * xi * xi * v * _coord(bundle.d2u_dx2, 1)
        + rho * xi * v * y * bundle.cross
    )


def nonlinear_source(y, integral, mu_lo, mu_hi, sigma_lo, sigma_hi):
    """Source term making ``cos(y + I)`` an exact solution."""
    s = np.sin(y + integral)
    c = np.cos(y + integral)
    return (
        (y + mu_lo) * np.minimum(s, 0.0)
        + (y + mu_hi) * np.maximum(s, 0.0)
        + 0.5 * sigma_lo**2 * np.maximum(c, 0.0)
        + 0.5 * sigma_hi**2 * np.minimum(c, 0.0)
    )


def nonlinear_coefficients(dx, dxx, mu_lo, mu_hi, sigma_lo, sigma_hi):
    """Drift and variance picked by the signs of Δ_x and Δ_xx (zero on ties)."""
    dx, dxx = value(dx), value(dxx)
    mu = np.where(dx > 0, mu_lo, np.where(dx < 0, mu_hi, 0.0))
    s2 = np.where(dxx < 0, sigma_lo**2, np.where(dxx > 0, sigma_hi**2, 0.0))
    return mu, s2


def nonlinear_operator(bundle: DerivBundle, y, integral, mu_lo, mu_hi, sigma_lo, sigma_hi):
    """Sign-selected drift and volatility plus the source. The selections are
    constants for differentiation purposes."""
    dx, dxx = _coord(bundle.du_dx, 0), _coord(bundle.d2u_dx2, 0)
    mu, s2 = nonlinear_coefficients(dx, dxx, mu_lo, mu_hi, sigma_lo, sigma_hi)
    src = nonlinear_source(np.asarray(y), np.asarray(integral), mu_lo, mu_hi, sigma_lo, sigma_hi)
    return bundle.du_dt + mu * dx + 0.5 * s2 * dxx + src


# -- shared pieces -----------------------------------------------------------------

def barrier_crossed(path: DiscretePath, step: int | None, barrier: float) -> bool:
    """Whether coordinate 0 went strictly below ``barrier`` at grid points 0..step."""
    step = path.n_steps if step is None else step
    if not 0 <= step <= path.n_steps:
        raise IndexError(f"step {step} outside 0..{path.n_steps}")
    return bool(np.min(path.values[: step + 1, 0]) < barrier)


def crossed_mask(values: np.ndarray, barrier: float) -> np.ndarray:
    """``(M, N+1)`` running crossing indicator for a batch of values."""
    return np.minimum.accumulate(values[..., 0], axis=-1) < barrier


def bs_call(y, tau, strike, r, q, sigma):
    """Black-Scholes call; ``tau = 0`` gives the intrinsic value."""
    y, tau = np.broadcast_arrays(np.asarray(y, dtype=np.float64), np.asarray(tau, dtype=np.float64))
    out = np.array(np.maximum(y - strike, 0.0), dtype=np.float64)
    live = tau > 0
    if np.any(live):
        yl, tl = y[live], tau[live]
        sq = sigma * np.sqrt(tl)
        d1 = (np.log(yl / strike) + (r - q + 0.5 * sigma**2) * tl) / sq
        out[live] = yl * np.exp(-q * tl) * norm.cdf(d1) - strike * np.exp(-r * tl) * norm.cdf(d1 - sq)
    return out


def _tau(state: PathState, prm) -> np.ndarray:
    tau = prm["T"] - np.asarray(state.t, dtype=np.float64)
    if np.any(tau < -1e-12 * max(1.0, prm["T"])):
        raise ValueError("closed forms are defined on [0, T] only")
    return np.maximum(tau, 0.0)


def _positive(y, what):
    if np.any(np.asarray(y) <= 0):
        raise ValueError(f"{what} needs strictly positive prices")


# -- closed forms (functions of a PathState) ------------------------------------------

def cf_path_independent(s: PathState, prm):
    return s.y[..., 0] ** 2 + prm["sigma"] ** 2 * _tau(s, prm)


def cf_linear(s: PathState, prm):
    return s.integral[..., 0] + s.y[..., 0] * _tau(s, prm)


def cf_quadratic(s: PathState, prm):
    tau = _tau(s, prm)
    mean = s.integral[..., 0] + s.y[..., 0] * tau
    return mean**2 + prm["sigma"] ** 2 * tau**3 / 3.0


def cf_high_dim(s: PathState, prm):
    tau = _tau(s, prm)
    d = s.y.shape[-1]
    mean = s.integral.sum(axis=-1) + s.y.sum(axis=-1) * tau
    return mean**2 + d * prm["sigma"] ** 2 * tau**3 / 3.0


def cf_asian(s: PathState, prm):
    T, K, r, q, sig = prm["T"], prm["K"], prm["r"], prm["q"], prm["sigma"]
    y = s.y[..., 0]
    _positive(y, "the geometric Asian closed form")
    tau = _tau(s, prm)
    log_mean = s.log_integral / T + (tau / T) * np.log(y)
    mu_bar = (r - q - 0.5 * sig**2) * tau**2 / (2.0 * T)
    sig_bar = sig / T * np.sqrt(tau**3 / 3.0)
    intrinsic = np.maximum(np.exp(log_mean) - K, 0.0)
    live = sig_bar > 0
    safe = np.where(live, sig_bar, 1.0)
    d2 = (log_mean + mu_bar - np.log(K)) / safe
    d1 = d2 + safe
    price = np.exp(-r * tau) * (
        np.exp(log_mean + mu_bar + 0.5 * sig_bar**2) * norm.cdf(d1) - K * norm.cdf(d2)
    )
    return np.where(live, price, intrinsic)


def cf_lookback(s: PathState, prm):
    r, q, sig = prm["r"], prm["q"], prm["sigma"]
    if q != 0:
        raise ValueError("the lookback closed form assumes q = 0")
    y = s.y[..., 0]
    _positive(y, "the lookback closed form")
    m = s.running_min
    tau = _tau(s, prm)
    live = tau > 0
    st = np.where(live, sig * np.sqrt(tau), 1.0)
    a1 = (np.log(y / m) + (r + 0.5 * sig**2) * tau) / st
    a2 = a1 - st
    a3 = a1 - 2.0 * r / sig * np.sqrt(tau)
    disc = np.exp(-r * tau)
    price = (
        y * norm.cdf(a1)
        - m * disc * norm.cdf(a2)
        - y * sig**2 / (2.0 * r) * (norm.cdf(-a1) - disc * (m / y) ** (2.0 * r / sig**2) * norm.cdf(-a3))
    )
    return np.where(live, price, y - m)


def down_and_out_call(y, tau, prm):
    """Continuously monitored down-and-out call for a path that has not crossed."""
    K, B, r, q, sig = prm["K"], prm["B"], prm["r"], prm["q"], prm["sigma"]
    lam = 2.0 * (r - q) / sig**2
    y = np.asarray(y, dtype=np.float64)
    return bs_call(y, tau, K, r, q, sig) - (y / B) ** (1.0 - lam) * bs_call(B * B / y, tau, K, r, q, sig)


def cf_barrier(s: PathState, prm):
    y = s.y[..., 0]
    _positive(y, "the barrier closed form")
    alive = ~(s.running_min < prm["B"])
    return np.where(alive, down_and_out_call(y, _tau(s, prm), prm), 0.0)


def cf_nonlinear(s: PathState, prm):
    return np.cos(s.y[..., 0] + s.integral[..., 0])


# -- payoffs (functions of whole paths) --------------------------------------------------

def _terminal(values, dt):
    values = np.asarray(values, dtype=np.float64)
    state = PathState.from_values(values, dt)
    pick = lambda x: x[..., -1]  # noqa: E731
    return PathState(pick(state.t), state.y[..., -1, :], state.integral[..., -1, :],
                     pick(state.log_integral), pick(state.min_before))


def hitting_time(values, dt):
    """First grid time at which coordinate 0 reaches its final level.

    Reaching means touching or crossing: the first ``i`` with
    ``(y_i − y_T)(y_0 − y_T) ≤ 0``.
    """
    y = np.asarray(values, dtype=np.float64)[..., 0]
    rel = (y - y[..., -1:]) * (y[..., :1] - y[..., -1:])
    return np.argmax(rel <= 0.0, axis=-1) * dt


def _asian_payoff(values, dt, prm):
    v = np.asarray(values)[..., 0]
    _positive(v, "the geometric Asian payoff")
    s = _terminal(values, dt)
    return np.maximum(np.exp(s.log_integral / prm["T"]) - prm["K"], 0.0)


def _barrier_payoff(values, dt, prm):
    v = np.asarray(values, dtype=np.float64)
    alive = ~(v[..., 0].min(axis=-1) < prm["B"])
    return np.where(alive, np.maximum(v[..., -1, 0] - prm["K"], 0.0), 0.0)


PAYOFFS: dict[str, Callable] = {
    "path_independent": lambda v, dt, prm: np.asarray(v)[..., -1, 0] ** 2,
    "linear_running_integral": lambda v, dt, prm: _terminal(v, dt).integral[..., 0],
    "quadratic_running_integral": lambda v, dt, prm: _terminal(v, dt).integral[..., 0] ** 2,
    "high_dim": lambda v, dt, prm: _terminal(v, dt).integral.sum(axis=-1) ** 2,
    "hitting_time": lambda v, dt, prm: hitting_time(v, dt),
    "asian": _asian_payoff,
    "lookback": lambda v, dt, prm: np.asarray(v)[..., -1, 0] - np.asarray(v)[..., 0].min(axis=-1),
    "barrier": _barrier_payoff,
    "heston": _asian_payoff,
    "nonlinear": lambda v, dt, prm: cf_nonlinear(_terminal(v, dt), prm),
}

CLOSED_FORMS: dict[str, Callable] = {
    "path_independent": cf_path_independent,
    "linear_running_integral": cf_linear,
    "quadratic_running_integral": cf_quadratic,
    "high_dim": cf_high_dim,
    "asian": cf_asian,
    "lookback": cf_lookback,
    "barrier": cf_barrier,
    "nonlinear": cf_nonlinear,
}


# -- problems ---------------------------------------------------------------------------

_BROWNIAN = {"T": 1.0, "N": 100, "sigma": 1.0, "x0": 0.0}
_FINANCE = {"T": 1.0, "N": 100, "sigma": 1.0, "x0": 1.0, "r": 0.03, "q": 0.01}

DEFAULTS: dict[str, dict] = {
    "path_independent": dict(_BROWNIAN),
    "linear_running_integral": dict(_BROWNIAN),
    "quadratic_running_integral": dict(_BROWNIAN),
    "high_dim": dict(_BROWNIAN, dim=20),
    "hitting_time": dict(_BROWNIAN, x0_std=1.0),
    "asian": dict(_FINANCE, K=0.4),
    "lookback": dict(_FINANCE, q=0.0),
    "barrier": dict(_FINANCE, K=0.8, B=0.6),
    "heston": {"T": 1.0, "N": 100, "x0": 1.0, "v0": 1.0, "r": 0.03, "q": 0.01,
               "kappa": 3.0, "m": 1.0, "xi": 1.0, "rho": 0.6, "K": 0.4},
    "nonlinear": dict(_BROWNIAN, mu_lo=-0.2, mu_hi=0.2, sigma_lo=0.2, sigma_hi=0.3),
}

PROBLEMS = tuple(DEFAULTS)


@dataclass
class PpdeProblem:
    """A final-value PPDE together with how to sample its training paths."""

    name: str
    params: dict
    sim_spec: SimSpec
    operator: Callable  # (bundle, PathState, params) -> residual
    payoff_fn: Callable  # (values, dt, params) -> (M,)
    closed_form_fn: Callable | None = None  # (PathState, params) -> values
    barrier: float | None = None
    cross: bool = False
    extra: dict = field(default_factory=dict)

    @property
    def horizon(self) -> float:
        return float(self.params["T"])

    @property
    def n_steps(self) -> int:
        return int(self.params["N"])

    @property
    def dim(self) -> int:
        return self.sim_spec.dim

    @property
    def has_closed_form(self) -> bool:
        return self.closed_form_fn is not None

    def residual(self, bundle: DerivBundle, state: PathState):
        return self.operator(bundle, state, self.params)

    def terminal(self, values: np.ndarray, dt: float) -> np.ndarray:
        return np.asarray(self.payoff_fn(values, dt, self.params), dtype=np.float64)

    def solution(self, state: PathState) -> np.ndarray:
        if self.closed_form_fn is None:
            raise ValueError(f"problem {self.name!r} has no closed form")
        return self.closed_form_fn(state, self.params)


def _brownian_op(bundle, state, prm):
    return linear_operator(bundle, 0.0, prm["sigma"])


def _bs_op(bundle, state, prm):
    return black_scholes_operator(bundle, state.y[..., 0], prm["r"], prm["q"], prm["sigma"])


def _heston_op(bundle, state, prm):
    return heston_operator(bundle, state.y[..., 0], state.y[..., 1], prm["r"], prm["q"],
                           prm["kappa"], prm["m"], prm["xi"], prm["rho"])


def _nonlinear_op(bundle, state, prm):
    return nonlinear_operator(bundle, state.y[..., 0], state.integral[..., 0],
                              prm["mu_lo"], prm["mu_hi"], prm["sigma_lo"], prm["sigma_hi"])


_SIM_KEYS = {
    "brownian": ("sigma", "x0", "x0_std"),
    "gbm": ("sigma", "x0", "r", "q"),
    "heston": ("x0", "v0", "r", "q", "kappa", "m", "xi", "rho"),
}


def build_problem(name: str, params: Mapping | None = None, sim: Mapping | None = None, seed: int = 0) -> PpdeProblem:
    """Instantiate a catalogued problem.

    ``params`` overrides the model constants (``T``, ``N``, ``sigma``,
    ``K`` ...); ``sim`` overrides or adds training-path parameters such as
    ``sigma_choices`` or ``x0_low``/``x0_high``.
    """
    if name not in DEFAULTS:
        raise KeyError(f"unknown problem {name!r}; choose from {', '.join(PROBLEMS)}")
    prm = dict(DEFAULTS[name])
    unknown = set(params or {}) - set(prm) - {"dim"}
    if unknown:
        raise ValueError(f"unknown parameters for {name!r}: {sorted(unknown)}")
    prm.update({k: (int(v) if k in ("N", "dim") else float(v)) for k, v in (params or {}).items()})
    if name == "lookback" and prm["q"] != 0:
        raise ValueError("the lookback example is defined for q = 0 only")
    if name == "barrier" and not prm["B"] < prm["x0"]:
        raise ValueError("the barrier must lie below the initial price")

    if name in ("asian", "lookback", "barrier"):
        kind, op, dim = "gbm", _bs_op, 1
    elif name == "heston":
        kind, op, dim = "heston", _heston_op, 2
    else:
        kind, dim = "brownian", int(prm.get("dim", 1))
        op = _nonlinear_op if name == "nonlinear" else _brownian_op
    if name != "high_dim" and dim != (2 if kind == "heston" else 1):
        raise ValueError(f"{name!r} is one-dimensional")
    sim_params = {k: prm[k] for k in _SIM_KEYS[kind] if k in prm}
    sim_params.update(sim or {})
    spec = SimSpec(kind, prm["T"], int(prm["N"]), dim, sim_params, seed)
    return PpdeProblem(
        name=name,
        params=prm,
        sim_spec=spec,
        operator=op,
        payoff_fn=PAYOFFS[name],
        closed_form_fn=CLOSED_FORMS.get(name),
        barrier=prm.get("B") if name == "barrier" else None,
        cross=name == "heston",
    )


# -- single-path conveniences ------------------------------------------------------------

def payoff(name: str, path: DiscretePath, params: Mapping | None = None) -> float:
    """Terminal payoff of the full ``path``."""
    if name not in PAYOFFS:
        raise KeyError(f"unknown payoff {name!r}")
    prm = dict(DEFAULTS[name])
    prm.update(params or {})
    return float(PAYOFFS[name](path.values, path.dt, prm))


def closed_form(name: str, path: DiscretePath, step: int | None = None, params: Mapping | None = None) -> float:
    """Analytic solution at grid point ``step`` (default: the last) of ``path``."""
    prm = dict(DEFAULTS.get(name, {}))
    prm.update(params or {})
    step = path.n_steps if step is None else step
    if name == "hitting_time":
        # only the value at the start is known: E[hitting time] = T/2
        if step != 0:
            raise ValueError("the hitting-time example has an analytic value at t = 0 only")
        return 0.5 * prm["T"]
    if name not in CLOSED_FORMS:
        raise KeyError(f"no closed form for {name!r}")
    return float(CLOSED_FORMS[name](PathState.from_path(path, step), prm))


def closed_form_functional(name: str, params: Mapping | None = None) -> Callable[[DiscretePath], float]:
    """``path -> closed form at its last point``, for :func:`funcderiv.functional_derivs`."""
    return lambda p: closed_form(name, p, None, params)


def residual_of(name: str, bundle: DerivBundle, state: PathState, params: Mapping | None = None):
    """Operator residual for catalogue problem ``name`` (no path sampling)."""
    prm = dict(DEFAULTS[name])
    prm.update(params or {})
    op = {"asian": _bs_op, "lookback": _bs_op, "barrier": _bs_op, "heston": _heston_op,
          "nonlinear": _nonlinear_op}.get(name, _brownian_op)
    return op(bundle, state, prm)
