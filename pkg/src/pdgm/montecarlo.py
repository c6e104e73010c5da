"""Monte Carlo estimates of conditioned expectations.

A prefix path is continued with fresh simulations from its last value; the
continuations are pasted onto the prefix and the payoff is averaged.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from .paths import DiscretePath, GridMismatchError
from .simulation import SimSpec, derive_seed, path_rng, simulate

Payoff = Callable[[np.ndarray, float], np.ndarray]  # (values (M, N+1, d), dt) -> (M,)


@dataclass(frozen=True)
class MCEstimate:
    mean: float
    stderr: float
    n_sims: int
    seed: int

    def within(self, target: float, k: float = 3.0, slack: float = 0.0) -> bool:
        return abs(self.mean - target) <= k * self.stderr + slack

    def to_dict(self) -> dict:
        return {"mean": f"{self.mean:.17g}", "stderr": f"{self.stderr:.17g}",
                "n_sims": self.n_sims, "seed": self.seed}


def _estimate(samples: np.ndarray, seed: int) -> MCEstimate:
    n = samples.size
    if n < 2:
        raise ValueError("need at least two simulations")
    return MCEstimate(float(samples.mean()), float(samples.std(ddof=1) / np.sqrt(n)), n, int(seed))


def continuation_spec(prefix: DiscretePath, dynamics: SimSpec) -> SimSpec | None:
    """The SimSpec that continues ``prefix`` to the dynamics' horizon (None if done)."""
    if not np.isclose(prefix.dt, dynamics.dt, rtol=1e-12, atol=0.0):
        raise GridMismatchError(f"prefix dt {prefix.dt} differs from dynamics dt {dynamics.dt}")
    if prefix.dim != dynamics.dim:
        raise GridMismatchError("prefix and dynamics dimensions differ")
    remaining = (dynamics.start_time + dynamics.horizon - prefix.end_time) / dynamics.dt
    steps = int(round(remaining))
    if steps < 0 or not np.isclose(steps, remaining, atol=1e-6):
        raise GridMismatchError("prefix does not end on the dynamics' grid")
    if steps == 0:
        return None
    params = {k: v for k, v in dynamics.parameters.items() if k not in ("x0", "x0_low", "x0_high", "x0_std")}
    last = prefix.last
    if dynamics.kind == "heston":
        params["x0"], params["v0"] = float(last[0]), float(last[1])
    elif dynamics.kind in ("brownian", "gbm"):
        if dynamics.dim != 1:
            raise ValueError("continuations are supported for one-dimensional brownian/gbm dynamics")
        params["x0"] = float(last[0])
    else:
        raise ValueError(f"cannot continue {dynamics.kind!r} dynamics")
    return replace(dynamics, horizon=steps * dynamics.dt, n_steps=steps, parameters=params,
                   start_time=prefix.end_time)


def conditioned_expectation(
    prefix: DiscretePath,
    dynamics: SimSpec,
    payoff: Payoff,
    n_sims: int,
    seed: int = 0,
    discount: float | Callable[[np.ndarray, float], np.ndarray] | None = None,
    chunk: int = 20000,
) -> MCEstimate:
    """Estimate ``E[g(prefix ⊗ continuation)]``.

    ``discount`` is a constant rate or ``rates(values, dt) -> (M, n+1)``
    evaluated on the continuation; the payoff is multiplied by
    ``exp(-dt * sum_{i<n} rate_i)``.
    """
    if n_sims < 2:
        raise ValueError("n_sims must be >= 2")
    spec = continuation_spec(prefix, dynamics)
    if spec is None:
        value = float(np.asarray(payoff(prefix.values[None], prefix.dt)).reshape(-1)[0])
        return MCEstimate(value, 0.0, int(n_sims), int(seed))
    spec = spec.with_seed(seed)
    head = prefix.values[:-1]
    out = np.empty(n_sims)
    for lo in range(0, n_sims, chunk):
        cont = simulate(spec, min(chunk, n_sims - lo), offset=lo).values
        # the continuation already starts at the prefix's last value
        full = np.concatenate([np.broadcast_to(head, (cont.shape[0],) + head.shape), cont], axis=1)
        g = np.asarray(payoff(full, prefix.dt), dtype=np.float64)
        if discount is not None:
            if callable(discount):
                rates = np.asarray(discount(cont, spec.dt))[..., :-1]
                g = g * np.exp(-spec.dt * rates.sum(axis=-1))
            else:
                g = g * np.exp(-float(discount) * spec.horizon)
        out[lo : lo + cont.shape[0]] = g
    return _estimate(out, seed)


def pathwise_solution(
    path: DiscretePath,
    dynamics: SimSpec,
    payoff: Payoff,
    n_sims: int,
    seed: int = 0,
    discount=None,
) -> tuple[np.ndarray, np.ndarray]:
    """Conditioned expectation at every grid point of ``path``.

    Returns ``(means, stderrs)``; step ``i`` uses seed ``derive_seed(seed, i)``.
    """
    means = np.empty(path.n_steps + 1)
    errs = np.empty(path.n_steps + 1)
    for i in range(path.n_steps + 1):
        est = conditioned_expectation(path.prefix(i), dynamics, payoff, n_sims, derive_seed(seed, i), discount)
        means[i], errs[i] = est.mean, est.stderr
    return means, errs


# -- exotic options under geometric Brownian motion ----------------------------------------

def gbm_exotic_price(
    kind: str,
    params: dict,
    n_sims: int,
    seed: int = 0,
    n_steps: int = 100,
    monitoring: str = "continuous",
) -> MCEstimate:
    """Time-0 price of a geometric Asian, floating lookback or down-and-out call.

    Log-prices are simulated exactly on the grid. With continuous
    monitoring the path between grid points is a Brownian bridge: the
    interval integral is Gaussian given its endpoints, the interval minimum
    is sampled by inversion, and barrier survival enters as the bridge's
    non-crossing probability. Discrete monitoring uses grid points only.
    """
    if kind not in ("asian", "lookback", "barrier"):
        raise ValueError(f"unknown exotic {kind!r}")
    if monitoring not in ("continuous", "discrete"):
        raise ValueError("monitoring must be 'continuous' or 'discrete'")
    T, r, q, sig = params["T"], params["r"], params["q"], params["sigma"]
    x0 = params.get("x0", 1.0)
    dt = T / n_steps
    nu = r - q - 0.5 * sig**2
    z = np.empty((n_sims, n_steps))
    aux = np.empty((n_sims, n_steps))
    for j in range(n_sims):
        rng = path_rng(seed, j)
        z[j] = rng.standard_normal(n_steps)
        if monitoring == "continuous" and kind != "barrier":
            aux[j] = rng.standard_normal(n_steps) if kind == "asian" else rng.random(n_steps)
    x = np.empty((n_sims, n_steps + 1))
    x[:, 0] = np.log(x0)
    np.cumsum(nu * dt + sig * np.sqrt(dt) * z, axis=1, out=x[:, 1:])
    x[:, 1:] += x[:, :1]
    a, b = x[:, :-1], x[:, 1:]
    disc = np.exp(-r * T)

    if kind == "asian":
        if monitoring == "continuous":
            pieces = 0.5 * dt * (a + b) + sig * np.sqrt(dt**3 / 12.0) * aux
        else:
            pieces = dt * a
        pay = np.maximum(np.exp(pieces.sum(axis=1) / T) - params["K"], 0.0)
    elif kind == "lookback":
        if monitoring == "continuous":
            u = np.clip(aux, np.finfo(float).tiny, 1.0)
            lows = 0.5 * (a + b - np.sqrt((b - a) ** 2 - 2.0 * sig**2 * dt * np.log(u)))
            m = lows.min(axis=1)
        else:
            m = x.min(axis=1)
        pay = np.exp(x[:, -1]) - np.exp(m)
    else:
        beta = np.log(params["B"])
        call = np.maximum(np.exp(x[:, -1]) - params["K"], 0.0)
        alive = ~(x.min(axis=1) < beta)
        if monitoring == "continuous":
            with np.errstate(over="ignore"):
                keep = 1.0 - np.exp(-2.0 * np.maximum(a - beta, 0.0) * np.maximum(b - beta, 0.0) / (sig**2 * dt))
            pay = call * alive * keep.prod(axis=1)
        else:
            pay = call * alive
    return _estimate(disc * pay, seed)


def bgk_barrier_shift(barrier: float, sigma: float, dt: float) -> float:
    """Barrier level whose continuous price matches grid monitoring to first order
    (Broadie, Glasserman and Kou): ``B * exp(-0.5826 * sigma * sqrt(dt))``."""
    return barrier * float(np.exp(-0.5826 * sigma * np.sqrt(dt)))
