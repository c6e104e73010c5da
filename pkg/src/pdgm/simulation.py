"""Seeded path generators for training, test and Monte Carlo batches.

Every path draws from its own Philox stream keyed by ``(seed, path index)``,
so a batch is reproducible regardless of how (or whether) generation is
split across workers.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Mapping

import numpy as np

from .paths import PathBatch

RNG_NAME = "numpy.random.Philox(SeedSequence(entropy=seed, spawn_key=(*stream, path_index)))"

KINDS = ("brownian", "gbm", "heston", "uniform_noise", "smooth_parametric")

_ALLOWED = {
    "brownian": {"sigma", "sigma_choices", "x0", "x0_low", "x0_high", "x0_std", "mu"},
    "gbm": {"sigma", "x0", "x0_low", "x0_high", "r", "q"},
    "heston": {"x0", "v0", "r", "q", "kappa", "m", "xi", "rho"},
    "uniform_noise": {"low", "high"},
    "smooth_parametric": set(),
}

# deterministic test paths, as functions of t on [0, T]
SMOOTH_PATHS = {
    "one_minus_t_sq": lambda t: (1.0 - t) ** 2,
    "two_minus_4t_cubed": lambda t: (2.0 - 4.0 * t) ** 3,
    "one_minus_2t_cubed": lambda t: (1.0 - 2.0 * t) ** 3,
    "scaled_one_minus_t_sq": lambda t: 2.25 * (1.0 - t) ** 2,
    "line_0_to_3": lambda t: 3.0 * t,
}


class SimSpecError(ValueError):
    pass


@dataclass(frozen=True)
class SimSpec:
    """What to simulate: process kind, grid, parameters and seed.

    ``parameters`` values are floats, except ``sigma_choices`` which is a
    tuple of volatilities drawn uniformly per path.
    """

    kind: str
    horizon: float = 1.0
    n_steps: int = 100
    dim: int = 1
    parameters: Mapping[str, object] = field(default_factory=dict)
    seed: int = 0
    shape: str | None = None
    start_time: float = 0.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise SimSpecError(f"unknown kind {self.kind!r}; expected one of {KINDS}")
        if not self.horizon > 0:
            raise SimSpecError("horizon must be positive")
        if int(self.n_steps) != self.n_steps or self.n_steps < 1:
            raise SimSpecError("n_steps must be an integer >= 1")
        if self.dim < 1:
            raise SimSpecError("dim must be >= 1")
        params = dict(self.parameters)
        unknown = set(params) - _ALLOWED[self.kind]
        if unknown:
            raise SimSpecError(f"parameters {sorted(unknown)} are not valid for kind {self.kind!r}")
        for name in ("sigma", "xi", "v0", "m", "kappa"):
            if name in params and float(params[name]) < 0:
                raise SimSpecError(f"{name} must be >= 0")
        if "sigma_choices" in params:
            choices = tuple(float(s) for s in params["sigma_choices"])
            if not choices or min(choices) < 0:
                raise SimSpecError("sigma_choices must be a non-empty set of non-negative values")
            params["sigma_choices"] = choices
        if "rho" in params and not -1.0 <= float(params["rho"]) <= 1.0:
            raise SimSpecError("rho must lie in [-1, 1]")
        if ("x0_low" in params) != ("x0_high" in params):
            raise SimSpecError("x0_low and x0_high go together")
        if self.kind == "heston" and self.dim != 2:
            raise SimSpecError("heston paths are 2-dimensional (price, variance)")
        if self.kind == "gbm":
            if "x0" in params and float(params["x0"]) <= 0:
                raise SimSpecError("gbm needs x0 > 0")
            if "x0_low" in params and float(params["x0_low"]) <= 0:
                raise SimSpecError("gbm needs x0_low > 0")
        if self.kind == "uniform_noise" and float(params.get("low", -1.0)) > float(params.get("high", 1.0)):
            raise SimSpecError("uniform_noise needs low <= high")
        if self.kind == "smooth_parametric" and self.shape not in SMOOTH_PATHS:
            raise SimSpecError(f"smooth_parametric needs shape in {sorted(SMOOTH_PATHS)}")
        object.__setattr__(self, "parameters", params)
        object.__setattr__(self, "n_steps", int(self.n_steps))
        object.__setattr__(self, "seed", int(self.seed))

    @property
    def dt(self) -> float:
        return self.horizon / self.n_steps

    def p(self, name: str, default: float) -> float:
        return float(self.parameters.get(name, default))

    def with_seed(self, seed: int) -> "SimSpec":
        return replace(self, seed=int(seed))

    def to_dict(self) -> dict:
        d = {
            "kind": self.kind,
            "horizon": self.horizon,
            "n_steps": self.n_steps,
            "dim": self.dim,
            "parameters": {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.parameters.items()},
            "seed": self.seed,
        }
        if self.shape is not None:
            d["shape"] = self.shape
        if self.start_time:
            d["start_time"] = self.start_time
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "SimSpec":
        d = dict(d)
        if "kind" not in d:
            raise SimSpecError("simulation spec needs a 'kind'")
        return cls(
            kind=d["kind"],
            horizon=float(d.get("horizon", 1.0)),
            n_steps=d.get("n_steps", 100),
            dim=int(d.get("dim", 1)),
            parameters=dict(d.get("parameters", {})),
            seed=int(d.get("seed", 0)),
            shape=d.get("shape"),
            start_time=float(d.get("start_time", 0.0)),
        )


def derive_seed(seed: int, *keys: int) -> int:
    """A 63-bit seed derived deterministically from ``seed`` and integer keys."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in keys))
    return int(ss.generate_state(1, np.uint64)[0] >> np.uint64(1))


def path_rng(seed: int, index: int, stream: tuple[int, ...] = ()) -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed), spawn_key=(*stream, int(index)))
    return np.random.Generator(np.random.Philox(ss))


def heston_variance_floor(v):
    """Reflecting barrier at zero, simplified to ``max(v, 0)``."""
    return np.maximum(v, 0.0)


def _initial(spec: SimSpec, rng: np.random.Generator, default: float) -> float:
    params = spec.parameters
    if "x0_low" in params:
        return rng.uniform(float(params["x0_low"]), float(params["x0_high"]))
    x0 = spec.p("x0", default)
    if "x0_std" in params:
        return x0 + spec.p("x0_std", 0.0) * rng.standard_normal()
    return x0


def simulate(spec: SimSpec, count: int, offset: int = 0) -> PathBatch:
    """Draw ``count`` paths on the grid ``start_time + i * horizon / n_steps``.

    Path ``j`` of the result uses stream ``offset + j``, so a large batch can
    be produced in chunks without changing any path.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    n, d, dt = spec.n_steps, spec.dim, spec.dt
    kind = spec.kind

    if kind == "smooth_parametric":
        t = np.arange(n + 1) * dt / spec.horizon  # shapes are defined on [0, 1]
        out = np.broadcast_to(SMOOTH_PATHS[spec.shape](t)[None, :, None], (count, n + 1, d))
        return PathBatch(out, dt, spec.start_time)

    width = 2 if kind == "heston" else d
    rows = n + 1 if kind == "uniform_noise" else n
    noise = np.empty((count, rows, width))
    start = np.empty((count, d))
    sigma = np.full(count, spec.p("sigma", 1.0))
    choices = spec.parameters.get("sigma_choices")
    for j in range(count):
        rng = path_rng(spec.seed, offset + j)
        if kind == "uniform_noise":
            noise[j] = rng.uniform(spec.p("low", -1.0), spec.p("high", 1.0), size=(rows, width))
            continue
        if kind != "heston":
            start[j] = [_initial(spec, rng, 0.0 if kind == "brownian" else 1.0) for _ in range(d)]
        if choices is not None:
            sigma[j] = rng.choice(np.asarray(choices))
        noise[j] = rng.standard_normal((rows, width))

    if kind == "uniform_noise":
        return PathBatch(noise, dt, spec.start_time)
    if kind == "brownian":
        steps = spec.p("mu", 0.0) * dt + sigma[:, None, None] * np.sqrt(dt) * noise
        return PathBatch(_cumulate(start, steps), dt, spec.start_time)
    if kind == "gbm":
        r, q = spec.p("r", 0.0), spec.p("q", 0.0)
        s = sigma[:, None, None]
        incr = (r - q - 0.5 * s**2) * dt + s * np.sqrt(dt) * noise
        logp = _cumulate(np.zeros((count, d)), incr)
        return PathBatch(start[:, None, :] * np.exp(logp), dt, spec.start_time)
    return PathBatch(_heston(spec, noise), dt, spec.start_time)


def _cumulate(start: np.ndarray, steps: np.ndarray) -> np.ndarray:
    out = np.empty((steps.shape[0], steps.shape[1] + 1, steps.shape[2]))
    out[:, 0] = start
    np.cumsum(steps, axis=1, out=out[:, 1:])
    out[:, 1:] += start[:, None, :]
    return out


def _heston(spec: SimSpec, noise: np.ndarray) -> np.ndarray:
    count, n, _ = noise.shape
    dt = spec.dt
    r, q = spec.p("r", 0.0), spec.p("q", 0.0)
    kappa, m, xi, rho = spec.p("kappa", 0.0), spec.p("m", 0.0), spec.p("xi", 0.0), spec.p("rho", 0.0)
    z_price = noise[:, :, 0]
    z_var = rho * noise[:, :, 0] + np.sqrt(1.0 - rho * rho) * noise[:, :, 1]
    sq = np.sqrt(dt)
    out = np.empty((count, n + 1, 2))
    x = np.full(count, spec.p("x0", 1.0))
    v = np.full(count, float(heston_variance_floor(spec.p("v0", m))))
    out[:, 0, 0], out[:, 0, 1] = x, v
    for i in range(n):
        vol = np.sqrt(v)
        x = x * np.exp((r - q - 0.5 * v) * dt + vol * sq * z_price[:, i])
        v = heston_variance_floor(v + kappa * (m - v) * dt + xi * vol * sq * z_var[:, i])
        out[:, i + 1, 0], out[:, i + 1, 1] = x, v
    return out


def metadata(spec: SimSpec, count: int) -> dict:
    """Key-value description of a simulated batch, including the RNG."""
    meta = {
        "kind": spec.kind,
        "horizon": spec.horizon,
        "n_steps": spec.n_steps,
        "dim": spec.dim,
        "dt": spec.dt,
        "seed": spec.seed,
        "count": count,
        "rng": RNG_NAME,
        "numpy_version": np.__version__,
    }
    if spec.shape:
        meta["shape"] = spec.shape
    for k, v in sorted(spec.parameters.items()):
        meta[f"param.{k}"] = ",".join(repr(x) for x in v) if isinstance(v, tuple) else repr(float(v))
    return meta


def write_keyvalue(mapping: Mapping, target) -> None:
    with open(target, "w") as fh:
        for k, v in mapping.items():
            fh.write(f"{k} = {v}\n")


def read_keyvalue(source) -> dict:
    out = {}
    with open(source) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            k, _, v = line.partition("=")
            out[k.strip()] = v.strip()
    return out
