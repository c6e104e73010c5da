"""Loss assembly, the training loop and evaluation metrics."""

from __future__ import annotations

import csv
import math
import os
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np

from . import autodiff as ad
from . import nn
from .autodiff import value
from .funcderiv import network_derivs_batch
from .paths import PathBatch, PathState
from .problems import PpdeProblem, build_problem, crossed_mask
from .simulation import RNG_NAME, derive_seed, simulate, write_keyvalue

# seed streams derived from the run seed
STREAM_INIT, STREAM_TRAIN, STREAM_TEST, STREAM_MSE = 0, 1, 2, 3


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss; ``report`` holds the epochs run so far."""

    def __init__(self, message: str, report: "TrainReport | None" = None, params=None):
        super().__init__(message)
        self.report = report
        self.params = params


@dataclass
class TrainConfig:
    problem: str = "path_independent"
    params: dict = field(default_factory=dict)
    sim: dict = field(default_factory=dict)
    epochs: int = 2000
    batch_size: int = 64
    hidden_units: int = 32
    ff_widths: tuple = (32, 64, 32)
    activation: str = "tanh"
    h: float = 1e-2
    scheme: str = "central"
    lr: float = 1e-3
    lr_halving: tuple = ()
    seed: int = 0
    test_size: int = 64
    mse_paths: int = 256
    mse_every: int = 0
    early_stop: float | None = None
    checkpoint_every: int = 0
    checkpoint_path: str | None = None
    backend: str | None = None

    def __post_init__(self):
        self.ff_widths = tuple(int(w) for w in self.ff_widths)
        self.lr_halving = tuple(sorted(int(e) for e in self.lr_halving))
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.batch_size < 1 or self.test_size < 1:
            raise ValueError("batch sizes must be >= 1")
        if not self.h > 0 or not self.lr > 0:
            raise ValueError("h and lr must be positive")
        if self.checkpoint_every and not self.checkpoint_path:
            raise ValueError("checkpoint_every needs checkpoint_path")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["ff_widths"] = list(self.ff_widths)
        d["lr_halving"] = list(self.lr_halving)
        return d

    @classmethod
    def from_dict(cls, d) -> "TrainConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown training options: {sorted(unknown)}")
        return cls(**d)

    def build_problem(self) -> PpdeProblem:
        return build_problem(self.problem, self.params, self.sim)

    def lr_at(self, epoch: int) -> float:
        return self.lr * 0.5 ** sum(1 for e in self.lr_halving if epoch >= e)


@dataclass
class TrainReport:
    epochs: list = field(default_factory=list)
    train_loss: list = field(default_factory=list)
    test_loss: list = field(default_factory=list)
    mse: list = field(default_factory=list)
    final_mse: float = float("nan")
    wall_clock: float = 0.0
    config: dict = field(default_factory=dict)
    rng: str = RNG_NAME
    stopped_early: bool = False
    optimizer: object = field(default=None, repr=False, compare=False)

    def __len__(self):
        return len(self.epochs)

    def same_as(self, other: "TrainReport") -> bool:
        """Equality of everything except wall-clock time (NaN-aware)."""
        def eq(a, b):
            return np.array_equal(np.asarray(a, dtype=float), np.asarray(b, dtype=float), equal_nan=True)

        return (
            self.epochs == other.epochs
            and eq(self.train_loss, other.train_loss)
            and eq(self.test_loss, other.test_loss)
            and eq(self.mse, other.mse)
            and eq(self.final_mse, other.final_mse)
            and self.config == other.config
        )

    def write_csv(self, target) -> None:
        with open(target, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "train_loss", "test_loss", "mse"])
            for row in zip(self.epochs, self.train_loss, self.test_loss, self.mse):
                w.writerow([row[0]] + [_fmt(x) for x in row[1:]])

    def summary(self) -> dict:
        out = {
            "problem": self.config.get("problem", ""),
            "epochs_run": len(self.epochs),
            "last_epoch": self.epochs[-1] if self.epochs else 0,
            "final_train_loss": _fmt(self.train_loss[-1]) if self.train_loss else "",
            "final_test_loss": _fmt(self.test_loss[-1]) if self.test_loss else "",
            "final_mse": _fmt(self.final_mse),
            "stopped_early": self.stopped_early,
            "wall_clock_seconds": f"{self.wall_clock:.3f}",
            "rng": self.rng,
            "seed": self.config.get("seed", ""),
        }
        return out

    def write_summary(self, target) -> None:
        write_keyvalue(self.summary(), target)


def _fmt(x) -> str:
    return "" if x is None or (isinstance(x, float) and math.isnan(x)) else f"{float(x):.17g}"


# -- losses ------------------------------------------------------------------------------

def _pieces(problem: PpdeProblem, params, batch: PathBatch, h: float, scheme: str, backend=None):
    if batch.dim != problem.dim:
        raise ValueError(f"batch dimension {batch.dim} does not match problem dimension {problem.dim}")
    if batch.n_steps != problem.n_steps or not np.isclose(batch.n_steps * batch.dt, problem.horizon):
        raise ValueError("batch grid does not match the problem's horizon and step count")
    cross = (h, h) if problem.cross else None
    bundle = network_derivs_batch(params, batch, h, scheme, cross, backend)
    state = PathState.from_values(batch.values, batch.dt, batch.start_time)
    residual = problem.residual(bundle, state)
    g = problem.terminal(batch.values, batch.dt)
    return bundle, residual, g


def assemble_loss(problem: PpdeProblem, u, u_T, residual, g, values: np.ndarray, n_steps: int):
    """Combine residuals and terminal gaps into the scalar objective.

    ``u`` and ``residual`` are ``(M, n)`` over the interior points used;
    ``u_T`` and ``g`` are ``(M,)``. Works on arrays and Tensors alike.
    For barrier problems the crossed points contribute ``|u|`` instead of
    the squared residual, and crossed paths add ``|u_T|`` at maturity.
    """
    M, N = u_T.shape[0], n_steps
    if problem.barrier is None:
        gap = u_T - g
        return ad.lift(residual * residual).sum() * (1.0 / (M * N)) + ad.lift(gap * gap).sum() * (1.0 / M)
    crossed = crossed_mask(values, problem.barrier)[:, : value(u).shape[1]]
    interior = ad.where(crossed, ad.absolute(u), residual * residual)
    hit = crossed_mask(values, problem.barrier)[:, -1]
    gap = u_T - g * (~hit)
    terminal = gap * gap + ad.absolute(u_T) * hit.astype(np.float64)
    return ad.lift(interior).sum() * (1.0 / (M * N)) + ad.lift(terminal).sum() * (1.0 / M)


def loss(problem: PpdeProblem, params: nn.PdgmParams, batch: PathBatch, h: float = 1e-2,
         scheme: str = "central", backend=None):
    """Mean squared residual over (path, grid point) plus the terminal mismatch.

    The interior sum runs over i = 0..N and is normalised by ``M * N``.
    """
    if problem.barrier is not None:
        raise ValueError("use barrier_loss for knock-out problems")
    bundle, residual, g = _pieces(problem, params, batch, h, scheme, backend)
    return assemble_loss(problem, bundle.u, bundle.u[:, -1], residual, g, batch.values, batch.n_steps)


def barrier_loss(problem: PpdeProblem, params: nn.PdgmParams, batch: PathBatch, h: float = 1e-2,
                 scheme: str = "central", backend=None):
    """Loss for knock-out problems: ``|u|`` once a path has crossed, the
    squared residual before; the terminal term adds ``|u_T|`` on crossed paths."""
    if problem.barrier is None:
        raise ValueError(f"problem {problem.name!r} has no barrier")
    bundle, residual, g = _pieces(problem, params, batch, h, scheme, backend)
    return assemble_loss(problem, bundle.u, bundle.u[:, -1], residual, g, batch.values, batch.n_steps)


def closed_form_loss(problem: PpdeProblem, batch: PathBatch, h: float = 1e-3, delta_t: float | None = None,
                     scheme: str = "central") -> float:
    """The objective with the exact solution in place of the network.

    Closed forms are not defined beyond T, so the interior sum stops at
    i = N - 1 (normalisation stays ``M * N``).
    """
    from .funcderiv import state_derivs

    delta_t = batch.dt if delta_t is None else delta_t
    if delta_t > batch.dt * (1 + 1e-12):
        raise ValueError("delta_t may not exceed the grid step (the extension would pass T)")
    state = PathState.from_values(batch.values, batch.dt, batch.start_time)
    inner = PathState(state.t[:, :-1], state.y[:, :-1], state.integral[:, :-1],
                      state.log_integral[:, :-1], state.min_before[:, :-1])
    cross = (h, h) if problem.cross else None
    bundle = state_derivs(problem.solution, inner, h, delta_t, scheme, cross)
    residual = problem.residual(bundle, inner)
    g = problem.terminal(batch.values, batch.dt)
    u_T = problem.solution(PathState(state.t[:, -1], state.y[:, -1], state.integral[:, -1],
                                     state.log_integral[:, -1], state.min_before[:, -1]))
    return float(value(assemble_loss(problem, bundle.u, u_T, residual, g, batch.values, batch.n_steps)))


def problem_loss(problem: PpdeProblem, params, batch, h=1e-2, scheme="central", backend=None):
    fn = barrier_loss if problem.barrier is not None else loss
    return fn(problem, params, batch, h, scheme, backend)


def evaluate_mse(params: nn.PdgmParams, problem: PpdeProblem, batch: PathBatch, backend=None) -> float:
    """Mean over paths and grid points of the squared gap to the closed form."""
    if not problem.has_closed_form:
        raise ValueError(f"problem {problem.name!r} has no closed form")
    u = nn.pdgm_forward(params, batch, backend)[0]
    truth = problem.solution(PathState.from_values(batch.values, batch.dt, batch.start_time))
    return float(np.mean((value(u) - truth) ** 2))


# -- training ---------------------------------------------------------------------------------

def initial_params(config: TrainConfig, problem: PpdeProblem) -> nn.PdgmParams:
    return nn.init_params(problem.dim, config.hidden_units, config.ff_widths,
                          derive_seed(config.seed, STREAM_INIT), config.activation)


def held_out_batches(config: TrainConfig, problem: PpdeProblem):
    spec = problem.sim_spec
    test = simulate(spec.with_seed(derive_seed(config.seed, STREAM_TEST)), config.test_size)
    mse = simulate(spec.with_seed(derive_seed(config.seed, STREAM_MSE)), config.mse_paths)
    return test, mse


def training_batch(config: TrainConfig, problem: PpdeProblem, epoch: int) -> PathBatch:
    return simulate(problem.sim_spec.with_seed(derive_seed(config.seed, STREAM_TRAIN, epoch)), config.batch_size)


def _save_atomic(payload: bytes, target) -> None:
    target = Path(target)
    target.parent.mkdir(parents=True, exist_ok=True)
    tmp = target.with_name(target.name + ".tmp")
    tmp.write_bytes(payload)
    os.replace(tmp, target)


def checkpoint_bytes(params, opt, config: TrainConfig, epoch: int) -> bytes:
    return nn.save_params(params, opt, {"epoch": epoch, "config": config.to_dict(), "rng": RNG_NAME})


def train(
    config: TrainConfig,
    resume: tuple[nn.PdgmParams, nn.AdamState | None, int] | None = None,
    callback: Callable[[int, float, float], None] | None = None,
) -> tuple[nn.PdgmParams, TrainReport]:
    """Run ``config.epochs`` epochs of Adam on fresh mini-batches.

    ``resume=(params, optimizer, last_epoch)`` continues a previous run; the
    epoch numbering (and hence the batch seeds) carries on from
    ``last_epoch``, so an interrupted run resumes bit-identically.
    """
    problem = config.build_problem()
    test_batch, mse_batch = held_out_batches(config, problem)
    if resume is None:
        params, opt, start = initial_params(config, problem), None, 0
    else:
        params, opt, start = resume
        if params.input_dim != problem.dim:
            raise ValueError("checkpoint input dimension does not match the problem")
    if opt is None:
        opt = nn.AdamState.fresh(params, config.lr)
    report = TrainReport(config=config.to_dict())
    clock = time.perf_counter()
    h, scheme, be = config.h, config.scheme, config.backend

    for epoch in range(start + 1, start + config.epochs + 1):
        batch = training_batch(config, problem, epoch)
        with np.errstate(invalid="ignore", over="ignore"):  # non-finite values are caught just below
            train_value, grads = nn.value_and_grad(
                params, lambda p: problem_loss(problem, p, batch, h, scheme, be)
            )
        if not np.isfinite(train_value) or not all(np.all(np.isfinite(g)) for g in grads.arrays()):
            report.wall_clock = time.perf_counter() - clock
            raise DivergenceError(
                f"non-finite loss or gradient at epoch {epoch} (last finite train loss: "
                f"{report.train_loss[-1] if report.train_loss else 'none'})",
                report, params,
            )
        opt = replace(opt, lr=config.lr_at(epoch))
        params, opt = nn.adam_update(params, grads, opt)
        test_value = float(value(problem_loss(problem, params, test_batch, h, scheme, be)))
        mse = float("nan")
        if problem.has_closed_form and config.mse_every and epoch % config.mse_every == 0:
            mse = evaluate_mse(params, problem, mse_batch, be)
        report.epochs.append(epoch)
        report.train_loss.append(train_value)
        report.test_loss.append(test_value)
        report.mse.append(mse)
        if callback is not None:
            callback(epoch, train_value, test_value)
        if config.checkpoint_every and epoch % config.checkpoint_every == 0:
            _save_atomic(checkpoint_bytes(params, opt, config, epoch), config.checkpoint_path)
        if config.early_stop is not None and train_value < config.early_stop:
            report.stopped_early = True
            break

    if problem.has_closed_form:
        report.final_mse = evaluate_mse(params, problem, mse_batch, be)
    report.wall_clock = time.perf_counter() - clock
    report.optimizer = opt
    return params, report
