"""Command-line front end: ``pdgm simulate | train | evaluate | price``.

Exit codes: 0 success, 1 user or configuration error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np
import yaml

from . import montecarlo as mc
from . import nn
from .funcderiv import network_derivs_batch
from .paths import DiscretePath, PathBatch, PathState, read_batch_csv, write_batch_csv
from .problems import PROBLEMS, build_problem
from .simulation import SimSpec, SimSpecError, metadata, simulate, write_keyvalue
from .trainer import DivergenceError, TrainConfig, checkpoint_bytes, evaluate_mse, held_out_batches, train

ENV_OUT = "PDGM_OUT"
DEFAULT_OUT = "pdgm_out"
SECTIONS = ("simulate", "train", "evaluate", "price")
TOP_KEYS = {"out", "seed", "problem", "params", "sim"} | set(SECTIONS)


class UserError(Exception):
    """Bad input from the operator (exit code 1)."""


# -- configuration -------------------------------------------------------------------------

def parse_config(text: str) -> dict:
    """Parse and normalise an experiment file (YAML)."""
    try:
        raw = yaml.safe_load(text) or {}
    except yaml.YAMLError as exc:
        raise UserError(f"config is not valid YAML: {exc}") from None
    if not isinstance(raw, dict):
        raise UserError("config must be a mapping")
    unknown = set(raw) - TOP_KEYS
    if unknown:
        raise UserError(f"unknown config keys: {sorted(unknown)}")
    cfg = {k: raw[k] for k in raw if raw[k] is not None}
    for key in ("params", "sim") + SECTIONS:
        if key in cfg and not isinstance(cfg[key], dict):
            raise UserError(f"config section {key!r} must be a mapping")
    if "problem" in cfg and cfg["problem"] not in PROBLEMS:
        raise UserError(f"unknown problem {cfg['problem']!r}; choose from {', '.join(PROBLEMS)}")
    if "seed" in cfg:
        cfg["seed"] = int(cfg["seed"])
    return cfg


def emit_config(cfg: dict) -> str:
    return yaml.safe_dump(cfg, sort_keys=True, default_flow_style=False)


def load_config(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        return parse_config(Path(path).read_text())
    except OSError as exc:
        raise UserError(f"cannot read config {path}: {exc}") from None


def output_dir(args, cfg) -> Path:
    out = args.out or cfg.get("out") or os.environ.get(ENV_OUT) or DEFAULT_OUT
    return Path(out)


def _seed(args, cfg) -> int:
    return int(args.seed if args.seed is not None else cfg.get("seed", 0))


def _problem(args, cfg, **overrides):
    name = getattr(args, "problem", None) or cfg.get("problem")
    if not name:
        raise UserError("no problem given (config 'problem' or --problem)")
    params = dict(cfg.get("params", {}))
    params.update(overrides)
    return build_problem(name, params, cfg.get("sim"))


# -- commands -------------------------------------------------------------------------------------

def cmd_simulate(args, cfg) -> int:
    section = dict(cfg.get("simulate", {}))
    count = int(args.count if args.count is not None else section.pop("count", 8))
    section.pop("count", None)
    if not section and (getattr(args, "problem", None) or cfg.get("problem")):
        spec = _problem(args, cfg).sim_spec
    else:
        spec = SimSpec.from_dict(section or {"kind": "brownian"})
    spec = spec.with_seed(_seed(args, cfg))
    batch = simulate(spec, count)  # validated before anything is written
    out = output_dir(args, cfg) / "paths"
    write_batch_csv(batch, out)
    write_keyvalue(metadata(spec, count), out / "metadata.txt")
    print(f"wrote {count} paths to {out}")
    return 0


def _train_config(args, cfg) -> TrainConfig:
    section = dict(cfg.get("train", {}))
    for key in ("checkpoint_path", "seed", "problem", "params", "sim"):
        if key in section:
            raise UserError(f"'{key}' belongs at the top level of the config, not under 'train'")
    if getattr(args, "epochs", None) is not None:
        section["epochs"] = args.epochs
    name = getattr(args, "problem", None) or cfg.get("problem")
    if not name:
        raise UserError("no problem given (config 'problem' or --problem)")
    out = output_dir(args, cfg)
    try:
        return TrainConfig.from_dict(dict(
            section, problem=name, params=dict(cfg.get("params", {})), sim=dict(cfg.get("sim", {})),
            seed=_seed(args, cfg), checkpoint_path=str(out / "checkpoint.pdgm"),
        ))
    except TypeError as exc:
        raise UserError(f"bad train section: {exc}") from None


def cmd_train(args, cfg) -> int:
    config = _train_config(args, cfg)
    config.build_problem()  # fail early on bad problem parameters
    out = output_dir(args, cfg)
    out.mkdir(parents=True, exist_ok=True)
    resume = None
    if args.resume:
        params, opt, meta = nn.load_checkpoint(Path(args.resume).read_bytes())
        resume = (params, opt, int(meta.get("epoch", 0)))
    try:
        params, report = train(config, resume)
    except DivergenceError as exc:
        if exc.report is not None:
            exc.report.write_csv(out / "report.csv")
            exc.report.write_summary(out / "summary.txt")
        print(f"error: {exc}", file=sys.stderr)
        return 2
    report.write_csv(out / "report.csv")
    report.write_summary(out / "summary.txt")
    last = report.epochs[-1] if report.epochs else (resume[2] if resume else 0)
    (out / "checkpoint.pdgm").write_bytes(checkpoint_bytes(params, report.optimizer, config, last))
    print(f"trained {len(report)} epochs; report in {out}")
    return 0


def _evaluation_batch(args, cfg, problem, seed) -> PathBatch:
    section = cfg.get("evaluate", {})
    if args.held_out:
        return held_out_batches(_train_config(args, cfg), problem)[1]
    source = args.paths or section.get("paths")
    if source:
        return read_batch_csv(source)
    gen = section.get("generator")
    count = int(args.count if args.count is not None else section.get("count", 8))
    spec = SimSpec.from_dict(gen) if gen else problem.sim_spec
    return simulate(spec.with_seed(seed), count)


def cmd_evaluate(args, cfg) -> int:
    ckpt = args.checkpoint or cfg.get("evaluate", {}).get("checkpoint")
    if not ckpt:
        raise UserError("evaluate needs --checkpoint")
    params = nn.load_params(Path(ckpt).read_bytes())
    problem = _problem(args, cfg)
    batch = _evaluation_batch(args, cfg, problem, _seed(args, cfg))
    if batch.dim != params.input_dim:
        raise UserError(f"paths have dimension {batch.dim}, checkpoint expects {params.input_dim}")
    h = float(cfg.get("train", {}).get("h", 1e-2))
    bundle = network_derivs_batch(params, batch, h)
    u_pred = nn.pdgm_forward(params, batch)[0]
    truth = None
    if problem.has_closed_form:
        try:
            truth = problem.solution(PathState.from_values(batch.values, batch.dt, batch.start_time))
        except ValueError:
            truth = None  # e.g. paths outside the closed form's domain
    out = output_dir(args, cfg) / "eval"
    out.mkdir(parents=True, exist_ok=True)
    width = max(5, len(str(batch.size - 1)))
    d = batch.dim
    header = ["t"] + [f"y{j}" for j in range(d)] + ["u_pred", "u_true", "d_t"] + \
        [f"d_x{j}" for j in range(d)] + [f"d_xx{j}" for j in range(d)]
    for j in range(batch.size):
        cols = [batch.times[:, None], batch.values[j], u_pred[j][:, None],
                (truth[j] if truth is not None else np.full(batch.n_steps + 1, np.nan))[:, None],
                bundle.du_dt[j][:, None], bundle.du_dx[j], bundle.d2u_dx2[j]]
        table = np.hstack(cols)
        np.savetxt(out / f"path_{j:0{width}d}.csv", table, delimiter=",", header=",".join(header),
                   comments="", fmt="%.17g")
    summary = {"paths": batch.size, "checkpoint": str(ckpt)}
    if truth is not None:
        summary["mse"] = f"{evaluate_mse(params, problem, batch):.17g}"
    write_keyvalue(summary, out / "summary.txt")
    print(f"wrote {batch.size} evaluation files to {out}")
    return 0


def _discount(problem):
    return problem.params.get("r") if problem.sim_spec.kind in ("gbm", "heston") else None


def _start_path(problem) -> DiscretePath:
    spec = problem.sim_spec
    if spec.kind == "heston":
        row = [spec.p("x0", 1.0), spec.p("v0", spec.p("m", 1.0))]
    else:
        row = [spec.p("x0", 0.0 if spec.kind == "brownian" else 1.0)] * spec.dim
    return DiscretePath(0.0, spec.dt, np.array([row]))


def _price(problem, n_sims, seed) -> mc.MCEstimate:
    if problem.name == "nonlinear":
        raise UserError("the nonlinear example has no linear expectation representation to price")
    return mc.conditioned_expectation(_start_path(problem), problem.sim_spec, problem.terminal,
                                      n_sims, seed, _discount(problem))


def cmd_price(args, cfg) -> int:
    section = dict(cfg.get("price", {}))
    n_sims = int(args.n_sims if args.n_sims is not None else section.get("n_sims", 10000))
    seed = _seed(args, cfg)
    problem = _problem(args, cfg)
    out = output_dir(args, cfg)
    est = _price(problem, n_sims, seed)
    strikes = args.strikes if args.strikes is not None else section.get("strikes")
    maturities = args.maturities if args.maturities is not None else section.get("maturities")
    if (strikes or maturities) and "K" not in problem.params:
        raise UserError(f"problem {problem.name!r} has no strike to sweep")
    out.mkdir(parents=True, exist_ok=True)
    write_keyvalue(dict(est.to_dict(), problem=problem.name), out / "price.txt")
    dt = problem.horizon / problem.n_steps
    if strikes:
        rows = [(k, _price(_problem(args, cfg, K=float(k)), n_sims, seed)) for k in strikes]
        _write_sweep(out / "price_vs_strike.csv", "K", rows)
    if maturities:
        rows = []
        for T in maturities:
            steps = max(1, int(round(float(T) / dt)))
            rows.append((T, _price(_problem(args, cfg, T=steps * dt, N=steps), n_sims, seed)))
        _write_sweep(out / "price_vs_maturity.csv", "T", rows)
    print(f"{problem.name}: {est.mean:.6g} +/- {est.stderr:.2g} ({n_sims} sims)")
    return 0


def _write_sweep(target, label, rows):
    with open(target, "w") as fh:
        fh.write(f"{label},mean,stderr\n")
        for x, est in rows:
            fh.write(f"{float(x):.17g},{est.mean:.17g},{est.stderr:.17g}\n")


# -- entry point ----------------------------------------------------------------------------------

def _number_list(text: str) -> list[float]:
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML experiment file")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--out", help=f"output directory (default: config 'out', ${ENV_OUT}, ./{DEFAULT_OUT})")
    common.add_argument("--threads", type=int, help="limit BLAS threads")
    common.add_argument("--problem", help="problem name, overrides the config")

    parser = argparse.ArgumentParser(prog="pdgm", description=__doc__.splitlines()[0], parents=[common])
    sub = parser.add_subparsers(dest="command", required=True)
    # subcommands accept the global flags too, without clobbering values given before them
    sub_common = argparse.ArgumentParser(add_help=False)
    for action in common._actions:
        sub_common.add_argument(*action.option_strings, type=action.type, help=action.help,
                                default=argparse.SUPPRESS)

    p = sub.add_parser("simulate", parents=[sub_common], help="write simulated paths as CSV")
    p.add_argument("--count", type=int)
    p = sub.add_parser("train", parents=[sub_common], help="train a PDGM network")
    p.add_argument("--epochs", type=int)
    p.add_argument("--resume", help="checkpoint to continue from")
    p = sub.add_parser("evaluate", parents=[sub_common], help="per-step predictions and derivatives")
    p.add_argument("--checkpoint")
    p.add_argument("--paths", help="directory of path CSVs or a single CSV")
    p.add_argument("--count", type=int)
    p.add_argument("--held-out", action="store_true", dest="held_out",
                   help="use the trainer's MSE batch for this config and seed")
    p = sub.add_parser("price", parents=[sub_common], help="Monte Carlo price at t = 0")
    p.add_argument("--n-sims", type=int, dest="n_sims")
    p.add_argument("--strikes", type=_number_list)
    p.add_argument("--maturities", type=_number_list)
    return parser


COMMANDS = {"simulate": cmd_simulate, "train": cmd_train, "evaluate": cmd_evaluate, "price": cmd_price}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.threads is not None:
            if args.threads < 1:
                raise UserError("--threads must be >= 1")
            from threadpoolctl import threadpool_limits

            with threadpool_limits(args.threads):
                return COMMANDS[args.command](args, cfg)
        return COMMANDS[args.command](args, cfg)
    except (UserError, SimSpecError, nn.CheckpointError, KeyError, ValueError, OSError) as exc:
        msg = exc.args[0] if isinstance(exc, KeyError) and exc.args else exc
        print(f"error: {msg}", file=sys.stderr)
        return 1
    except (DivergenceError, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
