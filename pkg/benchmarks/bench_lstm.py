"""Compare the compiled LSTM core with the numpy fallback.

    python benchmarks/bench_lstm.py [--repeat 5]

Times the forward and backward recurrences at training shapes, then one
full training epoch with each backend.
"""

import argparse
import timeit

import numpy as np

from pdgm import kernels, nn
from pdgm.trainer import TrainConfig, problem_loss, training_batch


def recurrences(backend, B, T, k, repeat):
    rng = np.random.default_rng(0)
    xw = rng.standard_normal((B, T, 4 * k))
    wh = rng.standard_normal((k, 4 * k)) / np.sqrt(k)
    _, c, gates = kernels.lstm_forward(xw, wh, backend)
    d_a, d_c = rng.standard_normal((B, T, k)), rng.standard_normal((B, T, k))
    fwd = min(timeit.repeat(lambda: kernels.lstm_forward(xw, wh, backend), number=5, repeat=repeat)) / 5
    bwd = min(timeit.repeat(lambda: kernels.lstm_backward(wh, c, gates, d_a, d_c, backend),
                            number=5, repeat=repeat)) / 5
    return fwd, bwd


def epoch(backend, repeat):
    cfg = TrainConfig(backend=backend)
    problem = cfg.build_problem()
    params = nn.init_params(1, cfg.hidden_units, cfg.ff_widths, seed=0)
    batch = training_batch(cfg, problem, 1)
    step = lambda: nn.value_and_grad(params, lambda p: problem_loss(problem, p, batch, backend=backend))  # noqa: E731
    return min(timeit.repeat(step, number=1, repeat=repeat))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    backends = sorted(kernels.BACKENDS)
    print(f"backends available: {', '.join(backends)} (default {kernels.BACKEND})")
    print(f"{'shape (B, T, k)':<18}{'backend':<9}{'forward ms':>12}{'backward ms':>13}")
    for shape in [(64, 101, 32), (64, 101, 64), (256, 101, 32)]:
        for be in backends:
            f, b = recurrences(be, *shape, args.repeat)
            print(f"{str(shape):<18}{be:<9}{1e3 * f:>12.2f}{1e3 * b:>13.2f}")
    print("\nloss + gradient, one epoch (M=64, N=100, k=32, ff 32x64x32):")
    for be in backends:
        print(f"  {be:<8}{epoch(be, args.repeat):.3f} s")


if __name__ == "__main__":
    main()
