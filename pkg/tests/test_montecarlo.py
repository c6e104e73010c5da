import numpy as np
import pytest

from pdgm import montecarlo as mc
from pdgm.paths import DiscretePath, GridMismatchError, concatenate
from pdgm.problems import DEFAULTS, PAYOFFS, build_problem, cf_linear, closed_form
from pdgm.paths import PathState
from pdgm.simulation import SimSpec, simulate

BROWNIAN = SimSpec("brownian", 1.0, 100)


def last(values, dt):
    return values[:, -1, 0]


def square(values, dt):
    return values[:, -1, 0] ** 2


def prefix_at(y_end, steps=30, seed=0):
    p = simulate(SimSpec("brownian", steps * 0.01, steps, seed=seed), 1)[0]
    return DiscretePath(0.0, 0.01, p.values - p.values[-1] + y_end)


def test_martingale():
    est = mc.conditioned_expectation(prefix_at(0.7), BROWNIAN, last, 20_000, seed=1)
    assert est.within(0.7)


def test_heat_solution():
    est = mc.conditioned_expectation(prefix_at(-0.4), BROWNIAN, square, 20_000, seed=2)
    assert est.within(0.16 + 0.7)


def test_unbiased_over_repetitions():
    pre = prefix_at(0.3, 50)
    hits = sum(mc.conditioned_expectation(pre, BROWNIAN, square, 2_000, seed=s).within(0.09 + 0.5)
               for s in range(50))
    assert hits >= 47


def test_clt_scaling():
    pre = prefix_at(0.1)
    a = mc.conditioned_expectation(pre, BROWNIAN, square, 20_000, seed=3)
    b = mc.conditioned_expectation(pre, BROWNIAN, square, 40_000, seed=3)
    assert a.stderr / b.stderr == pytest.approx(np.sqrt(2), rel=0.1)


def test_determinism_and_chunking():
    pre = prefix_at(0.2)
    a = mc.conditioned_expectation(pre, BROWNIAN, square, 5_000, seed=9)
    b = mc.conditioned_expectation(pre, BROWNIAN, square, 5_000, seed=9, chunk=777)
    assert a == b


def test_paths_are_concatenations():
    pre = prefix_at(0.5)
    seen = []
    mc.conditioned_expectation(pre, BROWNIAN, lambda v, dt: seen.append(v.copy()) or v[:, -1, 0], 4, seed=5)
    cont = simulate(mc.continuation_spec(pre, BROWNIAN).with_seed(5), 4)
    for j in range(4):
        ref = concatenate(pre, cont[j])
        assert np.array_equal(seen[0][j], ref.values)


def test_final_step_is_exact():
    path = simulate(BROWNIAN.with_seed(1), 1)[0]
    means, errs = mc.pathwise_solution(path, BROWNIAN, square, 10, seed=0)
    assert means[-1] == path.values[-1, 0] ** 2 and errs[-1] == 0.0


def test_pathwise_linear_running_integral():
    spec = SimSpec("brownian", 1.0, 20)
    path = simulate(spec.with_seed(3), 1)[0]
    pay = lambda v, dt: PAYOFFS["linear_running_integral"](v, dt, {})  # noqa: E731
    means, errs = mc.pathwise_solution(path, spec, pay, 4_000, seed=1)
    truth = cf_linear(PathState.from_values(path.values[None], path.dt), DEFAULTS["linear_running_integral"])[0]
    assert np.all(np.abs(means - truth) <= 3 * errs + 1e-12)


def test_deterministic_dynamics():
    spec = SimSpec("brownian", 1.0, 10, parameters={"sigma": 0.0})
    path = DiscretePath(0.0, 0.1, [0.0, 0.5, 1.0])
    est = mc.conditioned_expectation(path, spec, square, 8)
    assert est.mean == 1.0 and est.stderr == 0.0


def test_discounting():
    spec = SimSpec("gbm", 1.0, 10, parameters={"sigma": 0.0, "r": 0.05})
    path = DiscretePath(0.0, 0.1, [1.0, 1.0])
    flat = mc.conditioned_expectation(path, spec, lambda v, dt: np.ones(len(v)), 4, discount=0.05)
    assert flat.mean == pytest.approx(np.exp(-0.05 * 0.9))
    rate = mc.conditioned_expectation(path, spec, lambda v, dt: np.ones(len(v)), 4,
                                      discount=lambda v, dt: np.full(v.shape[:2], 0.05))
    assert rate.mean == pytest.approx(flat.mean, rel=1e-12)


def test_grid_errors():
    with pytest.raises(GridMismatchError):
        mc.conditioned_expectation(DiscretePath(0.0, 0.02, [0.0, 1.0]), BROWNIAN, square, 10)
    with pytest.raises(GridMismatchError):
        mc.conditioned_expectation(DiscretePath(0.0, 0.01, np.zeros(150)), BROWNIAN, square, 10)
    with pytest.raises(ValueError):
        mc.conditioned_expectation(prefix_at(0.0), BROWNIAN, square, 1)


def test_heston_continuation_starts_at_prefix():
    spec = build_problem("heston").sim_spec
    pre = simulate(SimSpec("heston", 0.2, 20, 2, spec.parameters, seed=1), 1)[0]
    cont = mc.continuation_spec(pre, spec)
    assert cont.n_steps == 80 and cont.parameters["v0"] == pre.values[-1, 1]
    assert np.array_equal(simulate(cont, 1).values[0, 0], pre.values[-1])


def test_hitting_time_mean_near_grid_value():
    pay = lambda v, dt: PAYOFFS["hitting_time"](v, dt, {})  # noqa: E731
    starts = np.random.default_rng(0).standard_normal(6)
    means = [mc.conditioned_expectation(DiscretePath(0.0, 0.01, [y]), BROWNIAN, pay, 5_000, seed=i).mean
             for i, y in enumerate(starts)]
    assert 0.5 < np.mean(means) < 0.58
    assert closed_form("hitting_time", DiscretePath(0.0, 0.01, [0.0]), 0) == 0.5


def test_exotic_engine_checks():
    prm = dict(DEFAULTS["asian"])
    a = mc.gbm_exotic_price("asian", prm, 2_000, seed=1)
    b = mc.gbm_exotic_price("asian", prm, 2_000, seed=1)
    assert a == b and a.n_sims == 2_000
    with pytest.raises(ValueError):
        mc.gbm_exotic_price("digital", prm, 10)
    with pytest.raises(ValueError):
        mc.gbm_exotic_price("asian", prm, 10, monitoring="weekly")
    assert mc.bgk_barrier_shift(0.6, 1.0, 0.01) == pytest.approx(0.6 * np.exp(-0.05826))
    assert a.to_dict()["n_sims"] == 2_000
