import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from paramstudy.autotune import (
    ParallelRankOrder,
    TuneConfig,
    TunerStopped,
    crossover,
    ga_step,
    line_point,
    make_tuner,
    nm_step,
    shrink_toward,
    tune,
)
from paramstudy.errors import ConfigError
from paramstudy.space import ParameterAxis, ParameterSpace, levels_to_unit

VARIANTS = ["nelder-mead", "pro", "ga"]


def grid(*levels):
    return ParameterSpace(ParameterAxis(f"x{i}", "integer-grid", 0, n - 1, 1) for i, n in enumerate(levels))


class TestLineMoves:
    def test_reflection_clamps(self):
        assert 0.0 + 2 * (1.0 - 0.0) == 2.0
        assert line_point(0.0, 1.0, 2) == 1.0

    def test_contraction(self):
        assert line_point(0.0, 1.0, 0.5) == 0.5

    @pytest.mark.parametrize("alpha", [0.5, 2, 3])
    def test_fixed_point(self, alpha):
        assert line_point(0.3, 0.3, alpha) == 0.3

    def test_nm_step_snaps_and_clamps(self):
        sp = grid(11)
        assert nm_step(sp, np.array([0]), np.array([1.0]), 2).tolist() == [10]
        assert nm_step(sp, np.array([0]), np.array([1.0]), 0.5).tolist() == [5]
        assert nm_step(sp, np.array([2]), np.array([0.47]), 2).tolist() == [7]

    def test_shrink_rounds_toward_best(self):
        assert shrink_toward(np.array([10]), np.array([4])).tolist() == [7]
        assert shrink_toward(np.array([10]), np.array([5])).tolist() == [8]
        assert shrink_toward(np.array([3]), np.array([4])).tolist() == [3]


class TestPRO:
    def test_reflect_clamp_then_shrink(self):
        tuner = ParallelRankOrder(grid(11), TuneConfig(variant="pro", K=2))
        loop = tuner._simplex_loop([np.array([10]), np.array([4])], [0.0, 1.0])
        R = next(loop)
        assert [v.tolist() for v in R] == [[10]]
        S = loop.send([0.0])
        assert [v.tolist() for v in S] == [[7]]

    def test_collapsed_simplex_converges(self):
        tuner = ParallelRankOrder(grid(11), TuneConfig(variant="pro", K=2))
        loop = tuner._simplex_loop([np.array([3]), np.array([3])], [0.0, 0.0])
        with pytest.raises(StopIteration) as info:
            next(loop)
        assert info.value.value[0].tolist() == [3]

    def test_concave_1d(self):
        sp = grid(101)
        res = tune(sp, lambda p: -(p[0] / 100 - 0.6) ** 2, TuneConfig(variant="pro", K=3, budget=100))
        assert res.best.levels == (60,)
        assert res.evaluations <= 100

    def test_batch_bound(self):
        sp = grid(9, 9, 9, 9)
        tuner = make_tuner(sp, TuneConfig(variant="pro", K=5))
        for _ in range(20):
            try:
                batch = tuner.propose()
            except TunerStopped:
                break
            assert len(batch) <= 4
            tuner.tell([float(np.sum(p.levels)) for p in batch])

    def test_k_too_small(self):
        with pytest.raises(ConfigError):
            make_tuner(grid(5, 5), TuneConfig(variant="pro", K=2)).propose()


def test_nm_proposes_one_point():
    sp = grid(15, 15, 15)
    tuner = make_tuner(sp, TuneConfig(variant="nm"))
    for _ in range(40):
        try:
            batch = tuner.propose()
        except TunerStopped:
            break
        assert len(batch) == 1
        tuner.tell([float((np.array(batch[0].levels) - 3) @ (np.array(batch[0].levels) - 3))])


class TestGA:
    def test_crossover_example(self):
        a, b = crossover((1, 2, 3, 4), (5, 6, 7, 8), 2)
        assert a.tolist() == [1, 2, 3, 8] and b.tolist() == [5, 6, 7, 4]

    def test_identity_generation(self):
        sp = grid(10, 10, 10, 10)
        pop = np.random.default_rng(0).integers(0, 10, size=(10, 4))
        out = ga_step(sp, pop, np.arange(10.0), 1, selection_fraction=0, mutation_rate=0, cut=3)
        assert np.array_equal(out, pop)

    def test_selection_duplicates_best_over_worst(self):
        sp = grid(10, 10)
        pop = np.array([[i, i] for i in range(10)])
        fit = np.arange(10.0)  # individual 9 best, 0 worst
        out = ga_step(sp, pop, fit, 1, selection_fraction=0.2, mutation_rate=0, cut=1)
        assert out[0].tolist() == [9, 9] and out[1].tolist() == [8, 8]

    def test_population_size_constant_and_on_grid(self):
        sp = grid(3, 7, 11)
        pop = np.zeros((10, 3), dtype=int)
        for seed in range(20):
            pop = ga_step(sp, pop, np.random.default_rng(seed).random(10), seed, mutation_rate=0.5)
            assert pop.shape == (10, 3)
            assert np.all((pop >= 0) & (pop < sp.level_counts))

    def test_tiny_population_warns(self):
        with pytest.warns(UserWarning):
            ga_step(grid(5), np.array([[1]]), [1.0], 0)

    def test_default_budget_shape(self):
        sp = grid(50, 50, 50)
        calls = []
        res = tune(sp, lambda p: calls.append(p) or 0.0, TuneConfig(variant="ga", seed=3))
        assert len(calls) == res.evaluations <= 100
        assert res.iterations == 10


def sphere(center):
    c = np.asarray(center)
    return lambda p: -float(np.sum((np.asarray(p.levels) - c) ** 2))


class TestTune:
    @pytest.mark.parametrize("variant", VARIANTS)
    def test_deterministic(self, variant):
        sp = grid(20, 20, 20)
        cfg = TuneConfig(variant=variant, seed=4, budget=60)
        a = tune(sp, sphere([3, 14, 9]), cfg)
        b = tune(sp, sphere([3, 14, 9]), TuneConfig(variant=variant, seed=4, budget=60))
        assert a.trace_csv() == b.trace_csv()

    @pytest.mark.parametrize("variant", VARIANTS)
    def test_budget_memo_monotone_grid(self, variant):
        sp = grid(6, 40, 9)
        calls = []

        def f(p):
            calls.append(p.levels)
            if p.levels[0] == 2:
                raise RuntimeError("boom")
            return sphere([4, 30, 1])(p)

        res = tune(sp, f, TuneConfig(variant=variant, seed=1, budget=25))
        assert len(calls) <= 25 and len(calls) == len(set(calls)) == res.evaluations
        best = -np.inf
        for row in res.trace:
            assert all(0 <= i < n for i, n in zip(row.levels, sp.level_counts))
            best = max(best, row.value)
        assert res.best_value == best
        running = np.maximum.accumulate([r.value for r in res.trace])
        assert np.all(np.diff(running) >= 0)
        failed = [r for r in res.trace if r.failed]
        assert all(r.levels[0] == 2 for r in failed)
        if failed:
            assert res.flags

    def test_threshold_at_first_batch(self):
        sp = grid(10, 10)
        calls = []
        res = tune(sp, lambda p: calls.append(1) or 1.0, TuneConfig(variant="pro", threshold=0.5))
        assert res.stop_reason == "threshold"
        assert res.iterations == 1
        assert len(calls) == len(res.trace) <= 2

    def test_minimize(self):
        sp = grid(30)
        res = tune(sp, lambda p: (p[0] - 7) ** 2, TuneConfig(direction="minimize", budget=50))
        assert res.best.levels == (7,) and res.best_value == 0

    def test_batch_objective(self):
        sp = grid(30, 30)
        sizes = []

        def batch(points):
            sizes.append(len(points))
            return [sphere([10, 20])(p) for p in points]

        res = tune(sp, None, TuneConfig(variant="pro", K=5, budget=80), batch_objective=batch)
        assert max(sizes) <= 4 and sum(sizes) == res.evaluations

    def test_fraction_visited(self):
        sp = grid(1000, 1000, 100)
        res = tune(sp, sphere([1, 2, 3]), TuneConfig(variant="ga"))
        assert res.fraction_visited == res.evaluations / 10**8

    def test_trace_header(self):
        res = tune(grid(5), lambda p: 0.0, TuneConfig(budget=3))
        assert res.trace_csv().splitlines()[0] == "iteration,paramset,metric"


@st.composite
def concave_problems(draw):
    k = draw(st.integers(1, 3))
    levels = [draw(st.integers(2, 25)) for _ in range(k)]
    center = [draw(st.floats(-3, n + 2)) for n in levels]
    weights = [draw(st.floats(0.2, 5)) for _ in range(k)]
    return levels, center, weights


@settings(max_examples=40, deadline=None)
@given(concave_problems(), st.sampled_from(["nelder-mead", "pro"]), st.integers(0, 1000))
def test_simplex_tuners_find_concave_optimum(problem, variant, seed):
    levels, center, weights = problem
    sp = grid(*levels)

    def f(p):
        x = np.asarray(p.levels, dtype=float)
        return -float(np.sum(np.asarray(weights) * (x - center) ** 2))

    brute = max(f(type(sp.center())(idx)) for idx in itertools.product(*[range(n) for n in levels]))
    res = tune(sp, f, TuneConfig(variant=variant, seed=seed, budget=10**5))
    assert res.stop_reason == "converged"
    assert res.best_value == pytest.approx(brute)


def test_unit_conversion_consistency():
    sp = grid(5, 9)
    assert levels_to_unit(sp, np.array([4, 0])).tolist() == [1.0, 0.0]
