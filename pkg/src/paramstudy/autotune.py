"""Grid-aware auto-tuners: Nelder-Mead, Parallel Rank Order and a GA.

Each tuner is an ask/tell object.  :meth:`Tuner.propose` returns the next
batch of grid points and :meth:`Tuner.tell` feeds back one *score* per point,
lower being better (maximization is handled by :func:`tune` through
negation).  Internally every algorithm is a generator that yields batches and
receives scores, which keeps the control flow readable.

Simplex arithmetic happens in unit space; candidates are snapped to the
nearest level and clamped to the axis range.
"""
from __future__ import annotations

import csv
import io
import math
import time
import warnings
from dataclasses import dataclass, field
from typing import Callable, Generator, Sequence

import numpy as np

from .errors import ConfigError, ParamStudyError
from .space import ParameterSpace, ParamSet, levels_to_unit, make_rng, snap_levels

REFLECT, EXPAND, CONTRACT = 2.0, 3.0, 0.5

Batch = list[np.ndarray]


class TunerStopped(ParamStudyError):
    """Raised by :meth:`Tuner.propose` once the search has converged."""


def nm_step(space: ParameterSpace, worst: np.ndarray, centroid: np.ndarray, alpha: float) -> np.ndarray:
    """Snap ``worst + alpha * (centroid - worst)`` (unit space) to the grid.

    ``worst`` holds level indices, ``centroid`` unit coordinates.
    """
    u = levels_to_unit(space, worst)
    return snap_levels(space, u + alpha * (np.asarray(centroid, dtype=float) - u))


def line_point(vr: float, c: float, alpha: float, lo: float = 0.0, hi: float = 1.0) -> float:
    """Scalar form of the simplex move, clamped to ``[lo, hi]``."""
    return min(hi, max(lo, vr + alpha * (c - vr)))


def shrink_toward(best: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Halfway toward ``best`` in level space; odd gaps round toward ``best``."""
    d = v - best
    return best + np.sign(d) * (np.abs(d) // 2)


def crossover(a: Sequence[int], b: Sequence[int], cut: int) -> tuple[np.ndarray, np.ndarray]:
    """Swap every gene at a position strictly greater than ``cut``."""
    a = np.array(a, dtype=np.int64)
    b = np.array(b, dtype=np.int64)
    tail = slice(cut + 1, None)
    a[tail], b[tail] = b[tail].copy(), a[tail].copy()
    return a, b


def ga_step(
    space: ParameterSpace,
    population: np.ndarray,
    fitness: Sequence[float],
    rng: np.random.Generator | int,
    selection_fraction: float = 0.2,
    mutation_rate: float = 0.05,
    cut: int | None = None,
) -> np.ndarray:
    """One generation: selection, pairwise one-point crossover, mutation.

    ``fitness`` is higher-is-better.  ``cut`` forces the crossover index for
    every pair (testing hook); normally it is drawn per pair.
    """
    if not isinstance(rng, np.random.Generator):
        rng = make_rng(rng)
    pop = np.array(population, dtype=np.int64, copy=True)
    P, k = pop.shape
    fit = np.asarray(fitness, dtype=float)
    fit = np.where(np.isnan(fit), -np.inf, fit)

    n_sel = int(round(selection_fraction * P))
    n_sel = min(n_sel, P // 2)
    if n_sel > 0:
        order = np.argsort(-fit, kind="stable")
        for good, bad in zip(order[:n_sel], order[::-1][:n_sel]):
            pop[bad] = pop[good]

    if P < 2:
        warnings.warn("population smaller than 2, crossover skipped", stacklevel=2)
    else:
        for i in range(0, P - 1, 2):
            c = int(rng.integers(0, k)) if cut is None else cut
            pop[i], pop[i + 1] = crossover(pop[i], pop[i + 1], c)

    if mutation_rate > 0:
        hit = rng.random((P, k)) < mutation_rate
        fresh = np.stack([rng.integers(0, L, size=P) for L in space.level_counts], axis=1)
        pop = np.where(hit, fresh, pop)
    return pop


@dataclass
class TuneConfig:
    variant: str = "nelder-mead"
    budget: int = 100
    max_iterations: int | None = None
    threshold: float | None = None
    direction: str = "maximize"
    seed: int = 0
    start: Sequence[int] | None = None
    init_size: float = 0.25
    K: int | None = None
    population: int = 10
    generations: int = 10
    selection_fraction: float = 0.2
    mutation_rate: float = 0.05

    def __post_init__(self) -> None:
        aliases = {"nm": "nelder-mead", "nelder-mead": "nelder-mead", "pro": "pro", "ga": "ga"}
        if self.variant not in aliases:
            raise ConfigError(f"unknown tuner variant {self.variant!r}")
        self.variant = aliases[self.variant]
        if self.direction not in ("maximize", "minimize"):
            raise ConfigError(f"direction must be maximize or minimize, not {self.direction!r}")
        if self.budget < 1:
            raise ConfigError("budget must be >= 1")

    @classmethod
    def from_dict(cls, d: dict) -> "TuneConfig":
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise ConfigError(f"unknown tuner options {sorted(extra)}")
        return cls(**d)


class Tuner:
    """Base ask/tell wrapper around an algorithm generator."""

    variant = ""

    def __init__(self, space: ParameterSpace, config: TuneConfig):
        self.space = space
        self.config = config
        self.rng = make_rng(config.seed)
        self._gen = self._algorithm()
        self._pending: Batch | None = None
        self._scores: list[float] | None = None
        self.converged = False

    def _algorithm(self) -> Generator[Batch, list[float], None]:
        raise NotImplementedError
        yield

    def propose(self) -> list[ParamSet]:
        if self._pending is not None:
            raise ParamStudyError("previous batch has not been told")
        try:
            batch = next(self._gen) if self._scores is None else self._gen.send(self._scores)
        except StopIteration:
            self.converged = True
            raise TunerStopped("search converged") from None
        self._pending = batch
        return [ParamSet(tuple(v)) for v in batch]

    def tell(self, scores: Sequence[float]) -> None:
        if self._pending is None:
            raise ParamStudyError("tell() without a proposed batch")
        if len(scores) != len(self._pending):
            raise ParamStudyError("scores must match the proposed batch one-to-one")
        self._scores = [float(s) for s in scores]
        self._pending = None

    # shared helpers -------------------------------------------------------

    def _initial_simplex(self, x0: np.ndarray, count: int) -> list[np.ndarray]:
        L = self.space.level_counts
        steps = np.maximum(1, np.floor(self.config.init_size * (L - 1) + 0.5)).astype(np.int64)
        verts = [x0.copy()]
        for j in range(self.space.k):
            v = x0.copy()
            v[j] = x0[j] + steps[j] if x0[j] + steps[j] <= L[j] - 1 else x0[j] - steps[j]
            verts.append(v)
        seen = {tuple(v) for v in verts}
        attempts = 0
        while len(verts) < count and attempts < 1000:
            attempts += 1
            v = np.array([self.rng.integers(0, n) for n in L], dtype=np.int64)
            if tuple(v) not in seen:
                seen.add(tuple(v))
                verts.append(v)
        return verts

    def _start(self) -> np.ndarray:
        if self.config.start is not None:
            return np.array(self.space.validate(self.config.start).levels, dtype=np.int64)
        return np.array(self.space.center().levels, dtype=np.int64)

    def _chunks(self, points: Batch, size: int):
        """Evaluate ``points`` in batches of at most ``size``; yields the batches."""
        scores: list[float] = []
        for i in range(0, len(points), size):
            got = yield points[i : i + size]
            scores.extend(got)
        return scores

    def _polish(self, best: np.ndarray, fbest: float, batch_size: int):
        """Probe the +-1 level neighbours of ``best``; return an improvement or None."""
        L = self.space.level_counts
        cand = []
        for j in range(self.space.k):
            for d in (-1, 1):
                v = best.copy()
                v[j] += d
                if 0 <= v[j] < L[j]:
                    cand.append(v)
        if not cand:
            return None
        scores = yield from self._chunks(cand, batch_size)
        i = int(np.argmin(scores))
        if scores[i] < fbest:
            return cand[i], scores[i]
        return None


def _sorted(V: list[np.ndarray], F: list[float]):
    order = sorted(range(len(F)), key=lambda i: (F[i], i))
    return [V[i] for i in order], [F[i] for i in order]


class NelderMead(Tuner):
    variant = "nelder-mead"

    def _algorithm(self):
        space = self.space
        x0 = self._start()
        while True:
            V = self._initial_simplex(x0, space.k + 1)
            F = []
            for v in V:
                F.extend((yield [v]))
            best, fbest = yield from self._simplex_loop(V, F)
            found = yield from self._polish(best, fbest, 1)
            if found is None:
                return
            x0 = found[0]

    def _simplex_loop(self, V, F):
        space = self.space
        seen_states = set()
        while True:
            V, F = _sorted(V, F)
            state = frozenset(tuple(v) for v in V)
            keys = {tuple(v) for v in V}
            if len(keys) == 1 or state in seen_states:
                return V[0], F[0]
            seen_states.add(state)
            worst = V[-1]
            centroid = levels_to_unit(space, np.array(V[:-1])).mean(axis=0)

            xr = nm_step(space, worst, centroid, REFLECT)
            if tuple(xr) not in keys:
                (fr,) = yield [xr]
                if fr < F[0]:
                    xe = nm_step(space, worst, centroid, EXPAND)
                    if tuple(xe) not in keys and not np.array_equal(xe, xr):
                        (fe,) = yield [xe]
                        if fe < fr:
                            V[-1], F[-1] = xe, fe
                            continue
                    V[-1], F[-1] = xr, fr
                    continue
                if fr < F[-2]:
                    V[-1], F[-1] = xr, fr
                    continue

            xc = nm_step(space, worst, centroid, CONTRACT)
            if tuple(xc) not in keys:
                (fc,) = yield [xc]
                if fc < F[-1]:
                    V[-1], F[-1] = xc, fc
                    continue

            shrunk = [shrink_toward(V[0], v) for v in V[1:]]
            if all(np.array_equal(a, b) for a, b in zip(shrunk, V[1:])):
                return V[0], F[0]
            for i, v in enumerate(shrunk, start=1):
                if not np.array_equal(v, V[i]):
                    (F[i],) = yield [v]
                    V[i] = v


class ParallelRankOrder(Tuner):
    variant = "pro"

    @property
    def K(self) -> int:
        K = self.config.K if self.config.K is not None else self.space.k + 1
        if K < self.space.k + 1:
            raise ConfigError(f"PRO needs K >= k+1 = {self.space.k + 1}")
        return K

    def _algorithm(self):
        x0 = self._start()
        batch = self.K - 1
        while True:
            V = self._initial_simplex(x0, self.K)
            F = yield from self._chunks(V, batch)
            best, fbest = yield from self._simplex_loop(V, F)
            found = yield from self._polish(best, fbest, batch)
            if found is None:
                return
            x0 = found[0]

    def _simplex_loop(self, V, F):
        space = self.space
        L = space.level_counts
        seen_states = set()
        while True:
            V, F = _sorted(V, F)
            b = V[0]
            state = frozenset(tuple(v) for v in V)
            if len({tuple(v) for v in V}) == 1 or state in seen_states:
                return V[0], F[0]
            seen_states.add(state)

            R = [np.clip(2 * b - v, 0, L - 1) for v in V[1:]]
            FR = yield R
            if min(FR) < F[0] and _distinct([b] + R):
                E = [np.clip(3 * b - 2 * v, 0, L - 1) for v in V[1:]]
                if _distinct([b] + E):
                    FE = yield E
                    if min(FE) < min(FR):
                        V, F = [b] + E, [F[0]] + list(FE)
                        continue
                V, F = [b] + R, [F[0]] + list(FR)
                continue

            S = [shrink_toward(b, v) for v in V[1:]]
            if all(np.array_equal(s, v) for s, v in zip(S, V[1:])):
                return V[0], F[0]
            FS = yield S
            V, F = [b] + S, [F[0]] + list(FS)


def _distinct(vs: list[np.ndarray]) -> bool:
    return len({tuple(v) for v in vs}) == len(vs)


class GeneticAlgorithm(Tuner):
    variant = "ga"

    def _algorithm(self):
        cfg = self.config
        L = self.space.level_counts
        pop = np.stack([self.rng.integers(0, n, size=cfg.population) for n in L], axis=1).astype(np.int64)
        for g in range(cfg.generations):
            scores = yield [row.copy() for row in pop]
            if g == cfg.generations - 1:
                return
            fitness = -np.asarray(scores, dtype=float)
            pop = ga_step(
                self.space, pop, fitness, self.rng,
                selection_fraction=cfg.selection_fraction,
                mutation_rate=cfg.mutation_rate,
            )


TUNERS = {"nelder-mead": NelderMead, "pro": ParallelRankOrder, "ga": GeneticAlgorithm}


def make_tuner(space: ParameterSpace, config: TuneConfig) -> Tuner:
    return TUNERS[config.variant](space, config)


@dataclass
class TraceRow:
    iteration: int
    key: str
    levels: tuple[int, ...]
    value: float
    failed: bool = False


@dataclass
class TuneResult:
    best: ParamSet | None
    best_value: float
    trace: list[TraceRow]
    evaluations: int
    iterations: int
    stop_reason: str
    grid_size: int
    wall_time: float = 0.0
    flags: list[str] = field(default_factory=list)

    @property
    def fraction_visited(self) -> float:
        return self.evaluations / self.grid_size

    def trace_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["iteration", "paramset", "metric"])
        for row in self.trace:
            w.writerow([row.iteration, row.key, f"{row.value:.10g}"])
        return buf.getvalue()

    def report(self, space: ParameterSpace) -> dict:
        return {
            "best": space.values(self.best) if self.best is not None else None,
            "best_key": space.key(self.best) if self.best is not None else None,
            "best_value": self.best_value if math.isfinite(self.best_value) else None,
            "evaluations": self.evaluations,
            "iterations": self.iterations,
            "stop_reason": self.stop_reason,
            "grid_size": self.grid_size,
            "fraction_visited": self.fraction_visited,
            "wall_time": self.wall_time,
            "flags": self.flags,
        }


Objective = Callable[[ParamSet], float]
BatchObjective = Callable[[list[ParamSet]], list[float]]


def tune(
    space: ParameterSpace,
    objective: Objective | None,
    config: TuneConfig,
    batch_objective: BatchObjective | None = None,
) -> TuneResult:
    """Run propose -> evaluate -> update until a stop condition holds.

    Points already evaluated are served from a memo table and never reach the
    objective.  ``batch_objective``, when given, receives each batch of fresh
    points at once (e.g. to run them as one compact workflow graph).
    A point whose evaluation raises is scored as the worst possible value.
    """
    if objective is None and batch_objective is None:
        raise ConfigError("tune() needs an objective")
    t0 = time.perf_counter()
    tuner = make_tuner(space, config)
    maximize = config.direction == "maximize"
    worst = -math.inf if maximize else math.inf
    max_iter = config.max_iterations
    if max_iter is None:
        max_iter = config.generations if config.variant == "ga" else 100 * config.budget

    memo: dict[tuple[int, ...], float] = {}
    trace: list[TraceRow] = []
    flags: list[str] = []
    best: ParamSet | None = None
    best_value = worst
    iteration = 0
    stop = "max-iterations"

    def better(a: float, b: float) -> bool:
        return a > b if maximize else a < b

    def reached(v: float) -> bool:
        if config.threshold is None:
            return False
        return v >= config.threshold if maximize else v <= config.threshold

    def evaluate(points: list[ParamSet]) -> list[float]:
        if batch_objective is not None:
            try:
                vals = [float(v) for v in batch_objective(points)]
                if len(vals) != len(points):
                    raise ParamStudyError("batch objective returned a wrong number of values")
                return vals
            except Exception as exc:  # noqa: BLE001 - fall back to per-point scoring
                if objective is None:
                    flags.append(f"batch evaluation failed: {exc!r}")
                    return [worst] * len(points)
        out = []
        for p in points:
            try:
                out.append(float(objective(p)))
            except Exception as exc:  # noqa: BLE001 - failures score as worst
                flags.append(f"evaluation failed at {space.key(p)}: {exc!r}")
                out.append(worst)
        return out

    while iteration < max_iter:
        try:
            batch = tuner.propose()
        except TunerStopped:
            stop = "converged"
            break
        iteration += 1

        fresh: list[ParamSet] = []
        for p in batch:
            if p.levels not in memo and p not in fresh:
                fresh.append(p)
        remaining = config.budget - len(memo)
        truncated = len(fresh) > remaining
        fresh = fresh[:remaining]
        values = evaluate(fresh) if fresh else []
        for p, v in zip(fresh, values):
            if not math.isfinite(v) and v != worst:
                flags.append(f"non-finite metric at {space.key(p)}")
                v = worst
            memo[p.levels] = v
            failed = v == worst
            trace.append(TraceRow(iteration, space.key(p), p.levels, v, failed))
            if best is None or better(v, best_value):
                best, best_value = p, v

        if truncated:
            stop = "budget"
            break
        tuner.tell([(-memo[p.levels] if maximize else memo[p.levels]) for p in batch])
        if best is not None and reached(best_value):
            stop = "threshold"
            break
        if len(memo) >= config.budget:
            stop = "budget"
            break

    return TuneResult(
        best=best,
        best_value=best_value,
        trace=trace,
        evaluations=len(memo),
        iterations=iteration,
        stop_reason=stop,
        grid_size=space.grid_size,
        wall_time=time.perf_counter() - t0,
        flags=flags,
    )
