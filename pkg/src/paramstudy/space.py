"""Parameter axes, the discretized search grid and the sampling designs.

Every design is a matrix of *level indices* (one column per axis).  Unit
scaling maps level ``i`` of an axis with ``L`` levels to ``i / (L - 1)``, which
is the coordinate system used by the screening and tuning code.

Random numbers come from :func:`make_rng`, a Philox4x64-10 counter-based
generator seeded with a 64-bit integer, so designs are reproducible from
``(space, parameters, seed)`` alone.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Iterable, Iterator, Sequence

import numpy as np

from .errors import (
    ConfigError,
    DesignInfeasibleError,
    EmptyDesignError,
    InvalidParamSetError,
)

CONTINUOUS = "continuous-grid"
INTEGER = "integer-grid"
CATEGORICAL = "categorical"
_KIND_ALIASES = {
    "continuous": CONTINUOUS,
    "continuous-grid": CONTINUOUS,
    "float": CONTINUOUS,
    "integer": INTEGER,
    "integer-grid": INTEGER,
    "int": INTEGER,
    "categorical": CATEGORICAL,
}


def make_rng(seed: int) -> np.random.Generator:
    """Philox4x64-10 stream for ``seed`` (taken modulo 2**64)."""
    return np.random.Generator(np.random.Philox(int(seed) % (1 << 64)))


@dataclass(frozen=True)
class ParameterAxis:
    name: str
    kind: str | None = None  # inferred: categorical when categories are given
    lo: float = 0.0
    hi: float = 1.0
    step: float = 1.0
    categories: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if self.kind is None:
            object.__setattr__(self, "kind", CATEGORICAL if self.categories else CONTINUOUS)
        kind = _KIND_ALIASES.get(self.kind)
        if kind is None:
            raise ConfigError(f"axis {self.name!r}: unknown kind {self.kind!r}")
        object.__setattr__(self, "kind", kind)
        if kind == CATEGORICAL:
            cats = tuple(str(c) for c in self.categories)
            if len(cats) < 2:
                raise ConfigError(f"axis {self.name!r}: needs at least 2 categories")
            if len(set(cats)) != len(cats):
                raise ConfigError(f"axis {self.name!r}: duplicate categories")
            object.__setattr__(self, "categories", cats)
            return
        if not self.step > 0:
            raise ConfigError(f"axis {self.name!r}: step must be > 0")
        if self.lo > self.hi:
            raise ConfigError(f"axis {self.name!r}: lo > hi")
        ratio = (self.hi - self.lo) / self.step
        if abs(ratio - round(ratio)) > 1e-9 * max(1.0, abs(ratio)):
            raise ConfigError(
                f"axis {self.name!r}: range {self.hi - self.lo} is not a multiple of step {self.step}"
            )
        if round(ratio) < 1:
            raise ConfigError(f"axis {self.name!r}: needs at least 2 levels")
        if kind == INTEGER and not all(float(v).is_integer() for v in (self.lo, self.hi, self.step)):
            raise ConfigError(f"axis {self.name!r}: integer axis needs integral lo/hi/step")

    @property
    def levels(self) -> int:
        if self.kind == CATEGORICAL:
            return len(self.categories)
        return int(round((self.hi - self.lo) / self.step)) + 1

    def value(self, index: int) -> Any:
        """Native value of level ``index``."""
        if not 0 <= index < self.levels:
            raise InvalidParamSetError(f"axis {self.name!r}: level {index} out of range")
        if self.kind == CATEGORICAL:
            return self.categories[index]
        if self.kind == INTEGER:
            return int(round(self.lo + index * self.step))
        return float(f"{self.lo + index * self.step:.12g}")

    def label(self, index: int) -> str:
        v = self.value(index)
        return v if isinstance(v, str) else f"{v:.12g}"

    def index_of(self, value: Any) -> int:
        """Level index of a native value (must be on the grid)."""
        if self.kind == CATEGORICAL:
            try:
                return self.categories.index(str(value))
            except ValueError:
                raise InvalidParamSetError(f"axis {self.name!r}: unknown category {value!r}") from None
        pos = (float(value) - self.lo) / self.step
        idx = int(round(pos))
        if abs(pos - idx) > 1e-6 or not 0 <= idx < self.levels:
            raise InvalidParamSetError(f"axis {self.name!r}: {value!r} is not a grid value")
        return idx

    @classmethod
    def from_dict(cls, d: dict) -> "ParameterAxis":
        if "name" not in d:
            raise ConfigError("axis without a name")
        if "categories" in d:
            return cls(name=d["name"], kind=CATEGORICAL, categories=tuple(d["categories"]))
        try:
            lo, hi, step = d["lo"], d["hi"], d["step"]
        except KeyError as exc:
            raise ConfigError(f"axis {d['name']!r}: missing {exc.args[0]!r}") from None
        kind = d.get("kind")
        if kind is None:
            kind = INTEGER if all(float(v).is_integer() for v in (lo, hi, step)) else CONTINUOUS
        return cls(name=d["name"], kind=kind, lo=lo, hi=hi, step=step)

    def to_dict(self) -> dict:
        if self.kind == CATEGORICAL:
            return {"name": self.name, "categories": list(self.categories)}
        return {"name": self.name, "kind": self.kind, "lo": self.lo, "hi": self.hi, "step": self.step}


@dataclass(frozen=True)
class ParamSet:
    """A grid point: one level index per axis, in axis order."""

    levels: tuple[int, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "levels", tuple(int(v) for v in self.levels))

    def __iter__(self) -> Iterator[int]:
        return iter(self.levels)

    def __len__(self) -> int:
        return len(self.levels)

    def __getitem__(self, i: int) -> int:
        return self.levels[i]


class ParameterSpace:
    def __init__(self, axes: Iterable[ParameterAxis]):
        self.axes: tuple[ParameterAxis, ...] = tuple(axes)
        names = [a.name for a in self.axes]
        if len(set(names)) != len(names):
            raise ConfigError("axis names must be unique")
        if not self.axes:
            raise ConfigError("parameter space needs at least one axis")
        self._index = {n: i for i, n in enumerate(names)}
        self.level_counts = np.array([a.levels for a in self.axes], dtype=np.int64)

    @classmethod
    def from_config(cls, axes: Sequence[dict]) -> "ParameterSpace":
        return cls(ParameterAxis.from_dict(d) for d in axes)

    def to_config(self) -> list[dict]:
        return [a.to_dict() for a in self.axes]

    @property
    def k(self) -> int:
        return len(self.axes)

    @property
    def names(self) -> list[str]:
        return [a.name for a in self.axes]

    @property
    def grid_size(self) -> int:
        return math.prod(a.levels for a in self.axes)

    def axis_index(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise ConfigError(f"unknown axis {name!r}") from None

    def __contains__(self, name: str) -> bool:
        return name in self._index

    def validate(self, p: ParamSet | Sequence[int]) -> ParamSet:
        p = p if isinstance(p, ParamSet) else ParamSet(tuple(p))
        if len(p) != self.k:
            raise InvalidParamSetError(f"expected {self.k} levels, got {len(p)}")
        for axis, idx in zip(self.axes, p):
            if not 0 <= idx < axis.levels:
                raise InvalidParamSetError(f"axis {axis.name!r}: level {idx} out of range")
        return p

    def key(self, p: ParamSet | Sequence[int]) -> str:
        """Canonical ``name=value`` key used for memoization and dedup."""
        p = self.validate(p)
        return ",".join(f"{a.name}={a.label(i)}" for a, i in zip(self.axes, p))

    def values(self, p: ParamSet | Sequence[int]) -> dict[str, Any]:
        p = self.validate(p)
        return {a.name: a.value(i) for a, i in zip(self.axes, p)}

    def from_values(self, values: dict[str, Any]) -> ParamSet:
        missing = [a.name for a in self.axes if a.name not in values]
        if missing:
            raise ConfigError(f"missing values for axes {missing}")
        return ParamSet(tuple(a.index_of(values[a.name]) for a in self.axes))

    def center(self) -> ParamSet:
        return ParamSet(tuple(int((L - 1) // 2) for L in self.level_counts))


def scale_to_unit(space: ParameterSpace, p: ParamSet | Sequence[int]) -> np.ndarray:
    p = space.validate(p)
    return np.asarray(p.levels, dtype=float) / (space.level_counts - 1)


def levels_to_unit(space: ParameterSpace, levels: np.ndarray) -> np.ndarray:
    """Vectorized :func:`scale_to_unit` over an ``(n, k)`` level matrix."""
    return np.asarray(levels, dtype=float) / (space.level_counts - 1)


def snap_levels(space: ParameterSpace, unit: np.ndarray) -> np.ndarray:
    """Nearest level for unit coordinates; out-of-range values clamp."""
    top = space.level_counts - 1
    x = np.floor(np.asarray(unit, dtype=float) * top + 0.5)
    return np.clip(x, 0, top).astype(np.int64)


def from_unit(space: ParameterSpace, unit: Sequence[float]) -> ParamSet:
    return ParamSet(tuple(snap_levels(space, np.asarray(unit, dtype=float))))


@dataclass
class SampleDesign:
    kind: str
    space: ParameterSpace
    levels: np.ndarray  # (n, k) int64
    seed: int | None = None
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return int(self.levels.shape[0])

    @property
    def points(self) -> list[ParamSet]:
        return [ParamSet(tuple(row)) for row in self.levels.tolist()]

    def unit(self) -> np.ndarray:
        return levels_to_unit(self.space, self.levels)


def sample_monte_carlo(space: ParameterSpace, n: int, seed: int) -> SampleDesign:
    if n < 1:
        raise EmptyDesignError("monte-carlo design needs n >= 1")
    rng = make_rng(seed)
    cols = [rng.integers(0, L, size=n) for L in space.level_counts]
    return SampleDesign("monte-carlo", space, np.stack(cols, axis=1).astype(np.int64), seed)


def sample_lhs(space: ParameterSpace, n: int, seed: int) -> SampleDesign:
    """Latin hypercube: one draw per stratum per axis, snapped to the grid.

    ``meta["unit"]`` keeps the pre-snap draws so stratum occupancy can be
    audited.
    """
    if n < 1:
        raise EmptyDesignError("lhs design needs n >= 1")
    rng = make_rng(seed)
    unit = np.empty((n, space.k))
    for j in range(space.k):
        strata = rng.permutation(n)
        unit[:, j] = (strata + rng.random(n)) / n
    levels = snap_levels(space, unit)
    return SampleDesign("lhs", space, levels, seed, meta={"unit": unit})


def morris_delta(p: int) -> float:
    return p / (2.0 * (p - 1))


def sample_morris(space: ParameterSpace, r: int, p: int | None = None, seed: int = 0) -> SampleDesign:
    """Morris one-at-a-time trajectories.

    With ``p`` given, every axis uses the step ``p / (2 (p - 1))`` in unit space,
    rounded to the nearest whole number of that axis's levels (at least one).
    With ``p=None`` each axis uses its own level count as ``p``.

    Every trajectory picks a base level from which a full step stays on the
    grid, and a random direction per axis: either start at the base and move
    up, or start one step above and move down.
    """
    if r < 1:
        raise EmptyDesignError("morris design needs r >= 1")
    if p is not None and p < 2:
        raise DesignInfeasibleError("morris design needs p >= 2")
    L = space.level_counts
    if np.any(L < 2):
        raise DesignInfeasibleError("every axis needs at least 2 levels")
    pp = np.full(space.k, p) if p is not None else L
    delta = pp / (2.0 * (pp - 1))
    steps = np.maximum(1, np.floor(delta * (L - 1) + 0.5)).astype(np.int64)
    steps = np.minimum(steps, L - 1)
    unit_delta = steps / (L - 1)

    rng = make_rng(seed)
    k = space.k
    rows = []
    moves = []
    for _ in range(r):
        base = np.array([rng.integers(0, L[j] - steps[j]) for j in range(k)], dtype=np.int64)
        signs = np.where(rng.random(k) < 0.5, 1, -1)
        x = np.where(signs > 0, base, base + steps)
        order = rng.permutation(k)
        rows.append(x.copy())
        traj = []
        for j in order:
            x[j] += signs[j] * steps[j]
            rows.append(x.copy())
            traj.append((int(j), float(signs[j] * unit_delta[j])))
        moves.append(traj)
    meta = {
        "r": r,
        "p": p,
        "delta": unit_delta.tolist(),
        "step_levels": steps.tolist(),
        "moves": moves,
    }
    return SampleDesign("morris", space, np.array(rows, dtype=np.int64), seed, meta)


def sample_saltelli(space: ParameterSpace, n: int, seed: int) -> SampleDesign:
    """Blocks A, B, then A_B^(i) for every axis i (A with column i from B)."""
    if n < 2:
        raise EmptyDesignError("saltelli design needs n >= 2")
    rng = make_rng(seed)
    A = snap_levels(space, rng.random((n, space.k)))
    B = snap_levels(space, rng.random((n, space.k)))
    blocks = [A, B]
    for i in range(space.k):
        ABi = A.copy()
        ABi[:, i] = B[:, i]
        blocks.append(ABi)
    bounds = {"A": [0, n], "B": [n, 2 * n]}
    for i in range(space.k):
        bounds[f"AB{i}"] = [(2 + i) * n, (3 + i) * n]
    return SampleDesign("saltelli", space, np.vstack(blocks), seed, meta={"n": n, "blocks": bounds})


def make_design(space: ParameterSpace, kind: str, seed: int, **kw) -> SampleDesign:
    if kind in ("monte-carlo", "mc"):
        return sample_monte_carlo(space, kw["n"], seed)
    if kind == "lhs":
        return sample_lhs(space, kw["n"], seed)
    if kind == "morris":
        return sample_morris(space, kw["r"], kw.get("p"), seed)
    if kind == "saltelli":
        return sample_saltelli(space, kw["n"], seed)
    raise ConfigError(f"unknown design kind {kind!r}")
