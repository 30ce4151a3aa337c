"""Deterministic synthetic scenes and a normalize -> segment -> compare workflow.

Scenes are grayscale tiles with anti-aliased discs on a noisy background.
All noise is baked into the seeded scene, so every stage is a pure function
of its inputs and parameters.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

from .graph import StageDecl, Workflow
from .space import ParameterAxis, ParameterSpace, make_rng
from .spatial import METRICS, ObjectMask, extract_objects


@dataclass(frozen=True)
class SceneSpec:
    seed: int = 0
    width: int = 192
    height: int = 192
    count: int = 10
    radius: tuple[float, float] = (6.0, 13.0)
    intensity: tuple[float, float] = (140.0, 200.0)
    background: float = 40.0
    noise: float = 8.0
    gap: int = 3

    @classmethod
    def from_dict(cls, d: dict) -> "SceneSpec":
        d = dict(d)
        for k in ("radius", "intensity"):
            if k in d:
                d[k] = tuple(d[k])
        return cls(**d)


@dataclass
class SyntheticScene:
    spec: SceneSpec
    tile: np.ndarray
    blobs: list[tuple[float, float, float, float]] = field(default_factory=list)  # cx, cy, r, intensity


def render_scene(spec: SceneSpec) -> SyntheticScene:
    rng = make_rng(spec.seed)
    h, w = spec.height, spec.width
    blobs: list[tuple[float, float, float, float]] = []
    attempts = 0
    while len(blobs) < spec.count and attempts < 10000:
        attempts += 1
        r = rng.uniform(*spec.radius)
        margin = r + 2
        if w - 2 * margin <= 0 or h - 2 * margin <= 0:
            break
        cx = rng.uniform(margin, w - 1 - margin)
        cy = rng.uniform(margin, h - 1 - margin)
        if any(np.hypot(cx - bx, cy - by) < r + br + 1 + spec.gap for bx, by, br, _ in blobs):
            continue
        blobs.append((cx, cy, r, rng.uniform(*spec.intensity)))

    yy, xx = np.mgrid[0:h, 0:w].astype(float)
    img = np.full((h, w), spec.background)
    for cx, cy, r, inten in blobs:
        cover = np.clip(r + 0.5 - np.hypot(xx - cx, yy - cy), 0.0, 1.0)
        img += cover * (inten - spec.background)
    img += rng.normal(0.0, spec.noise, size=(h, w))
    tile = np.clip(np.rint(img), 0, 255).astype(np.uint8)
    return SyntheticScene(spec, tile, blobs)


@dataclass(frozen=True)
class SyntheticParams:
    threshold: int = 120
    min_size: int = 40
    max_size: int = 2000
    connectivity: int = 8
    target_mean: float = 80.0

    def __post_init__(self) -> None:
        if self.min_size > self.max_size:
            raise ValueError("min_size must not exceed max_size")
        if not 0 <= self.threshold <= 255:
            raise ValueError("threshold must be in 0..255")

    def as_dict(self) -> dict[str, Any]:
        return {
            "threshold": self.threshold,
            "min_size": self.min_size,
            "max_size": self.max_size,
            "connectivity": str(self.connectivity),
            "target_mean": self.target_mean,
        }


def normalize_stage(tile: np.ndarray, target_mean: float) -> np.ndarray:
    """Shift intensities by a whole number so the mean lands on ``target_mean``."""
    tile = np.asarray(tile)
    shift = int(np.rint(float(target_mean) - float(tile.mean())))
    return np.clip(tile.astype(np.int32) + shift, 0, 255).astype(np.uint8)


def segment_stage(
    tile: np.ndarray,
    threshold: int,
    min_size: int,
    max_size: int,
    connectivity: int = 8,
) -> ObjectMask:
    """Threshold, label, then keep components with ``min_size <= area <= max_size``."""
    fg = np.asarray(tile) > int(threshold)
    mask = extract_objects(fg.astype(np.uint8), int(connectivity))
    keep = np.zeros(len(mask.objects) + 1, dtype=bool)
    for o in mask.objects:
        keep[o.id] = min_size <= o.area <= max_size
    pixels = np.where(keep[mask.labels], 255, 0).astype(np.uint8)
    return extract_objects(pixels, int(connectivity))


def run_pipeline(scene: SyntheticScene, params: SyntheticParams) -> ObjectMask:
    norm = normalize_stage(scene.tile, params.target_mean)
    return segment_stage(norm, params.threshold, params.min_size, params.max_size, params.connectivity)


def reference_mask(scene: SyntheticScene, params: SyntheticParams) -> ObjectMask:
    return run_pipeline(scene, params)


DEFAULT_PARAMS = SyntheticParams()


def synthetic_space(include_dummy: bool = False) -> ParameterSpace:
    """Search space of the synthetic workflow (about 1.4e8 grid points)."""
    axes = [
        ParameterAxis("target_mean", "integer-grid", 60, 200, 5),
        ParameterAxis("threshold", "integer-grid", 0, 255, 1),
        ParameterAxis("min_size", "integer-grid", 0, 400, 4),
        ParameterAxis("max_size", "integer-grid", 500, 5000, 50),
        ParameterAxis("connectivity", "categorical", categories=("4", "8")),
    ]
    if include_dummy:
        axes.append(ParameterAxis("dummy", "integer-grid", 0, 9, 1))
    return ParameterSpace(axes)


def watershed_space() -> ParameterSpace:
    """Shape of the 15-parameter watershed workflow search space (about 2.1e13 points)."""
    ax = ParameterAxis
    conn = ("4-conn", "8-conn")
    return ParameterSpace([
        ax("B", "integer-grid", 210, 240, 10),
        ax("G", "integer-grid", 210, 240, 10),
        ax("R", "integer-grid", 210, 240, 10),
        ax("T1", "continuous-grid", 2.5, 7.5, 0.5),
        ax("T2", "continuous-grid", 2.5, 7.5, 0.5),
        ax("G1", "integer-grid", 5, 80, 5),
        ax("G2", "integer-grid", 2, 40, 2),
        ax("MinSize", "integer-grid", 2, 40, 2),
        ax("MaxSize", "integer-grid", 900, 1500, 50),
        ax("MinSizePl", "integer-grid", 5, 80, 5),
        ax("MinSizeSeg", "integer-grid", 2, 40, 2),
        ax("MaxSizeSeg", "integer-grid", 900, 1500, 50),
        ax("FillHoles", categories=conn),
        ax("MorphRecon", categories=conn),
        ax("Watershed", categories=conn),
    ])


def levelset_space(include_dummy: bool = True) -> ParameterSpace:
    """Shape of the level-set workflow search space (about 2.8e9 points without the dummy)."""
    ax = ParameterAxis
    axes = [
        ax("OTSU", "continuous-grid", 0.1, 2.5, 0.1),
        ax("CW", "continuous-grid", 0.0, 1.0, 0.05),
        ax("MinSize", "integer-grid", 1, 20, 1),
        ax("MaxSize", "integer-grid", 50, 400, 5),
        ax("MsKernel", "integer-grid", 5, 30, 1),
        ax("LevelSetIt", "integer-grid", 5, 150, 1),
    ]
    if include_dummy:
        axes.append(ax("Dummy", "integer-grid", 0, 9, 1))
    return ParameterSpace(axes)


def _param(params: dict, name: str, fallback: Any) -> Any:
    return params[name] if name in params else fallback


def synthetic_workflow(
    scenes: list[SyntheticScene],
    references: list[ObjectMask],
    metric: str = "dice",
    defaults: SyntheticParams = DEFAULT_PARAMS,
) -> Workflow:
    """normalize -> segment -> compare over the given scenes.

    The ``tile`` binding (a context value, not a search axis) selects the
    scene and reference each instance works on.  Parameters missing from the
    search space fall back to ``defaults``.
    """
    metric_fn: Callable = METRICS[metric]

    def normalize(params: dict) -> np.ndarray:
        scene = scenes[int(params["tile"])]
        return normalize_stage(scene.tile, _param(params, "target_mean", defaults.target_mean))

    def segment(params: dict, tile: np.ndarray) -> np.ndarray:
        mask = segment_stage(
            tile,
            _param(params, "threshold", defaults.threshold),
            _param(params, "min_size", defaults.min_size),
            _param(params, "max_size", defaults.max_size),
            int(_param(params, "connectivity", defaults.connectivity)),
        )
        return mask.pixels

    def compare(params: dict, mask: np.ndarray) -> float:
        ref = references[int(params["tile"])]
        return float(metric_fn(mask, ref).value)

    return Workflow([
        StageDecl("normalize", ("tile", "target_mean"), (), fn=normalize),
        StageDecl("segment", ("threshold", "min_size", "max_size", "connectivity"), ("normalize",), fn=segment),
        StageDecl("compare", ("tile",), ("segment",), fn=compare),
    ])


def bind_workflow(workflow: Workflow, space: ParameterSpace) -> Workflow:
    """Drop stage axes that are neither in ``space`` nor the ``tile`` context."""
    stages = []
    for s in workflow.stages:
        axes = tuple(a for a in s.axes if a in space or a == "tile")
        stages.append(StageDecl(s.name, axes, s.inputs, s.pure, s.fn))
    return Workflow(stages)
