"""Config-driven studies: design -> batched compact-graph execution -> analysis.

A study config is one JSON file (schema in ``config_schema.json``).  Every
design point is evaluated once per tile; the per-tile metric values are
aggregated (mean or sum) into the scalar the analysis sees.
"""
from __future__ import annotations

import csv
import io
import json
import math
import os
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Sequence

import jsonschema

from . import sa
from .autotune import TuneConfig, TuneResult, tune
from .bench import (
    DEFAULT_PARAMS,
    SceneSpec,
    SyntheticParams,
    SyntheticScene,
    bind_workflow,
    levelset_space,
    reference_mask,
    render_scene,
    synthetic_space,
    synthetic_workflow,
    watershed_space,
)
from .errors import ConfigError, ParamStudyError, ShapeError
from .graph import Workflow, build_compact
from .runtime import CostModel, ExecutionReport, load_storage_config, run
from .space import ParameterSpace, ParamSet, SampleDesign, make_design
from .spatial import ObjectMask, extract_objects, read_pgm, write_pgm

MAXIMIZE_METRICS = {"dice", "jaccard", "overlap", "overlap-area-ratio"}


class ExecutionFailed(ParamStudyError):
    """Some design points produced no metric; partial results were written."""


def _schema() -> dict:
    return json.loads(resources.files(__package__).joinpath("config_schema.json").read_text())


def _line_of(text: str, path: Sequence[Any]) -> int:
    """Best-effort source line of a JSON path (keys searched in order)."""
    pos = 0
    for part in path:
        if isinstance(part, int):
            continue
        m = re.compile(r'"%s"\s*:' % re.escape(str(part))).search(text, pos)
        if m is None:
            break
        pos = m.start()
    return text.count("\n", 0, pos) + 1


def parse_config(text: str, source: str = "<config>") -> dict:
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{source}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    validator = jsonschema.Draft202012Validator(_schema())
    err = jsonschema.exceptions.best_match(validator.iter_errors(cfg))
    if err is not None:
        where = "/".join(str(p) for p in err.absolute_path) or "(top level)"
        raise ConfigError(f"{source}:{_line_of(text, list(err.absolute_path))}: {where}: {err.message}")
    return cfg


def load_config(path: str | os.PathLike) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from None
    return parse_config(text, str(path))


def build_space(spec: dict | list) -> ParameterSpace:
    if isinstance(spec, list):
        return ParameterSpace.from_config(spec)
    preset = spec["preset"]
    if preset == "synthetic":
        return synthetic_space(spec.get("dummy", False))
    if preset == "levelset":
        return levelset_space(spec.get("dummy", True))
    if spec.get("dummy"):
        raise ConfigError("the watershed preset has no dummy axis")
    return watershed_space()


@dataclass
class ExecutionLog:
    """Runtime statistics accumulated over every batch of a study."""

    scheduler: str
    workers: int
    batches: int = 0
    executed: int = 0
    gets: int = 0
    hits: list[int] = field(default_factory=list)
    cases: dict[int, int] = field(default_factory=dict)
    simulated_time_ns: float = 0.0
    wall_time: float = 0.0
    failures: dict[str, str] = field(default_factory=dict)
    capacity_ok: bool = True
    _csv: io.StringIO = field(default_factory=io.StringIO, repr=False)

    def add(self, rep: ExecutionReport) -> None:
        if not self.hits:
            self.hits = [0] * len(rep.hits)
        self.hits = [a + b for a, b in zip(self.hits, rep.hits)]
        for c, n in rep.cases.items():
            self.cases[c] = self.cases.get(c, 0) + n
        self.executed += rep.executed
        self.gets += rep.gets
        self.simulated_time_ns += rep.makespan_ns
        self.wall_time += rep.wall_time
        self.failures.update(rep.failures)
        self.capacity_ok = self.capacity_ok and rep.capacity_ok
        w = csv.writer(self._csv, lineterminator="\n")
        if self.batches == 0:
            w.writerow(["batch", "timestamp_ns", "worker", "event", "region", "level", "case", "occupied", "capacity"])
        for e in rep.events:
            w.writerow([self.batches, f"{e.time:.1f}", e.worker, e.event, e.region, e.level, e.case, e.occupied, e.capacity])
        self.batches += 1

    @property
    def level0_hit_rate(self) -> float:
        return self.hits[0] / self.gets if self.gets else 0.0

    def events_csv(self) -> str:
        return self._csv.getvalue()

    def summary(self) -> dict:
        return {
            "scheduler": self.scheduler,
            "workers": self.workers,
            "batches": self.batches,
            "stage_executions": self.executed,
            "gets": self.gets,
            "hits_per_level": self.hits,
            "retrieval_cases": {str(k): v for k, v in sorted(self.cases.items())},
            "level0_hit_rate": self.level0_hit_rate,
            "simulated_time_ns": self.simulated_time_ns,
            "wall_time_s": self.wall_time,
            "failures": self.failures,
            "capacity_ok": self.capacity_ok,
        }


@dataclass
class Study:
    space: ParameterSpace
    scenes: list[SyntheticScene]
    references: list[ObjectMask]
    workflow: Workflow
    method: dict
    metric: str = "dice"
    aggregate: str = "mean"
    seed: int = 0
    workers: int = 1
    scheduler: str = "fcfs"
    batch: int = 64
    costs: CostModel = field(default_factory=CostModel)
    storage: list | None = None
    out: Path = Path("results")
    save_masks: bool = False
    log: ExecutionLog | None = None

    @classmethod
    def from_config(
        cls,
        cfg: dict,
        base_dir: str | os.PathLike = ".",
        seed: int | None = None,
        workers: int | None = None,
        scheduler: str | None = None,
        batch: int | None = None,
        out: str | os.PathLike | None = None,
        metric: str | None = None,
    ) -> "Study":
        base = Path(base_dir)
        space = build_space(cfg["space"])
        wf_cfg = cfg.get("workflow", {})
        scene = SceneSpec.from_dict(wf_cfg.get("scene", {}))
        scenes = [
            render_scene(SceneSpec.from_dict({**scene.__dict__, "seed": scene.seed + j}))
            for j in range(wf_cfg.get("tiles", 1))
        ]
        d = dict(wf_cfg.get("defaults", {}))
        if "connectivity" in d:
            d["connectivity"] = int(d["connectivity"])
        try:
            defaults = SyntheticParams(**{**DEFAULT_PARAMS.__dict__, **d})
        except ValueError as exc:
            raise ConfigError(f"workflow defaults: {exc}") from None

        ref = cfg.get("reference", "default-params")
        if ref == "default-params":
            references = [reference_mask(s, defaults) for s in scenes]
        else:
            references = _load_masks(base / ref["masks"], scenes)

        metric = metric or cfg.get("metric", "dice")
        rt = cfg.get("runtime", {})
        costs = CostModel(**rt.get("costs", {}))
        storage = cfg.get("storage")
        if storage is not None:
            load_storage_config(storage)  # validate early
        out_dir = Path(out) if out is not None else base / cfg.get("output", {}).get("dir", "results")
        workflow = bind_workflow(synthetic_workflow(scenes, references, metric, defaults), space)
        workflow.check_axes(space, ["tile"])
        sched = scheduler or rt.get("scheduler", "fcfs")
        nworkers = workers or rt.get("workers", 1)
        return cls(
            space=space,
            scenes=scenes,
            references=references,
            workflow=workflow,
            method=dict(cfg["method"]),
            metric=metric,
            aggregate=cfg.get("aggregate", "mean"),
            seed=cfg.get("seed", 0) if seed is None else seed,
            workers=nworkers,
            scheduler=sched,
            batch=batch or rt.get("batch", 64),
            costs=costs,
            storage=storage,
            out=out_dir,
            save_masks=cfg.get("output", {}).get("save_masks", False),
            log=ExecutionLog(sched, nworkers),
        )

    @property
    def contexts(self) -> list[dict]:
        return [{"tile": j} for j in range(len(self.scenes))]

    def evaluate(self, points: Sequence[ParamSet]) -> list[float]:
        """Metric per point; NaN where any tile's pipeline failed."""
        out: list[float] = []
        for s in range(0, len(points), self.batch):
            chunk = list(points[s : s + self.batch])
            graph = build_compact(self.workflow, self.space, chunk, self.contexts)
            rep = run(graph, self.workers, self.storage, self.scheduler, self.costs)
            self.log.add(rep)
            for i in range(len(chunk)):
                vals = [rep.outputs.get(graph.instances[(i, j)]["compare"]) for j in range(len(self.scenes))]
                if any(v is None for v in vals):
                    out.append(math.nan)
                elif self.aggregate == "sum":
                    out.append(float(sum(vals)))
                else:
                    out.append(float(sum(vals) / len(vals)))
        return out

    def write(self, name: str, text: str) -> Path:
        self.out.mkdir(parents=True, exist_ok=True)
        path = self.out / name
        path.write_text(text)
        return path

    def write_json(self, name: str, data: Any) -> Path:
        return self.write(name, json.dumps(data, indent=2, sort_keys=True, default=_json_default) + "\n")

    def write_execution(self) -> None:
        self.write_json("execution.json", self.log.summary())
        self.write("events.csv", self.log.events_csv())

    def save_scene_files(self) -> None:
        for j, (scene, ref) in enumerate(zip(self.scenes, self.references)):
            self.out.mkdir(parents=True, exist_ok=True)
            write_pgm(self.out / f"tile{j}.pgm", scene.tile)
            write_pgm(self.out / f"reference{j}.pgm", ref.pixels)


def _json_default(v: Any) -> Any:
    if hasattr(v, "item"):
        return v.item()
    raise TypeError(f"not JSON serializable: {type(v).__name__}")


def _load_masks(folder: Path, scenes: list[SyntheticScene]) -> list[ObjectMask]:
    masks = []
    for j, scene in enumerate(scenes):
        path = folder / f"tile{j}.pgm"
        if not path.exists():
            raise ConfigError(f"reference mask {path} not found")
        raster = read_pgm(path)
        if raster.shape != scene.tile.shape:
            raise ShapeError(f"{path}: shape {raster.shape} does not match tile {scene.tile.shape}")
        masks.append(extract_objects(raster))
    return masks


def _evaluations_csv(space: ParameterSpace, points: Sequence[ParamSet], values: Sequence[float]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["index", "paramset", "metric"])
    for i, (p, v) in enumerate(zip(points, values)):
        w.writerow([i, space.key(p), "" if math.isnan(v) else f"{v:.10g}"])
    return buf.getvalue()


def _check_kind(study: Study, allowed: Sequence[str]) -> str:
    kind = study.method["kind"]
    if kind not in allowed:
        raise ConfigError(f"method kind {kind!r} not valid here; expected one of {list(allowed)}")
    return kind


def design_for(study: Study) -> SampleDesign:
    m = study.method
    kind = m["kind"]
    try:
        if kind == "moat":
            return make_design(study.space, "morris", study.seed, r=m["r"], p=m.get("p"))
        if kind in ("lhs", "monte-carlo"):
            return make_design(study.space, kind, study.seed, n=m["n"])
        if kind == "saltelli":
            return make_design(study.space, "saltelli", study.seed, n=m["n"])
    except KeyError as exc:
        raise ConfigError(f"method {kind!r} needs {exc.args[0]!r}") from None
    raise ConfigError(f"method kind {kind!r} does not define a sampling design")


def explicit_points(study: Study) -> list[ParamSet]:
    m = study.method
    if m["kind"] == "default":
        values = {a: v for a, v in DEFAULT_PARAMS.as_dict().items() if a in study.space}
        for a in study.space.axes:
            values.setdefault(a.name, a.value(study.space.center()[study.space.axis_index(a.name)]))
        return [study.space.from_values(values)]
    if m["kind"] == "points":
        return [study.space.from_values(v) for v in m.get("points", [])]
    return design_for(study).points


def _run_design(study: Study, design: SampleDesign) -> list[float]:
    values = study.evaluate(design.points)
    study.write("evaluations.csv", _evaluations_csv(study.space, design.points, values))
    study.write_execution()
    if any(math.isnan(v) for v in values):
        bad = sum(math.isnan(v) for v in values)
        study.write_json("partial.json", {"failed_points": bad, "evaluations": len(values)})
        raise ExecutionFailed(f"{bad} of {len(values)} design points failed")
    return values


def _analysis(study: Study, design: SampleDesign, values: list[float], fn, name: str):
    result = fn(sa.ResultTable(design, values))
    study.write(f"{name}.csv", sa.to_csv(result.rows()))
    rep = sa.report(result)
    rep["evaluations"] = len(values)
    study.write_json(f"{name}.json", rep)
    return result


def run_moat(study: Study) -> sa.MoatResult:
    _check_kind(study, ["moat"])
    design = design_for(study)
    return _analysis(study, design, _run_design(study, design), sa.moat, "moat")


def run_correlate(study: Study) -> sa.CorrelationResult:
    _check_kind(study, ["lhs", "monte-carlo"])
    design = design_for(study)
    return _analysis(study, design, _run_design(study, design), sa.correlations, "correlations")


def run_vbd(study: Study) -> sa.SobolResult:
    _check_kind(study, ["saltelli"])
    design = design_for(study)
    return _analysis(study, design, _run_design(study, design), sa.sobol, "sobol")


def run_points(study: Study) -> list[float]:
    _check_kind(study, ["points", "default", "moat", "lhs", "monte-carlo", "saltelli"])
    points = explicit_points(study)
    if study.save_masks:
        study.save_scene_files()
    values = study.evaluate(points)
    study.write("evaluations.csv", _evaluations_csv(study.space, points, values))
    study.write_execution()
    if any(math.isnan(v) for v in values):
        raise ExecutionFailed("some points failed")
    return values


def run_tune(study: Study) -> TuneResult:
    _check_kind(study, ["tune"])
    opts = dict(study.method.get("tuner", {}))
    opts.setdefault("seed", study.seed)
    opts.setdefault("direction", "maximize" if study.metric in MAXIMIZE_METRICS else "minimize")
    if "start" in opts and isinstance(opts["start"], dict):
        opts["start"] = study.space.from_values(opts["start"]).levels
    config = TuneConfig.from_dict(opts)
    result = tune(study.space, None, config, batch_objective=study.evaluate)
    study.write("trace.csv", result.trace_csv())
    rep = result.report(study.space)
    rep["variant"] = config.variant
    rep["metric"] = study.metric
    study.write_json("tune.json", rep)
    study.write_execution()
    if result.flags:
        raise ExecutionFailed(f"{len(result.flags)} evaluation problems during tuning")
    return result
