"""Manager-worker execution of compact graphs over a storage hierarchy.

Workers are simulated inside one process on a virtual clock: stage functions
really run, but time advances by a cost model (ns per byte for every storage
level plus per-stage compute cost).  This makes schedules, hit rates and
reports deterministic for a given configuration.

Storage levels are either *local* (one private instance per worker) or
*global* (shared).  Writes go to the fastest level that can hold the region;
overflow demotes victims chosen by the level's FIFO/LRU policy to the next
level down.
"""
from __future__ import annotations

import csv
import heapq
import io
import json
import os
import pickle
import time
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable

import numpy as np

from .errors import ConfigError, MissingRegionError, UnstorableError
from .graph import CompactGraph, Vertex

POLICIES = ("fifo", "lru")


@dataclass(frozen=True)
class LevelConfig:
    device: str = "ram"
    capacity: int = 1 << 30
    path: str | None = None
    visibility: str = "local"
    policy: str = "lru"
    latency: float = 1.0  # ns per byte

    def __post_init__(self) -> None:
        if self.visibility not in ("local", "global"):
            raise ConfigError(f"visibility must be local or global, not {self.visibility!r}")
        if self.policy not in POLICIES:
            raise ConfigError(f"policy must be one of {POLICIES}, not {self.policy!r}")
        if self.capacity <= 0:
            raise ConfigError("capacity must be positive")

    @classmethod
    def from_dict(cls, d: dict) -> "LevelConfig":
        keymap = {
            "device-type": "device",
            "device": "device",
            "capacity-bytes": "capacity",
            "capacity": "capacity",
            "path": "path",
            "visibility": "visibility",
            "policy": "policy",
            "latency-ns-per-byte": "latency",
            "latency": "latency",
        }
        unknown = set(d) - set(keymap)
        if unknown:
            raise ConfigError(f"unknown storage level fields {sorted(unknown)}")
        return cls(**{keymap[k]: v for k, v in d.items()})


DEFAULT_STORAGE = [
    LevelConfig("ram", 64 << 20, None, "local", "lru", 0.1),
    LevelConfig("ssd", 1 << 30, None, "global", "fifo", 1.0),
    LevelConfig("disk", 1 << 40, None, "global", "fifo", 5.0),
]


def load_storage_config(source: str | os.PathLike | list | None) -> list[LevelConfig]:
    """Levels from a JSON file path, a list of dicts, or the default."""
    if source is None:
        return list(DEFAULT_STORAGE)
    if isinstance(source, (str, os.PathLike)):
        with open(source) as fh:
            data = json.load(fh)
        if isinstance(data, dict):
            data = data.get("levels", data)
    else:
        data = source
    levels = [lv if isinstance(lv, LevelConfig) else LevelConfig.from_dict(lv) for lv in data]
    if not levels:
        raise ConfigError("storage hierarchy needs at least one level")
    return levels


def payload_size(payload: Any) -> int:
    if isinstance(payload, np.ndarray):
        return int(payload.nbytes)
    if hasattr(payload, "pixels"):
        return int(payload.pixels.nbytes)
    if isinstance(payload, (float, int, np.floating, np.integer)):
        return 8
    if isinstance(payload, (bytes, bytearray)):
        return len(payload)
    return len(pickle.dumps(payload))


@dataclass
class DataRegion:
    id: str
    payload: Any
    size: int
    producer: int = -1

    @classmethod
    def of(cls, rid: str, payload: Any, producer: int = -1) -> "DataRegion":
        if isinstance(payload, np.ndarray):
            payload = payload.view()
            payload.setflags(write=False)
        return cls(rid, payload, payload_size(payload), producer)


class StorageLevel:
    """One storage tier instance.  Entry order is the eviction order."""

    def __init__(self, config: LevelConfig, position: int, owner: int | None = None):
        self.config = config
        self.position = position
        self.owner = owner  # worker id for local levels, None for global
        self.entries: OrderedDict[str, DataRegion] = OrderedDict()
        self.occupied = 0
        self._dir: Path | None = None
        if config.path:
            suffix = f"w{owner}" if owner is not None else "global"
            self._dir = Path(config.path) / f"L{position}-{suffix}"
            self._dir.mkdir(parents=True, exist_ok=True)

    @property
    def capacity(self) -> int:
        return self.config.capacity

    @property
    def free(self) -> int:
        return self.capacity - self.occupied

    def __contains__(self, rid: str) -> bool:
        return rid in self.entries

    def insert(self, region: DataRegion) -> None:
        if region.size > self.free:
            raise UnstorableError(f"level {self.position} has no room for {region.id}")
        stored = region
        if self._dir is not None:
            fname = self._dir / (_safe(region.id) + ".pkl")
            with open(fname, "wb") as fh:
                pickle.dump(region.payload, fh, protocol=5)
            stored = DataRegion(region.id, fname, region.size, region.producer)
        self.entries[region.id] = stored
        self.occupied += region.size

    def read(self, rid: str, touch: bool = True) -> DataRegion:
        r = self.entries[rid]
        if touch and self.config.policy == "lru":
            self.entries.move_to_end(rid)
        if self._dir is not None:
            with open(r.payload, "rb") as fh:
                return DataRegion(r.id, pickle.load(fh), r.size, r.producer)
        return r

    def remove(self, rid: str) -> DataRegion:
        region = self.read(rid, touch=False)
        stored = self.entries.pop(rid)
        self.occupied -= stored.size
        if self._dir is not None:
            os.unlink(stored.payload)
        return region

    def victims(self) -> list[str]:
        return list(self.entries)

    def access(self, rid: str, size: int = 1) -> bool:
        """Cache-style access: True on hit; on miss insert, discarding victims."""
        if rid in self.entries:
            self.read(rid)
            return True
        if size > self.capacity:
            return False
        while self.free < size:
            self.remove(next(iter(self.entries)))
        self.insert(DataRegion(rid, None, size))
        return False


def _safe(rid: str) -> str:
    return "".join(c if c.isalnum() or c in "-_." else "_" for c in rid)


@dataclass
class Event:
    time: float
    worker: int
    event: str
    region: str
    level: int | str
    case: int | str = ""
    occupied: int | str = ""
    capacity: int | str = ""


class StorageHierarchy:
    def __init__(self, levels: Iterable[LevelConfig | dict], workers: int = 1):
        self.configs = [lv if isinstance(lv, LevelConfig) else LevelConfig.from_dict(lv) for lv in levels]
        if not self.configs:
            raise ConfigError("storage hierarchy needs at least one level")
        self.workers = workers
        self.global_levels: dict[int, StorageLevel] = {}
        self.local_levels: list[dict[int, StorageLevel]] = [dict() for _ in range(workers)]
        for pos, cfg in enumerate(self.configs):
            if cfg.visibility == "global":
                self.global_levels[pos] = StorageLevel(cfg, pos)
            else:
                for w in range(workers):
                    self.local_levels[w][pos] = StorageLevel(cfg, pos, owner=w)
        self.remaining: dict[str, int] = {}  # region -> consumers still to read it
        self.events: list[Event] = []
        self.clock = 0.0
        n = len(self.configs)
        self.hits = [0] * n
        self.misses = [0] * n
        self.bytes_staged = [0] * n
        self.cases = {1: 0, 2: 0, 3: 0}
        self.gets = 0

    def view(self, worker: int) -> list[StorageLevel]:
        out = []
        for pos in range(len(self.configs)):
            if pos in self.global_levels:
                out.append(self.global_levels[pos])
            else:
                out.append(self.local_levels[worker][pos])
        return out

    def all_levels(self) -> list[StorageLevel]:
        out = list(self.global_levels.values())
        for d in self.local_levels:
            out.extend(d.values())
        return out

    def _log(self, worker: int, event: str, rid: str, level, case="", lvl: StorageLevel | None = None) -> None:
        occ = cap = ""
        if lvl is not None:
            occ, cap = lvl.occupied, lvl.capacity
        self.events.append(Event(self.clock, worker, event, rid, level, case, occ, cap))

    def locate(self, rid: str) -> list[StorageLevel]:
        return [lvl for lvl in self.all_levels() if rid in lvl]

    def _exhausted(self, rid: str) -> bool:
        return self.remaining.get(rid, 0) <= 0

    def put(
        self,
        region: DataRegion,
        worker: int = 0,
        start: int = 0,
        consumers: int | None = None,
        global_only: bool = False,
    ) -> tuple[int, float]:
        """Store ``region`` in the fastest level (from ``start``) with room.

        Returns ``(position, cost_ns)``.
        """
        if consumers is not None:
            self.remaining[region.id] = consumers
        view = self.view(worker)
        for i in range(start, len(view)):
            lvl = view[i]
            if region.size > lvl.capacity or (global_only and lvl.owner is not None):
                continue
            cost = self._make_room(lvl, view, i, region.size, worker)
            if cost is None:
                continue
            lvl.insert(region)
            self.bytes_staged[lvl.position] += region.size
            self._log(worker, "put", region.id, lvl.position, lvl=lvl)
            return lvl.position, cost + region.size * lvl.config.latency
        raise UnstorableError(f"region {region.id} ({region.size} bytes) fits in no storage level")

    def _next_below(self, lvl: StorageLevel, view: list[StorageLevel], i: int) -> int | None:
        for j in range(i + 1, len(view)):
            if lvl.owner is None and view[j].owner is not None:
                continue  # shared data is never demoted into a private level
            return j
        return None

    def _make_room(self, lvl, view, i, size, worker) -> float | None:
        if lvl.free >= size:
            return 0.0
        below = self._next_below(lvl, view, i)
        if below is None:
            # lowest level: only regions nobody will read again may be dropped
            candidates = [rid for rid in lvl.victims() if self._exhausted(rid)]
            freed = sum(lvl.entries[r].size for r in candidates)
            if lvl.free + freed < size:
                return None
            for rid in candidates:
                if lvl.free >= size:
                    break
                lvl.remove(rid)
                self._log(worker, "delete", rid, lvl.position, lvl=lvl)
            return 0.0
        cost = 0.0
        for rid in lvl.victims():
            if lvl.free >= size:
                break
            victim = lvl.remove(rid)
            self._log(worker, "evict", rid, lvl.position, lvl=lvl)
            _, c = self.put(victim, worker, start=below, global_only=lvl.owner is None)
            cost += c
        return cost if lvl.free >= size else None

    def get(self, rid: str, worker: int) -> tuple[Any, int, int, float]:
        """Fetch a region for ``worker``: ``(payload, case, position, cost_ns)``.

        case 1: in the worker's own local levels; case 2: in a global level;
        case 3: only in another worker's local level, so it is first moved to
        a global level.
        """
        self.gets += 1
        view = self.view(worker)
        glob = [lvl for lvl in view if lvl.owner is None]
        for lvl in view:
            if rid in lvl and (lvl.owner == worker or lvl.owner is None):
                region = lvl.read(rid)
                case = 1 if lvl.owner == worker else 2
                self._account(view, lvl.position, case)
                self._log(worker, "get", rid, lvl.position, case)
                return region.payload, case, lvl.position, region.size * lvl.config.latency
        for other in range(self.workers):
            if other == worker:
                continue
            for lvl in self.local_levels[other].values():
                if rid in lvl:
                    if not glob:
                        raise UnstorableError("case-3 retrieval needs a global storage level")
                    region = lvl.remove(rid)
                    self._log(other, "promote", rid, lvl.position, lvl=lvl)
                    pos, wcost = self.put(region, other, start=glob[0].position, global_only=True)
                    target = self.global_levels[pos]
                    target.read(rid)
                    self._account(view, pos, 3)
                    self._log(worker, "get", rid, pos, 3)
                    cost = region.size * lvl.config.latency + wcost + region.size * target.config.latency
                    return region.payload, 3, pos, cost
        raise MissingRegionError(f"region {rid} is not stored anywhere")

    def _account(self, view, position: int, case: int) -> None:
        self.cases[case] += 1
        for lvl in view:
            if lvl.position < position:
                self.misses[lvl.position] += 1
        self.hits[position] += 1

    def consumed(self, rid: str) -> None:
        if rid in self.remaining:
            self.remaining[rid] -= 1

    def resident_local_bytes(self, rids: Iterable[str], worker: int) -> int:
        total = 0
        for rid in rids:
            for lvl in self.local_levels[worker].values():
                if rid in lvl:
                    total += lvl.entries[rid].size
                    break
        return total

    def check_capacity(self) -> bool:
        return all(lvl.occupied <= lvl.capacity for lvl in self.all_levels())


@dataclass
class StageInstance:
    vertex: Vertex
    seq: int
    unresolved: int
    state: str = "blocked"
    worker: int | None = None
    ready_time: float = 0.0
    start: float = 0.0
    end: float = 0.0

    @property
    def region(self) -> str:
        return region_id(self.vertex)


def region_id(v: Vertex) -> str:
    return f"{v.name}:0:{v.key[:16]}"


@dataclass
class CostModel:
    """Virtual-time costs.  Compute time = fixed + per_input_byte * input bytes."""

    fixed_ns: float = 1.0e5
    per_input_byte_ns: float = 1.0
    per_stage_ns: dict[str, float] = field(default_factory=dict)

    def compute(self, v: Vertex, input_bytes: int) -> float:
        if v.name in self.per_stage_ns:
            return self.per_stage_ns[v.name]
        return self.fixed_ns + self.per_input_byte_ns * input_bytes


@dataclass
class ExecutionReport:
    scheduler: str
    workers: int
    executed: int
    executions_per_worker: list[int]
    order: list[str]
    assignment: dict[str, int]
    hits: list[int]
    misses: list[int]
    bytes_staged: list[int]
    cases: dict[int, int]
    gets: int
    makespan_ns: float
    wall_time: float
    failures: dict[str, str]
    cancelled: list[str]
    outputs: dict[str, Any] = field(repr=False, default_factory=dict)
    events: list[Event] = field(repr=False, default_factory=list)
    capacity_ok: bool = True

    @property
    def level0_hit_rate(self) -> float:
        return self.hits[0] / self.gets if self.gets else 0.0

    def summary(self) -> dict:
        return {
            "scheduler": self.scheduler,
            "workers": self.workers,
            "executed": self.executed,
            "executions_per_worker": self.executions_per_worker,
            "hits_per_level": self.hits,
            "misses_per_level": self.misses,
            "bytes_staged_per_level": self.bytes_staged,
            "retrieval_cases": {str(k): v for k, v in self.cases.items()},
            "gets": self.gets,
            "level0_hit_rate": self.level0_hit_rate,
            "simulated_time_ns": self.makespan_ns,
            "wall_time_s": self.wall_time,
            "failures": self.failures,
            "cancelled": self.cancelled,
            "capacity_ok": self.capacity_ok,
        }

    def events_csv(self) -> str:
        return events_csv(self.events)


def events_csv(events: Iterable[Event]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["timestamp_ns", "worker", "event", "region", "level", "case", "occupied", "capacity"])
    for e in events:
        w.writerow([f"{e.time:.1f}", e.worker, e.event, e.region, e.level, e.case, e.occupied, e.capacity])
    return buf.getvalue()


Executor = Callable[[Vertex, list], Any]


def _default_exec(v: Vertex, inputs: list) -> Any:
    return v.stage.fn(v.param_dict(), *inputs)


class Manager:
    """Scheduling state: ready list, per-worker preferred queues (DLAS)."""

    def __init__(self, graph: CompactGraph, workers: int, scheduler: str, storage: StorageHierarchy):
        if scheduler not in ("fcfs", "dlas"):
            raise ConfigError(f"scheduler must be fcfs or dlas, not {scheduler!r}")
        self.scheduler = scheduler
        self.storage = storage
        self.instances: dict[str, StageInstance] = {}
        for seq, v in enumerate(graph.topological()):
            deps = sum(1 for p in v.parents if p.stage is not None)
            self.instances[v.key] = StageInstance(v, seq, deps)
        self.ready: list[tuple[float, int, str]] = []  # heap of (ready time, seq, key)
        self._ready_keys: set[str] = set()
        self.preferred: list[list[tuple[int, float, int, str]]] = [[] for _ in range(workers)]
        self.queue_of: dict[str, int] = {}
        self._enq = 0
        for inst in self.instances.values():
            if inst.unresolved == 0:
                self._make_ready(inst, 0.0)

    def _make_ready(self, inst: StageInstance, now: float) -> None:
        inst.state = "ready"
        inst.ready_time = now
        heapq.heappush(self.ready, (now, inst.seq, inst.vertex.key))
        self._ready_keys.add(inst.vertex.key)

    def _take(self, key: str) -> StageInstance:
        self._ready_keys.discard(key)
        w = self.queue_of.pop(key, None)
        if w is not None:
            self.preferred[w] = [e for e in self.preferred[w] if e[3] != key]
        inst = self.instances[key]
        inst.state = "running"
        return inst

    def schedule_next(self, worker: int) -> StageInstance | None:
        if self.scheduler == "dlas":
            for entry in self.preferred[worker]:
                key = entry[3]
                if key in self._ready_keys:
                    return self._take(key)
        while self.ready:
            _, _, key = heapq.heappop(self.ready)
            if key in self._ready_keys:
                return self._take(key)
        return None

    def complete(self, inst: StageInstance, worker: int, now: float) -> None:
        inst.state = "done"
        for child in inst.vertex.children:
            c = self.instances[child.key]
            c.unresolved -= 1
            if c.unresolved == 0 and c.state == "blocked":
                self._make_ready(c, now)
        if self.scheduler == "dlas":
            for child in inst.vertex.children:
                c = self.instances[child.key]
                if c.state not in ("blocked", "ready"):
                    continue
                reuse = self.storage.resident_local_bytes(
                    [region_id(p) for p in child.parents if p.stage is not None], worker
                )
                self._enqueue(child.key, worker, reuse)

    def _enqueue(self, key: str, worker: int, reuse: int) -> None:
        old = self.queue_of.get(key)
        if old is not None:
            self.preferred[old] = [e for e in self.preferred[old] if e[3] != key]
        self._enq += 1
        q = self.preferred[worker]
        q.append((-reuse, self.instances[key].seq, self._enq, key))
        q.sort()
        self.queue_of[key] = worker

    def cancel_descendants(self, inst: StageInstance) -> list[str]:
        out = []
        stack = list(inst.vertex.children)
        while stack:
            v = stack.pop()
            c = self.instances[v.key]
            if c.state in ("cancelled", "done", "failed"):
                continue
            c.state = "cancelled"
            self._ready_keys.discard(v.key)
            w = self.queue_of.pop(v.key, None)
            if w is not None:
                self.preferred[w] = [e for e in self.preferred[w] if e[3] != v.key]
            out.append(v.key)
            stack.extend(v.children)
        return out


def run(
    graph: CompactGraph,
    workers: int = 1,
    storage: list | str | None = None,
    scheduler: str = "fcfs",
    costs: CostModel | None = None,
    executor: Executor | None = None,
) -> ExecutionReport:
    """Execute every vertex of ``graph`` once on ``workers`` simulated workers.

    Workers ask the manager for work whenever idle.  A worker finishing a
    stage asks again right away, ahead of workers that were already parked.
    """
    if workers < 1:
        raise ConfigError("need at least one worker")
    t0 = time.perf_counter()
    costs = costs or CostModel()
    executor = executor or _default_exec
    store = StorageHierarchy(load_storage_config(storage), workers)
    mgr = Manager(graph, workers, scheduler, store)

    events: list[tuple[float, int, int, str, bool]] = []  # time, seq, worker, key, written
    results: dict[str, Any] = {}
    errors: dict[str, str] = {}
    failures: dict[str, str] = {}
    cancelled: list[str] = []
    order: list[str] = []
    assignment: dict[str, int] = {}
    per_worker = [0] * workers
    idle: list[int] = list(range(workers))
    seq = 0
    now = 0.0

    def dispatch(worker: int) -> bool:
        nonlocal seq
        inst = mgr.schedule_next(worker)
        if inst is None:
            return False
        v = inst.vertex
        inst.worker = worker
        inst.start = now
        store.clock = now
        cost = 0.0
        inputs = []
        in_bytes = 0
        for p in v.parents:
            if p.stage is None:
                continue
            payload, _, _, c = store.get(region_id(p), worker)
            store.consumed(region_id(p))
            inputs.append(payload)
            in_bytes += payload_size(payload)
            cost += c
        try:
            results[v.key] = executor(v, inputs)
        except Exception as exc:  # noqa: BLE001 - a failed stage must not stop the run
            errors[v.key] = repr(exc)
        cost += costs.compute(v, in_bytes)
        order.append(v.key)
        assignment[v.key] = worker
        per_worker[worker] += 1
        seq += 1
        store._log(worker, "start", region_id(v), "")
        heapq.heappush(events, (now + cost, seq, worker, v.key, False))
        return True

    while True:
        still_idle = []
        for w in idle:
            if not dispatch(w):
                still_idle.append(w)
        idle = still_idle
        if not events:
            break
        now, _, worker, key, written = heapq.heappop(events)
        store.clock = now
        inst = mgr.instances[key]
        inst.end = now
        v = inst.vertex
        if key in errors:
            inst.state = "failed"
            failures[v.label] = errors[key]
            store._log(worker, "fail", region_id(v), "")
            cancelled.extend(mgr.instances[k].vertex.label for k in mgr.cancel_descendants(inst))
        elif not written and v.children:
            # the worker stays busy until its output is stored
            region = DataRegion.of(region_id(v), results[key], worker)
            _, wcost = store.put(region, worker, consumers=len(v.children))
            seq += 1
            heapq.heappush(events, (now + wcost, seq, worker, key, True))
            continue
        else:
            store._log(worker, "done", region_id(v), "")
            mgr.complete(inst, worker, now)
        idle.insert(0, worker)

    sinks = {v.key: results[v.key] for v in graph.sinks() if v.key in results and v.key not in errors}
    makespan = max((i.end for i in mgr.instances.values()), default=0.0)
    return ExecutionReport(
        scheduler=scheduler,
        workers=workers,
        executed=len(order),
        executions_per_worker=per_worker,
        order=order,
        assignment=assignment,
        hits=store.hits,
        misses=store.misses,
        bytes_staged=store.bytes_staged,
        cases=dict(store.cases),
        gets=store.gets,
        makespan_ns=makespan,
        wall_time=time.perf_counter() - t0,
        failures=failures,
        cancelled=sorted(cancelled),
        outputs=sinks,
        events=store.events,
        capacity_ok=store.check_capacity(),
    )


def capacity_respected(events: Iterable[Event]) -> bool:
    """Replay an event log and check every logged occupancy against capacity."""
    return all(e.occupied <= e.capacity for e in events if e.capacity != "")
