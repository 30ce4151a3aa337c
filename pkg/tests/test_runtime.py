import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from paramstudy.errors import ConfigError, MissingRegionError, UnstorableError
from paramstudy.graph import StageDecl, Workflow, build_compact, build_replica
from paramstudy.runtime import (
    CostModel,
    DataRegion,
    LevelConfig,
    StorageHierarchy,
    StorageLevel,
    capacity_respected,
    load_storage_config,
    region_id,
    run,
)
from paramstudy.space import ParamSet, ParameterAxis, ParameterSpace


def level(cap, vis="local", policy="lru", latency=1.0, **kw):
    return LevelConfig(capacity=cap, visibility=vis, policy=policy, latency=latency, **kw)


def blob(name, n=10):
    return DataRegion.of(name, np.zeros(n, dtype=np.uint8))


class TestLevelPolicies:
    @pytest.mark.parametrize("policy,hits", [("fifo", 1), ("lru", 2)])
    def test_scripted_trace(self, policy, hits):
        lvl = StorageLevel(level(2, policy=policy), 0)
        got = sum(lvl.access(r) for r in "ABACA")
        assert got == hits

    @settings(max_examples=50, deadline=None)
    @given(st.integers(2, 6), st.integers(2, 5))
    def test_cyclic_rereference_lru_not_worse(self, cap, others):
        # A x1 A x2 A ... : one hot region interleaved with cold ones
        trace = []
        for i in range(others * 3):
            trace += ["A", f"x{i % others}"]
        hits = {}
        for policy in ("fifo", "lru"):
            lvl = StorageLevel(level(cap, policy=policy), 0)
            hits[policy] = sum(lvl.access(r) for r in trace)
        assert hits["lru"] >= hits["fifo"]


class TestPut:
    def test_empty_hierarchy_goes_to_level0(self):
        h = StorageHierarchy([level(100), level(1000, "global")])
        assert h.put(blob("a"))[0] == 0

    def test_fifo_demotes_oldest(self):
        h = StorageHierarchy([level(20, policy="fifo"), level(1000, "global")])
        for r in "ABC":
            h.put(blob(r))
        assert "A" in h.global_levels[1] and "A" not in h.local_levels[0][0]
        assert [e.event for e in h.events].count("evict") == 1

    def test_unstorable(self):
        h = StorageHierarchy([level(5), level(8, "global")])
        with pytest.raises(UnstorableError):
            h.put(blob("big", 10))

    def test_lowest_level_deletes_only_consumed(self):
        h = StorageHierarchy([level(20, "global", "fifo")])
        h.put(blob("a"), consumers=1)
        h.put(blob("b"), consumers=1)
        with pytest.raises(UnstorableError):
            h.put(blob("c"), consumers=1)
        h.get("a", 0)
        h.consumed("a")
        h.put(blob("c"), consumers=1)
        assert "a" not in h.global_levels[0] and "b" in h.global_levels[0]

    def test_capacity_never_exceeded(self):
        h = StorageHierarchy([level(25), level(50, "global", "fifo"), level(10**6, "global")], workers=2)
        rng = np.random.default_rng(0)
        for i in range(200):
            h.put(blob(f"r{i}", int(rng.integers(1, 20))), worker=int(rng.integers(0, 2)), consumers=0)
            assert h.check_capacity()
        assert capacity_respected(h.events)

    def test_persistent_level(self, tmp_path):
        h = StorageHierarchy([level(10**6, "global", path=str(tmp_path))])
        payload = np.arange(7, dtype=np.int64)
        h.put(DataRegion.of("x:0:abc", payload))
        assert list(tmp_path.rglob("*.pkl"))
        got, case, pos, _ = h.get("x:0:abc", 0)
        assert np.array_equal(got, payload) and case == 2 and pos == 0

    def test_payload_read_only(self):
        r = DataRegion.of("a", np.zeros(3))
        with pytest.raises(ValueError):
            r.payload[0] = 1


class TestGet:
    def hierarchy(self):
        return StorageHierarchy([level(1000), level(10**6, "global")], workers=2)

    def test_case1_local(self):
        h = self.hierarchy()
        h.put(blob("a"), worker=0)
        assert h.get("a", 0)[1] == 1

    def test_case2_global(self):
        h = self.hierarchy()
        h.put(blob("a"), worker=0, start=1)
        assert h.get("a", 1)[1] == 2

    def test_case3_promotes(self):
        h = self.hierarchy()
        h.put(blob("a"), worker=0)
        _, case, pos, _ = h.get("a", 1)
        assert case == 3 and pos == 1
        assert "a" in h.global_levels[1] and "a" not in h.local_levels[0][0]
        assert h.get("a", 0)[1] == 2

    def test_missing(self):
        with pytest.raises(MissingRegionError):
            self.hierarchy().get("nothing", 0)

    def test_level0_hit_touches_nothing_below(self):
        h = self.hierarchy()
        h.put(blob("a"))
        h.get("a", 0)
        assert h.hits == [1, 0] and h.misses == [0, 0]


def test_storage_config_file(tmp_path):
    cfg = tmp_path / "storage.json"
    cfg.write_text(json.dumps({"levels": [
        {"device-type": "ram", "capacity-bytes": 1024, "visibility": "local", "policy": "lru", "latency-ns-per-byte": 0.1},
        {"device-type": "ssd", "capacity-bytes": 4096, "visibility": "global", "policy": "fifo", "latency-ns-per-byte": 1},
    ]}))
    levels = load_storage_config(str(cfg))
    assert [lv.device for lv in levels] == ["ram", "ssd"] and levels[1].policy == "fifo"
    with pytest.raises(ConfigError):
        LevelConfig.from_dict({"capacity-bytes": 1, "speed": 3})


# ---------------------------------------------------------------- execution


def array_stage(name, axes=(), inputs=(), size=1000):
    def fn(params, *xs):
        base = sum(int(x.sum()) for x in xs) + sum(hash(str(v)) % 7 for v in params.values())
        return np.full(size, base % 251, dtype=np.uint8)

    return StageDecl(name, axes, inputs, fn=fn)


def space(n, levels=40):
    return ParameterSpace(ParameterAxis(f"p{j}", "integer-grid", 0, levels - 1, 1) for j in range(n))


def chain3():
    return Workflow([
        array_stage("normalize", ("p0",), size=4000),
        array_stage("segment", ("p1",), ("normalize",), size=2000),
        array_stage("compare", ("p2",), ("segment",), size=8),
    ])


STORAGE = [
    {"device": "ram", "capacity": 64_000, "visibility": "local", "policy": "lru", "latency": 0.1},
    {"device": "ssd", "capacity": 10**9, "visibility": "global", "policy": "fifo", "latency": 1.0},
]


def check_safety(rep, graph):
    pos = {}
    for i, e in enumerate(rep.events):
        if e.event in ("start", "done"):
            pos[(e.event, e.region)] = i
    for v in graph.vertices.values():
        for p in v.parents:
            if p.stage is not None:
                assert pos[("done", region_id(p))] < pos[("start", region_id(v))]


class TestRun:
    def test_single_worker_topological(self):
        g = build_compact(chain3(), space(3), [ParamSet((0, i, 0)) for i in range(4)])
        rep = run(g, workers=1)
        assert rep.executed == len(g) == 9
        check_safety(rep, g)

    def test_compact_vs_replica_executions(self):
        sets = [ParamSet((0, i, i)) for i in range(8)]
        assert run(build_compact(chain3(), space(3), sets), 2).executed == 17
        assert run(build_replica(chain3(), space(3), sets), 2).executed == 24

    def test_no_worker_starves(self):
        wf = Workflow([array_stage("solo", ("p0",))])
        g = build_compact(wf, space(1, 64), [ParamSet((i,)) for i in range(64)])
        rep = run(g, workers=4)
        assert all(n >= 1 for n in rep.executions_per_worker)
        assert sum(rep.executions_per_worker) == 64

    def two_families(self):
        wf = Workflow([
            array_stage("src", ("p0",), size=5000),
            array_stage("dep", ("p1",), ("src",), size=10),
        ])
        sets = [ParamSet((f, d)) for f in range(2) for d in range(4)]
        return build_compact(wf, space(2), sets)

    def test_dlas_keeps_dependents_with_producer(self):
        g = self.two_families()
        rep = run(g, workers=2, storage=STORAGE, scheduler="dlas")
        for src in (v for v in g.vertices.values() if v.name == "src"):
            owners = {rep.assignment[c.key] for c in src.children}
            assert owners == {rep.assignment[src.key]}

    def test_fcfs_splits_dependents(self):
        g = self.two_families()
        rep = run(g, workers=2, storage=STORAGE, scheduler="fcfs")
        split = [
            len({rep.assignment[c.key] for c in src.children}) > 1
            for src in g.vertices.values() if src.name == "src"
        ]
        assert any(split)

    def test_dlas_beats_fcfs_hit_rate(self):
        g = self.two_families()
        f = run(g, 2, STORAGE, "fcfs")
        d = run(g, 2, STORAGE, "dlas")
        assert d.level0_hit_rate > f.level0_hit_rate
        assert d.makespan_ns <= f.makespan_ns

    def test_failure_cancels_dependents_only(self):
        def bad(params):
            if params["p0"] == 1:
                raise RuntimeError("stage crashed")
            return np.zeros(10, dtype=np.uint8)

        wf = Workflow([StageDecl("a", ("p0",), fn=bad), array_stage("b", ("p1",), ("a",))])
        g = build_compact(wf, space(2), [ParamSet((0, 0)), ParamSet((1, 0)), ParamSet((1, 1))])
        rep = run(g, workers=2)
        assert list(rep.failures) == ["a(p0=1)"]
        assert rep.cancelled == ["b(p1=0)", "b(p1=1)"]
        assert len(rep.outputs) == 1

    def test_deterministic(self):
        g = self.two_families()
        a = run(g, 2, STORAGE, "dlas")
        b = run(g, 2, STORAGE, "dlas")
        assert a.events_csv() == b.events_csv()
        sa, sb = a.summary(), b.summary()
        sa.pop("wall_time_s"), sb.pop("wall_time_s")
        assert sa == sb

    def test_bad_scheduler(self):
        g = self.two_families()
        with pytest.raises(ConfigError):
            run(g, 1, scheduler="random")

    def test_events_csv_header(self):
        rep = run(self.two_families(), 1)
        assert rep.events_csv().splitlines()[0] == "timestamp_ns,worker,event,region,level,case,occupied,capacity"


@st.composite
def dag_workloads(draw):
    n = draw(st.integers(1, 5))
    stages = []
    for j in range(n):
        parents = draw(st.sets(st.integers(0, j - 1), max_size=min(j, 3))) if j else set()
        size = draw(st.integers(1, 3000))
        stages.append(array_stage(f"s{j}", (f"p{j}",), tuple(f"s{p}" for p in sorted(parents)), size=size))
    m = draw(st.integers(1, 6))
    sets = [ParamSet(tuple(draw(st.integers(0, 2)) for _ in range(n))) for _ in range(m)]
    return Workflow(stages), n, sets


@settings(max_examples=50, deadline=None)
@given(
    dag_workloads(),
    st.integers(1, 4),
    st.sampled_from(["fcfs", "dlas"]),
    st.integers(3000, 20000),
    st.sampled_from(["fifo", "lru"]),
)
def test_fuzzed_runs_safe_and_within_capacity(work, workers, sched, cap, policy):
    wf, n, sets = work
    g = build_compact(wf, space(n, 3), sets)
    storage = [
        {"capacity": cap, "visibility": "local", "policy": policy, "latency": 0.1},
        {"capacity": cap * 2, "visibility": "global", "policy": policy, "latency": 1.0},
        {"capacity": 10**9, "visibility": "global", "policy": "fifo", "latency": 5.0},
    ]
    rep = run(g, workers, storage, sched, CostModel(fixed_ns=1000))
    assert rep.executed == len(g)
    assert rep.capacity_ok and capacity_respected(rep.events)
    check_safety(rep, g)
