"""Acceptance suite: one check per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v`` or directly with
``python tests/test_acceptance.py``.
"""
import contextlib
import io
import itertools
import sys
import tempfile
from pathlib import Path

import numpy as np
import pytest

from paramstudy import sa
from paramstudy.autotune import TuneConfig, tune
from paramstudy.bench import (
    DEFAULT_PARAMS,
    SceneSpec,
    reference_mask,
    render_scene,
    synthetic_space,
    synthetic_workflow,
    watershed_space,
)
from paramstudy.cli import main as cli_main
from paramstudy.graph import StageDecl, Workflow, build_compact, build_replica, replay_equivalence
from paramstudy.runtime import StorageLevel, LevelConfig, capacity_respected, run
from paramstudy.space import (
    ParameterAxis,
    ParameterSpace,
    SampleDesign,
    sample_lhs,
    sample_morris,
    sample_saltelli,
)
from paramstudy.spatial import dice, extract_objects, jaccard, overlap_ratio, pixel_diff, spatial_join
from paramstudy.study import Study, load_config

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def report(n, ok, detail, out=None):
    line = f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}"
    print(line, file=out or sys.stdout, flush=True)
    return ok


def grid(k, levels=11):
    return ParameterSpace(ParameterAxis(f"u{i + 1}", "integer-grid", 0, levels - 1, 1) for i in range(k))


def values(design, f):
    return sa.ResultTable(design, np.array([f(u) for u in design.unit()]))


# ---------------------------------------------------------------- criteria


def criterion_1():
    got = {
        "morris k=15 r=15": len(sample_morris(watershed_space(), r=15, seed=0)),
        "morris k=7 r=5": len(sample_morris(grid(7), r=5, seed=0)),
        "saltelli k=8 n=200": len(sample_saltelli(grid(8), 200, seed=0)),
        "lhs n=400": len(sample_lhs(grid(4), 400, seed=0)),
    }
    want = [240, 40, 2000, 400]
    return list(got.values()) == want, ", ".join(f"{k} -> {v}" for k, v in got.items())


def criterion_2():
    d = sample_morris(grid(3, 21), r=12, seed=9)
    lin = sa.moat(values(d, lambda u: 3 * u[0] + u[1] + 0 * u[2]))
    inter = sa.moat(values(sample_morris(grid(3, 21), r=20, seed=2), lambda u: u[0] * u[1]))
    ok = (
        np.allclose(lin.mu_star, [3, 1, 0], atol=1e-9, rtol=0)
        and np.allclose(lin.sigma, 0, atol=1e-9, rtol=0)
        and inter.sigma[0] > 0
        and inter.sigma[1] > 0
    )
    return ok, (
        f"mu*={np.round(lin.mu_star, 12).tolist()} sigma={np.round(lin.sigma, 12).tolist()}; "
        f"product sigma={np.round(inter.sigma, 4).tolist()}"
    )


def criterion_3():
    add = sa.sobol(values(sample_saltelli(grid(2, 1001), 4096, seed=1), lambda u: 2 * u[0] + u[1]))
    mul = sa.sobol(values(sample_saltelli(grid(2, 1001), 4096, seed=2), lambda u: (u[0] - 0.5) * (u[1] - 0.5)))
    ok = (
        abs(add.s_i[0] - 0.8) <= 0.05
        and abs(add.s_i[1] - 0.2) <= 0.05
        and np.allclose(add.s_ti, add.s_i, atol=0.05)
        and 0.9 <= add.sum_s_i <= 1.1
        and np.all(np.abs(mul.s_i) <= 0.1)
        and np.all(np.abs(mul.s_ti - 1) <= 0.1)
    )
    return ok, (
        f"additive S={np.round(add.s_i, 3).tolist()} ST={np.round(add.s_ti, 3).tolist()} sum={add.sum_s_i:.3f}; "
        f"interaction S={np.round(mul.s_i, 3).tolist()} ST={np.round(mul.s_ti, 3).tolist()}"
    )


def criterion_4():
    d = sample_lhs(grid(2, 101), 200, seed=1)
    up = sa.correlations(values(d, lambda u: 2 * u[0] + 1))
    down = sa.correlations(values(d, lambda u: -u[0]))
    d3 = sample_lhs(grid(3, 51), 80, seed=8)
    f = lambda u: u[0] - 2 * u[1] + 0.3 * u[2] ** 2  # noqa: E731
    base = sa.correlations(values(d3, f))
    mono = [sa.correlations(values(d3, lambda u, g=g: g(f(u)))) for g in (np.exp, lambda y: y**3)]
    rank_ok = all(np.array_equal(base.rcc, m.rcc) and np.array_equal(base.prcc, m.prcc) for m in mono)
    levels = np.array(list(itertools.product(range(5), repeat=3)))
    orth = SampleDesign("monte-carlo", grid(3, 5), levels, 0)
    o = sa.correlations(values(orth, lambda u: u[0] + (u[1] - 0.5) * (u[2] - 0.5)))
    pcc_gap = float(np.max(np.abs(o.pcc - o.cc)))
    ok = abs(up.cc[0] - 1) <= 1e-9 and abs(down.cc[0] + 1) <= 1e-9 and rank_ok and pcc_gap <= 1e-9
    return ok, f"cc={up.cc[0]:.12f}/{down.cc[0]:.12f}, rank-invariant={rank_ok}, |pcc-cc|max={pcc_gap:.1e}"


def tuning_study():
    cfg = load_config(CONFIGS / "tune.json")
    return Study.from_config(cfg, base_dir=CONFIGS, out=tempfile.mkdtemp())


def criterion_5():
    study = tuning_study()
    space = study.space
    results = {}
    for variant in ("nm", "pro", "ga"):
        cfg = TuneConfig(variant=variant, budget=100, seed=study.seed)
        results[variant] = tune(space, None, cfg, batch_objective=study.evaluate)
    ga_scores = []
    for seed in range(50):
        r = tune(space, None, TuneConfig(variant="ga", budget=100, seed=seed), batch_objective=study.evaluate)
        ga_scores.append(r.best_value)
    ga = np.array(ga_scores)
    max_fraction = max(r.fraction_visited for r in results.values())
    ok = (
        space.grid_size >= 10**7
        and all(r.best_value >= 0.95 and r.evaluations <= 100 for r in results.values())
        and max_fraction <= 0.0009 / 100
        and np.isfinite(ga.std(ddof=1))
    )
    parts = [f"{v}={r.best_value:.4f} in {r.evaluations} evals" for v, r in results.items()]
    return ok, (
        f"{', '.join(parts)}; visited <= {max_fraction * 100:.2e}% of {space.grid_size:.3g} points; "
        f"GA over 50 seeds mean={ga.mean():.4f} std={ga.std(ddof=1):.4f} min={ga.min():.4f} "
        f"seeds>=0.95: {int((ga >= 0.95).sum())}/50"
    )


def chain_space():
    return ParameterSpace(ParameterAxis(f"p{j}", "integer-grid", 0, 63, 1) for j in range(3))


def criterion_6():
    wf = Workflow([
        StageDecl("a", ("p0",), fn=lambda prm: np.arange(8) * (prm["p0"] + 1)),
        StageDecl("b", ("p1",), ("a",), fn=lambda prm, x: x + prm["p1"]),
        StageDecl("c", ("p2",), ("b",), fn=lambda prm, x: float(x.sum() * prm["p2"])),
    ])
    sp = chain_space()
    scene = render_scene(SceneSpec(seed=0, width=64, height=64, count=4))
    real = synthetic_workflow([scene], [reference_mask(scene, DEFAULT_PARAMS)])
    syn = synthetic_space()
    counts, ok = [], True
    for m in (2, 4, 8, 16, 32):
        sets = [sp.validate((0, i, i)) for i in range(m)]
        c, r = len(build_compact(wf, sp, sets)), len(build_replica(wf, sp, sets))
        ok &= c == 1 + 2 * m and r == 3 * m and replay_equivalence(wf, sp, sets)
        real_sets = [syn.from_values({**DEFAULT_PARAMS.as_dict(), "threshold": 100 + i}) for i in range(m)]
        rc = len(build_compact(real, syn, real_sets, [{"tile": 0}]))
        ok &= rc == 1 + 2 * m and replay_equivalence(real, syn, real_sets, contexts=[{"tile": 0}])
        counts.append(f"m={m}:{c}/{r}")
    return ok, "compact/replica " + " ".join(counts) + f", replay equivalent={ok}"


def shared_prefix_graph():
    scenes = [render_scene(SceneSpec(seed=s, width=96, height=96, count=5)) for s in range(2)]
    refs = [reference_mask(sc, DEFAULT_PARAMS) for sc in scenes]
    wf = synthetic_workflow(scenes, refs)
    sp = synthetic_space()
    sets = [
        sp.from_values({**DEFAULT_PARAMS.as_dict(), "target_mean": tm, "threshold": 100 + 5 * t})
        for tm in (70.0, 90.0)
        for t in range(8)
    ]
    return build_compact(wf, sp, sets, [{"tile": 0}, {"tile": 1}])


STORAGE = [
    {"device": "ram", "capacity": 200_000, "visibility": "local", "policy": "lru", "latency": 0.5},
    {"device": "ssd", "capacity": 10**9, "visibility": "global", "policy": "fifo", "latency": 5.0},
]


def criterion_7():
    hits = {}
    for policy in ("lru", "fifo"):
        lvl = StorageLevel(LevelConfig(capacity=2, policy=policy), 0)
        hits[policy] = sum(lvl.access(r) for r in "ABACA")
    g = shared_prefix_graph()
    f = run(g, 2, STORAGE, "fcfs")
    d = run(g, 2, STORAGE, "dlas")
    rng = np.random.default_rng(0)
    fuzz_ok = True
    for i in range(40):
        cap = int(rng.integers(20_000, 120_000))
        storage = [
            {"capacity": cap, "visibility": "local", "policy": ["lru", "fifo"][i % 2], "latency": 0.5},
            {"capacity": 2 * cap, "visibility": "global", "policy": "lru", "latency": 2.0},
            {"capacity": 10**9, "visibility": "global", "policy": "fifo", "latency": 5.0},
        ]
        rep = run(g, int(rng.integers(1, 5)), storage, ["fcfs", "dlas"][i % 2])
        fuzz_ok &= rep.capacity_ok and capacity_respected(rep.events)
    ok = (
        hits == {"lru": 2, "fifo": 1}
        and d.level0_hit_rate > f.level0_hit_rate
        and d.makespan_ns <= f.makespan_ns
        and fuzz_ok
    )
    return ok, (
        f"LRU hits={hits['lru']} FIFO hits={hits['fifo']}; level-0 hit rate DLAS={d.level0_hit_rate:.3f} "
        f"FCFS={f.level0_hit_rate:.3f}; simulated time DLAS={d.makespan_ns:.4g} FCFS={f.makespan_ns:.4g} ns; "
        f"capacity held on 40 fuzzed runs={fuzz_ok}"
    )


def brute_join(a, b):
    both = (a.labels > 0) & (b.labels > 0)
    pairs, counts = np.unique(np.stack([a.labels[both], b.labels[both]]), axis=1, return_counts=True)
    return [(int(i), int(j), int(n)) for (i, j), n in zip(pairs.T, counts)]


def criterion_8():
    a = np.zeros((4, 4), np.uint8)
    b = np.zeros((4, 4), np.uint8)
    a[0:2, 0:2] = 255
    b[1:3, 1:3] = 255
    fixture = (dice(a, b).value, jaccard(a, b).value, overlap_ratio(b, a).value, pixel_diff(a, b).value)
    fixture_ok = fixture[0] == 0.25 and fixture[1] == 1 / 7 and fixture[2] == 0.25 and fixture[3] == 6
    rng = np.random.default_rng(11)
    join_ok = True
    worst = 0.0
    for _ in range(100):
        density = rng.uniform(0.05, 0.6)
        ma = (rng.random((64, 64)) < density).astype(np.uint8)
        mb = (rng.random((64, 64)) < density).astype(np.uint8)
        oa, ob = extract_objects(ma), extract_objects(mb)
        join_ok &= spatial_join(oa, ob) == brute_join(oa, ob)
        d = dice(ma, mb).value
        worst = max(worst, abs(jaccard(ma, mb).value - d / (2 - d)))
    for _ in range(400):
        shape = tuple(rng.integers(1, 20, 2))
        ma = rng.random(shape) < rng.random()
        mb = rng.random(shape) < rng.random()
        d = dice(ma, mb).value
        worst = max(worst, abs(jaccard(ma, mb).value - d / (2 - d)))
    ok = fixture_ok and join_ok and worst <= 1e-12
    return ok, (
        f"squares dice={fixture[0]} jaccard={fixture[1]:.6f} overlap={fixture[2]} pixel-diff={fixture[3]}; "
        f"join==brute force on 100 pairs: {join_ok}; max |jaccard - dice/(2-dice)|={worst:.1e}"
    )


def criterion_9():
    commands = {"moat": "moat.json", "correlate": "correlate.json", "vbd": "vbd.json", "tune": "tune.json", "run": "run.json"}
    same = {}
    with tempfile.TemporaryDirectory() as tmp:
        for cmd, cfg in commands.items():
            snaps = []
            for rep in ("1", "2"):
                out = Path(tmp) / cmd / rep
                with contextlib.redirect_stdout(io.StringIO()):
                    code = cli_main([cmd, "--config", str(CONFIGS / cfg), "--out", str(out)])
                snaps.append((code, {p.name: p.read_bytes() for p in sorted(out.glob("*.csv"))}))
            same[cmd] = snaps[0][0] == snaps[1][0] == 0 and bool(snaps[0][1]) and snaps[0][1] == snaps[1][1]
    ok = all(same.values())
    return ok, "byte-identical CSVs on rerun: " + ", ".join(f"{k}={v}" for k, v in same.items())


CRITERIA = [criterion_1, criterion_2, criterion_3, criterion_4, criterion_5, criterion_6, criterion_7, criterion_8, criterion_9]


@pytest.mark.parametrize("n", range(1, 10))
def test_criterion(n, capsys):
    ok, detail = CRITERIA[n - 1]()
    with capsys.disabled():
        print()
        report(n, ok, detail, out=sys.stdout)
    assert ok, detail


if __name__ == "__main__":
    results = [report(n, *fn()) for n, fn in enumerate(CRITERIA, 1)]
    sys.exit(0 if all(results) else 1)
