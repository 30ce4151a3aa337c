"""Workflow DAGs and compact-graph construction.

A workflow is a DAG of :class:`StageDecl`.  Binding it to a parameter set
gives an instance graph; :func:`build_compact` folds many instances into one
graph in which identical stage instances are shared.

Vertex identity is ``(stage name, bound parameters, identities of the
parents)`` hashed into a key, so two vertices match only when they would
compute the same thing from the same inputs.
"""
from __future__ import annotations

import hashlib
import pickle
import struct
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Sequence

import numpy as np

from .errors import ConfigError, MalformedWorkflowError, PurityViolationError
from .space import ParameterSpace, ParamSet

ROOT = "__root__"


@dataclass(frozen=True)
class StageDecl:
    name: str
    axes: tuple[str, ...] = ()
    inputs: tuple[str, ...] = ()
    pure: bool = True
    fn: Callable[..., Any] | None = field(default=None, compare=False, repr=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "axes", tuple(self.axes))
        object.__setattr__(self, "inputs", tuple(self.inputs))


class Workflow:
    def __init__(self, stages: Iterable[StageDecl]):
        self.stages: list[StageDecl] = list(stages)
        names = [s.name for s in self.stages]
        if len(set(names)) != len(names):
            raise MalformedWorkflowError("stage names must be unique; rename repeated stages")
        if ROOT in names:
            raise MalformedWorkflowError(f"{ROOT!r} is reserved")
        self.by_name = {s.name: s for s in self.stages}
        for s in self.stages:
            for i in s.inputs:
                if i not in self.by_name:
                    raise MalformedWorkflowError(f"stage {s.name!r}: unknown input {i!r}")
        self.order = self._topological()

    def _topological(self) -> list[StageDecl]:
        indeg = {s.name: len(set(s.inputs)) for s in self.stages}
        out: list[StageDecl] = []
        ready = [s for s in self.stages if indeg[s.name] == 0]
        while ready:
            s = ready.pop(0)
            out.append(s)
            for t in self.stages:
                if s.name in t.inputs:
                    indeg[t.name] -= 1
                    if indeg[t.name] == 0:
                        ready.append(t)
        if len(out) != len(self.stages):
            raise MalformedWorkflowError("workflow contains a cycle")
        return out

    @property
    def sinks(self) -> list[str]:
        used = {i for s in self.stages for i in s.inputs}
        return [s.name for s in self.stages if s.name not in used]

    def check_axes(self, space: ParameterSpace, context_names: Iterable[str] = ()) -> None:
        extra = set(context_names)
        for s in self.stages:
            for a in s.axes:
                if a not in space and a not in extra:
                    raise ConfigError(f"stage {s.name!r}: unknown axis {a!r}")


class Vertex:
    __slots__ = ("stage", "params", "key", "children", "parents", "deps", "deps_solved")

    def __init__(self, stage: StageDecl | None, params: tuple, key: str, deps: int):
        self.stage = stage
        self.params = params  # ((axis, value), ...) in stage axis order
        self.key = key
        self.children: list[Vertex] = []
        self.parents: list[Vertex] = []
        self.deps = deps
        self.deps_solved = 0

    @property
    def name(self) -> str:
        return self.stage.name if self.stage is not None else ROOT

    @property
    def label(self) -> str:
        if not self.params:
            return self.name
        return f"{self.name}(" + ",".join(f"{a}={_fmt(v)}" for a, v in self.params) + ")"

    def param_dict(self) -> dict[str, Any]:
        return dict(self.params)

    def __repr__(self) -> str:
        return f"Vertex({self.label}, deps={self.deps}, solved={self.deps_solved})"


def _fmt(v: Any) -> str:
    return f"{v:.12g}" if isinstance(v, float) else str(v)


def vertex_key(name: str, params: tuple, parent_keys: Sequence[str]) -> str:
    text = name + "|" + ",".join(f"{a}={_fmt(v)}" for a, v in params) + "|" + ",".join(sorted(parent_keys))
    return hashlib.sha1(text.encode()).hexdigest()


@dataclass
class Instance:
    root: Vertex
    by_stage: dict[str, Vertex]


def instantiate(
    workflow: Workflow,
    space: ParameterSpace,
    pset: ParamSet | Sequence[int],
    context: dict[str, Any] | None = None,
    salt: str = "",
) -> Instance:
    """Copy the workflow DAG binding every stage's axes to ``pset``.

    ``context`` supplies values for stage axes that are not part of the
    parameter space (e.g. which input tile to read).  ``salt`` makes every
    key unique, which is how the replica scheme avoids sharing.
    """
    context = context or {}
    values = space.values(pset)
    root = Vertex(None, (), ROOT, 0)
    by_stage: dict[str, Vertex] = {}
    for s in workflow.order:
        params = []
        for a in s.axes:
            if a in values:
                params.append((a, values[a]))
            elif a in context:
                params.append((a, context[a]))
            else:
                raise ConfigError(f"stage {s.name!r}: unknown axis {a!r}")
        parents = [by_stage[i] for i in dict.fromkeys(s.inputs)] or [root]
        key = vertex_key(s.name, tuple(params), [p.key for p in parents])
        if salt:
            key = hashlib.sha1((salt + key).encode()).hexdigest()
        v = Vertex(s, tuple(params), key, len(parents))
        for p in parents:
            p.children.append(v)
            v.parents.append(p)
        by_stage[s.name] = v
    return Instance(root, by_stage)


class CompactGraph:
    def __init__(self):
        self.root = Vertex(None, (), ROOT, 0)
        self.vertices: dict[str, Vertex] = {}
        self.provenance: dict[str, set[int]] = {}
        self.pending: dict[str, Vertex] = {}
        # (pset index, context index) -> stage name -> vertex key
        self.instances: dict[tuple[int, int], dict[str, str]] = {}

    def __len__(self) -> int:
        return len(self.vertices)

    def merge(self, inst: Instance) -> None:
        merge_graph(inst.root, self.root, self)

    def sinks(self) -> list[Vertex]:
        return [v for v in self.vertices.values() if not v.children]

    def edges(self) -> list[tuple[str, str]]:
        out = []
        for v in [self.root, *self.vertices.values()]:
            for c in v.children:
                out.append((v.key, c.key))
        return out

    def canonical_hash(self) -> str:
        h = hashlib.sha1()
        for k in sorted(self.vertices):
            h.update(k.encode())
        for a, b in sorted(self.edges()):
            h.update(f"{a}>{b}".encode())
        return h.hexdigest()

    def topological(self) -> list[Vertex]:
        indeg = {k: len(v.parents) for k, v in self.vertices.items()}
        out = []
        queue = list(self.root.children)
        for v in queue:
            indeg[v.key] -= 1
        queue = [v for v in queue if indeg[v.key] == 0]
        while queue:
            v = queue.pop(0)
            out.append(v)
            for c in v.children:
                indeg[c.key] -= 1
                if indeg[c.key] == 0:
                    queue.append(c)
        if len(out) != len(self.vertices):
            raise MalformedWorkflowError("compact graph contains a cycle")
        return out

    def to_dot(self) -> str:
        lines = ["digraph compact {", '  "root" [shape=point];']
        ids = {self.root.key: "root"}
        for i, v in enumerate(self.vertices.values()):
            ids[v.key] = f"v{i}"
            sets = ",".join(str(s) for s in sorted(self.provenance.get(v.key, ())))
            lines.append(f'  v{i} [label="{v.label}\\nsets: {sets}"];')
        for a, b in self.edges():
            lines.append(f"  {ids[a]} -> {ids[b]};")
        lines.append("}")
        return "\n".join(lines) + "\n"


def _clone(v: Vertex) -> Vertex:
    return Vertex(v.stage, v.params, v.key, v.deps)


def _link(parent: Vertex, child: Vertex) -> None:
    parent.children.append(child)
    child.parents.append(parent)


def merge_graph(app: Vertex, com: Vertex, graph: CompactGraph, _path: frozenset = frozenset()) -> None:
    """Merge the sub-graph below ``app`` into the compact graph below ``com``."""
    if app.key in _path:
        raise MalformedWorkflowError(f"cycle through {app.label}")
    path = _path | {app.key}
    for v in app.children:
        match = next((c for c in com.children if c.key == v.key), None)
        if match is not None:
            merge_graph(v, match, graph, path)
            continue
        pend = graph.pending.get(v.key)
        if pend is None:
            clone = _clone(v)
            clone.deps_solved = 1
            _link(com, clone)
            graph.vertices[clone.key] = clone
            if clone.deps_solved < clone.deps:
                graph.pending[clone.key] = clone
            merge_graph(v, clone, graph, path)
        else:
            _link(com, pend)
            pend.deps_solved += 1
            if pend.deps_solved == pend.deps:
                del graph.pending[pend.key]
            merge_graph(v, pend, graph, path)


def _add_instance(graph: CompactGraph, inst: Instance, pset_index: int, ctx_index: int) -> None:
    graph.merge(inst)
    for v in inst.by_stage.values():
        graph.provenance.setdefault(v.key, set()).add(pset_index)
    graph.instances[(pset_index, ctx_index)] = {n: v.key for n, v in inst.by_stage.items()}


def build_compact(
    workflow: Workflow,
    space: ParameterSpace,
    psets: Sequence[ParamSet | Sequence[int]],
    contexts: Sequence[dict] | None = None,
) -> CompactGraph:
    if not psets:
        raise ConfigError("build_compact needs at least one parameter set")
    contexts = list(contexts) if contexts else [{}]
    graph = CompactGraph()
    for i, p in enumerate(psets):
        for j, ctx in enumerate(contexts):
            _add_instance(graph, instantiate(workflow, space, p, ctx), i, j)
    return graph


def build_replica(
    workflow: Workflow,
    space: ParameterSpace,
    psets: Sequence[ParamSet | Sequence[int]],
    contexts: Sequence[dict] | None = None,
) -> CompactGraph:
    """One independent copy of the workflow per (set, context): no sharing."""
    contexts = list(contexts) if contexts else [{}]
    graph = CompactGraph()
    for i, p in enumerate(psets):
        for j, ctx in enumerate(contexts):
            _add_instance(graph, instantiate(workflow, space, p, ctx, salt=f"{i}/{j}/"), i, j)
    return graph


def unsalted_key(v: Vertex) -> str:
    """Key of ``v`` recomputed without any replica salt."""
    return vertex_key(v.name, v.params, [unsalted_key(p) if p.stage else ROOT for p in v.parents])


def default_executor(v: Vertex, inputs: list[Any]) -> Any:
    if v.stage.fn is None:
        raise ConfigError(f"stage {v.name!r} has no function")
    return v.stage.fn(v.param_dict(), *inputs)


def execute_graph(graph: CompactGraph, executor: Callable = default_executor) -> dict[str, Any]:
    """Run every vertex once, sequentially in topological order."""
    out: dict[str, Any] = {}
    for v in graph.topological():
        inputs = [out[p.key] for p in v.parents if p.stage is not None]
        out[v.key] = executor(v, inputs)
    return out


def same_output(a: Any, b: Any) -> bool:
    """Bitwise equality for stage outputs."""
    if isinstance(a, np.ndarray) or isinstance(b, np.ndarray):
        a, b = np.asarray(a), np.asarray(b)
        return a.dtype == b.dtype and a.shape == b.shape and a.tobytes() == b.tobytes()
    if hasattr(a, "pixels") and hasattr(b, "pixels"):
        return same_output(a.pixels, b.pixels)
    if isinstance(a, float) and isinstance(b, float):
        return struct.pack("<d", a) == struct.pack("<d", b)
    try:
        return bool(a == b)
    except Exception:  # noqa: BLE001 - fall back to serialized form
        return pickle.dumps(a) == pickle.dumps(b)


def replay_equivalence(
    workflow: Workflow,
    space: ParameterSpace,
    psets: Sequence[ParamSet | Sequence[int]],
    executor: Callable = default_executor,
    contexts: Sequence[dict] | None = None,
) -> bool:
    """True iff compact and replica execution give bit-identical sink outputs.

    Raises :class:`PurityViolationError` when one stage instance produces
    different outputs for the same inputs across executions.
    """
    replica = build_replica(workflow, space, psets, contexts)
    compact = build_compact(workflow, space, psets, contexts)
    rep_out = execute_graph(replica, executor)
    by_key: dict[str, Any] = {}
    for v in replica.vertices.values():
        k = unsalted_key(v)
        if k in by_key and not same_output(by_key[k], rep_out[v.key]):
            raise PurityViolationError(f"stage {v.label} is not pure")
        by_key.setdefault(k, rep_out[v.key])
    com_out = execute_graph(compact, executor)
    for k, val in com_out.items():
        if k in by_key and not same_output(by_key[k], val):
            raise PurityViolationError(f"stage {compact.vertices[k].label} is not pure")

    sinks = workflow.sinks
    for inst, rep_keys in replica.instances.items():
        com_keys = compact.instances.get(inst)
        if com_keys is None:
            return False
        for s in sinks:
            ck = com_keys.get(s)
            if ck not in com_out or not same_output(rep_out[rep_keys[s]], com_out[ck]):
                return False
    return True
