"""Task DAGs: typed arithmetic nodes, ordering, evaluation and role analysis.

Edges are never stored. A node's parents are exactly the refs of its
expression, so the edge set is always derived (``edges``).
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Iterable, Mapping

import numpy as np

INT64_MIN = -(2**63)
INT64_MAX = 2**63 - 1

ROLES = ("leaf", "intermediate", "target", "redundant")

# op -> (min refs, max refs, takes k)
_ARITY = {
    "const": (0, 0, True),
    "addk": (1, None, True),
    "sum": (1, None, False),
    "diff": (2, 2, False),
    "scale": (1, 1, True),
    "mul": (2, 2, False),
    "square": (1, 1, False),
    "children": (1, None, False),
}


class OverflowReject(ArithmeticError):
    """A node value left the signed 64-bit range; the generator should resample."""


class CycleError(ValueError):
    pass


@dataclass(frozen=True)
class Expr:
    op: str
    refs: tuple[int, ...] = ()
    k: int | None = None

    def __post_init__(self):
        if self.op not in _ARITY:
            raise ValueError(f"unknown expression op {self.op!r}")
        lo, hi, takes_k = _ARITY[self.op]
        n = len(self.refs)
        if n < lo or (hi is not None and n > hi):
            raise ValueError(f"{self.op} takes {lo}..{hi or 'n'} refs, got {n}")
        if takes_k != (self.k is not None):
            raise ValueError(f"{self.op} {'requires' if takes_k else 'forbids'} k")
        if self.op == "addk" and self.k < 0:
            raise ValueError("addk offset must be >= 0")
        if self.op == "scale" and self.k < 2:
            raise ValueError("scale factor must be >= 2")

    def apply(self, vals: Mapping[int, int]) -> int:
        xs = [vals[r] for r in self.refs]
        op = self.op
        if op == "const":
            return self.k
        if op == "addk":
            return self.k + sum(xs)
        if op in ("sum", "children"):
            return sum(xs)
        if op == "diff":
            return xs[0] - xs[1]
        if op == "scale":
            return self.k * xs[0]
        if op == "mul":
            return xs[0] * xs[1]
        return xs[0] * xs[0]  # square

    def to_dict(self) -> dict:
        d: dict = {"op": self.op}
        if self.k is not None:
            d["k"] = self.k
        if self.refs:
            d["refs"] = list(self.refs)
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "Expr":
        return cls(d["op"], tuple(d.get("refs", ())), d.get("k"))


def const(k: int) -> Expr:
    return Expr("const", (), int(k))


def add_k(k: int, refs: Iterable[int]) -> Expr:
    return Expr("addk", tuple(refs), int(k))


def plain_sum(refs: Iterable[int]) -> Expr:
    return Expr("sum", tuple(refs))


def diff(a: int, b: int) -> Expr:
    return Expr("diff", (a, b))


def scale(k: int, ref: int) -> Expr:
    return Expr("scale", (ref,), int(k))


def mul(a: int, b: int) -> Expr:
    return Expr("mul", (a, b))


def square(ref: int) -> Expr:
    return Expr("square", (ref,))


def sum_children(refs: Iterable[int]) -> Expr:
    return Expr("children", tuple(refs))


@dataclass(frozen=True)
class Node:
    id: int
    name: str
    expr: Expr
    value: int | None = None
    role: str | None = None
    layer: str | None = None  # iGSM only: "abstract" | "instance"

    def to_dict(self) -> dict:
        d = {"id": self.id, "name": self.name, "expr": self.expr.to_dict(),
             "value": self.value, "role": self.role}
        if self.layer is not None:
            d["layer"] = self.layer
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "Node":
        return cls(int(d["id"]), d["name"], Expr.from_dict(d["expr"]),
                   d.get("value"), d.get("role"), d.get("layer"))


@dataclass(frozen=True)
class Dag:
    nodes: tuple[Node, ...]
    target: int
    _index: dict = field(default=None, init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "nodes", tuple(self.nodes))
        object.__setattr__(self, "_index", {n.id: n for n in self.nodes})

    def __getitem__(self, node_id: int) -> Node:
        return self._index[node_id]

    def __contains__(self, node_id: int) -> bool:
        return node_id in self._index

    def __len__(self) -> int:
        return len(self.nodes)

    @property
    def ids(self) -> list[int]:
        return [n.id for n in self.nodes]

    @cached_property
    def by_name(self) -> dict[str, Node]:
        return {n.name: n for n in self.nodes}

    @cached_property
    def children_of(self) -> dict[int, list[int]]:
        """Dependents of each node (nodes whose expr references it)."""
        out: dict[int, list[int]] = {n.id: [] for n in self.nodes}
        for n in self.nodes:
            for r in dict.fromkeys(n.expr.refs):
                if r in out:
                    out[r].append(n.id)
        return out

    def edges(self) -> set[tuple[int, int]]:
        return {(r, n.id) for n in self.nodes for r in n.expr.refs}

    def with_nodes(self, nodes: Iterable[Node]) -> "Dag":
        return Dag(tuple(nodes), self.target)

    def values(self) -> dict[int, int]:
        return {n.id: n.value for n in self.nodes}

    def to_dict(self) -> dict:
        return {"target": self.target, "nodes": [n.to_dict() for n in self.nodes]}

    @classmethod
    def from_dict(cls, d: Mapping) -> "Dag":
        return cls(tuple(Node.from_dict(x) for x in d["nodes"]), int(d["target"]))

    def signature(self, values: bool = True, roles: bool = False) -> tuple:
        """Id-free canonical form, used to compare DAGs by node name.

        Aggregation children are compared as a multiset; every other ref
        list keeps its order.
        """
        name = {n.id: n.name for n in self.nodes}
        rows = []
        for n in self.nodes:
            refs = tuple(name.get(r, f"#{r}") for r in n.expr.refs)
            if n.expr.op == "children":
                refs = tuple(sorted(refs))
            row = (n.name, n.expr.op, n.expr.k, refs, n.layer)
            if values:
                row += (n.value,)
            if roles:
                row += (n.role,)
            rows.append(row)
        return (name.get(self.target), tuple(sorted(rows, key=lambda r: r[0])))


def _find_cycle(dag: Dag) -> list[int]:
    """Return the ids on some cycle reachable through resolvable refs, or []."""
    color: dict[int, int] = {}
    for start in dag.ids:
        if start in color:
            continue
        stack = [(start, iter(dag[start].expr.refs))]
        path = [start]
        color[start] = 1
        while stack:
            nid, it = stack[-1]
            nxt = next(it, None)
            if nxt is None:
                color[nid] = 2
                stack.pop()
                path.pop()
                continue
            if nxt not in dag:
                continue
            c = color.get(nxt, 0)
            if c == 1:
                return path[path.index(nxt):]
            if c == 0:
                color[nxt] = 1
                stack.append((nxt, iter(dag[nxt].expr.refs)))
                path.append(nxt)
    return []


def validate(dag: Dag) -> list[str]:
    """Structural problems as readable strings; empty means the DAG is usable."""
    problems: list[str] = []
    seen_ids: set[int] = set()
    seen_names: set[str] = set()
    for n in dag.nodes:
        if n.id < 0:
            problems.append(f"negative id {n.id}")
        if n.id in seen_ids:
            problems.append(f"duplicate id {n.id}")
        seen_ids.add(n.id)
        if n.name in seen_names:
            problems.append(f"duplicate name {n.name!r}")
        seen_names.add(n.name)
        for r in n.expr.refs:
            if r not in dag:
                problems.append(f"dangling ref {r} in node {n.id}")
    if dag.target not in dag:
        problems.append(f"target {dag.target} is not a node")
    targets = [n.id for n in dag.nodes if n.role == "target"]
    if len(targets) > 1 or (targets and targets[0] != dag.target):
        problems.append(f"target role on {targets}, expected only {dag.target}")
    cyc = _find_cycle(dag)
    if cyc:
        problems.append("cycle at " + " -> ".join(str(c) for c in cyc))
    return problems


def topo_sort(dag: Dag, seed: int | np.random.Generator | None = None,
              subset: Iterable[int] | None = None) -> list[int]:
    """Kahn's algorithm; ties broken uniformly at random when seeded.

    Unseeded, the ready node listed first in ``dag.nodes`` wins. With
    ``subset`` only those nodes are ordered (refs outside it count as done).
    """
    rng = seed if isinstance(seed, np.random.Generator) else (
        None if seed is None else np.random.default_rng(seed))
    keep = set(dag.ids if subset is None else subset)
    pos = {nid: i for i, nid in enumerate(dag.ids)}
    indeg = {nid: len({r for r in dag[nid].expr.refs if r in keep}) for nid in keep}
    ready = sorted((nid for nid, d in indeg.items() if d == 0), key=pos.__getitem__)
    order: list[int] = []
    while ready:
        i = 0 if rng is None else int(rng.integers(len(ready)))
        nid = ready.pop(i)
        order.append(nid)
        for ch in dag.children_of[nid]:
            if ch in keep:
                indeg[ch] -= 1
                if indeg[ch] == 0:
                    ready.append(ch)
        ready.sort(key=pos.__getitem__)
    if len(order) != len(keep):
        raise CycleError("graph has a cycle; no topological order exists")
    return order


def evaluate(dag: Dag, order: Iterable[int] | None = None) -> dict[int, int]:
    """Bottom-up evaluation of every node; raises OverflowReject past int64."""
    vals: dict[int, int] = {}
    for nid in (topo_sort(dag) if order is None else order):
        v = dag[nid].expr.apply(vals)
        if not INT64_MIN <= v <= INT64_MAX:
            raise OverflowReject(f"node {nid} value {v} overflows int64")
        vals[nid] = v
    return vals


def with_values(dag: Dag) -> Dag:
    vals = evaluate(dag)
    return dag.with_nodes(replace(n, value=vals[n.id]) for n in dag.nodes)


def ancestors(dag: Dag, node_id: int, include_self: bool = True) -> set[int]:
    seen = {node_id} if include_self else set()
    todo = deque(dag[node_id].expr.refs)
    while todo:
        r = todo.popleft()
        if r not in seen:
            seen.add(r)
            todo.extend(dag[r].expr.refs)
    return seen


def necessary(dag: Dag) -> set[int]:
    """The target and everything it depends on."""
    return ancestors(dag, dag.target)


def classify_roles(dag: Dag) -> Dag:
    need = necessary(dag)
    out = []
    for n in dag.nodes:
        if n.id == dag.target:
            role = "target"
        elif n.id not in need:
            role = "redundant"
        elif not n.expr.refs:
            role = "leaf"
        else:
            role = "intermediate"
        out.append(replace(n, role=role))
    return dag.with_nodes(out)


def node_ops(expr: Expr) -> int:
    """Operations charged to one node.

    A literal constant counts as one input, and each node costs
    max(1, inputs - 1). This is the iGSM difficulty convention.
    """
    inputs = len(expr.refs) + (1 if expr.k is not None else 0)
    return max(1, inputs - 1)


def op_count(dag: Dag) -> int:
    return sum(node_ops(dag[nid].expr) for nid in necessary(dag))


def redundancy(dag: Dag) -> int:
    """Number of redundant subtrees, i.e. redundant nodes nothing depends on."""
    need = necessary(dag)
    return sum(1 for n in dag.nodes
               if n.id not in need and not dag.children_of[n.id])


def locked_nodes(dag: Dag, solved: Iterable[int]) -> set[int]:
    solved = set(solved)
    return {n.id for n in dag.nodes
            if n.id not in solved and any(r not in solved for r in n.expr.refs)}


def longest_path(dag: Dag, node_id: int | None = None) -> int:
    """Nodes on the longest dependency chain ending at ``node_id`` (target by default)."""
    depth: dict[int, int] = {}
    for nid in topo_sort(dag):
        refs = dag[nid].expr.refs
        depth[nid] = 1 + max((depth[r] for r in refs), default=0)
    return depth[dag.target if node_id is None else node_id]
