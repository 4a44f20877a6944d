"""Hierarchical word-problem generator ("each X's Y" counting problems).

A world has containers (schools), categories of instances (classrooms) and
items (bags). Instance parameters such as "Oakwood Middle School's Painting
Room" get explicit premises. Abstract parameters such as "Oakwood Middle
School's Classroom" are implicit sums over the instances present and are
never stated in the query.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .cot import Task, render_cot, render_query
from .dag import (Dag, Expr, Node, OverflowReject, classify_roles, necessary, node_ops,
                  topo_sort, validate, with_values)


class GenerationError(RuntimeError):
    def __init__(self, msg: str, attempts: int):
        super().__init__(f"{msg} after {attempts} attempts")
        self.attempts = attempts


@dataclass(frozen=True)
class IgsmWorld:
    containers: tuple[str, ...]
    instances: Mapping[str, tuple[str, ...]]  # category -> instance names
    items: tuple[str, ...]
    item_category: str = "Backpack"

    def __post_init__(self):
        object.__setattr__(self, "containers", tuple(self.containers))
        object.__setattr__(self, "items", tuple(self.items))
        object.__setattr__(self, "instances",
                           {k: tuple(v) for k, v in dict(self.instances).items()})
        for label, pool in [("containers", self.containers), ("items", self.items),
                            ("categories", tuple(self.instances))]:
            if len(set(pool)) != len(pool) or not pool:
                raise ValueError(f"{label} must be a nonempty list of unique names")
        flat = [i for v in self.instances.values() for i in v]
        if len(set(flat)) != len(flat):
            raise ValueError("every instance must belong to exactly one category")
        names = set(self.containers) | set(flat) | set(self.items)
        if any("'s " in n for n in names):
            raise ValueError("names may not contain \"'s \"")

    @property
    def categories(self) -> tuple[str, ...]:
        return tuple(self.instances)

    def to_dict(self) -> dict:
        return {"containers": list(self.containers),
                "instances": {k: list(v) for k, v in self.instances.items()},
                "items": list(self.items), "item_category": self.item_category}

    @classmethod
    def from_dict(cls, d: Mapping) -> "IgsmWorld":
        return cls(d["containers"], d["instances"], d["items"], d.get("item_category", "Backpack"))


def default_world() -> IgsmWorld:
    return IgsmWorld(
        containers=("Oakwood Middle School", "Rising Stars Junior High", "Crestview Middle School"),
        instances={"Classroom": ("Pottery Classroom", "Painting Room", "Graphic Design Studio"),
                   "Sports Facility": ("Gymnasium", "Swimming Pool")},
        items=("Designer Bag", "Printed Casual Backpack", "Manager Backpack"),
    )


def load_pool(path: str | Path) -> list[str]:
    """One name per line; blank lines and '#' comments are skipped."""
    names = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if line and not line.startswith("#"):
            names.append(line)
    if len(set(names)) != len(names):
        raise ValueError(f"duplicate names in pool {path}")
    return names


@dataclass(frozen=True)
class IgsmConfig:
    op_range: tuple[int, int] = (15, 20)
    answer_range: tuple[int, int] = (-1000, 1000)
    max_regen_attempts: int = 2000
    const_range: tuple[int, int] = (0, 9)  # constants and AddK offsets
    scale_range: tuple[int, int] = (2, 9)
    params_range: tuple[int, int] | None = None  # instance nodes per problem; None = from op_range
    intermediate_bound: int | None = None

    def __post_init__(self):
        lo, hi = self.op_range
        if lo > hi or lo < 1:
            raise ValueError("op_range must be a nonempty interval of positive integers")
        a, b = self.answer_range
        if not a <= 0 <= b:
            raise ValueError("answer_range must contain 0")
        if self.max_regen_attempts < 1:
            raise ValueError("max_regen_attempts must be positive")
        if self.scale_range[0] < 2:
            raise ValueError("scale factors start at 2")

    def params_bounds(self, world: IgsmWorld) -> tuple[int, int]:
        cap = len(world.containers) * sum(map(len, world.instances.values())) \
            + sum(map(len, world.instances.values())) * len(world.items)
        if self.params_range is not None:
            lo, hi = self.params_range
        else:
            lo, hi = max(1, self.op_range[0] // 2), self.op_range[1] + 4
        return min(lo, cap), min(hi, cap)


def _instance_params(world: IgsmWorld) -> list[tuple[str, str, str]]:
    """(name, abstract parent name, kind) for every possible instance parameter."""
    out = []
    for cat, insts in world.instances.items():
        for c in world.containers:
            for i in insts:
                out.append((f"{c}'s {i}", f"{c}'s {cat}"))
    for insts in world.instances.values():
        for i in insts:
            for it in world.items:
                out.append((f"{i}'s {it}", f"{i}'s {world.item_category}"))
    return out


def _draw_expr(rng: np.random.Generator, pool: Sequence[int], cfg: IgsmConfig) -> Expr:
    lo, hi = cfg.const_range
    if not pool or rng.random() < 0.2:
        return Expr("const", (), int(rng.integers(lo, hi + 1)))
    # favour recent nodes so dependency chains get deep
    w = np.arange(1, len(pool) + 1, dtype=float) ** 2
    w /= w.sum()

    def pick(n):
        n = min(n, len(pool))
        return tuple(int(pool[i]) for i in rng.choice(len(pool), size=n, replace=False, p=w))

    form = rng.choice(["addk", "sum", "scale", "diff"], p=[0.35, 0.2, 0.25, 0.2])
    if form == "diff" and len(pool) >= 2:
        return Expr("diff", pick(2))
    if form == "scale":
        return Expr("scale", pick(1), int(rng.integers(cfg.scale_range[0], cfg.scale_range[1] + 1)))
    n = int(rng.integers(1, 4))
    if form == "sum":
        return Expr("sum", pick(n))
    return Expr("addk", pick(n), int(rng.integers(lo, hi + 1)))


def _draw_dag(rng: np.random.Generator, cfg: IgsmConfig, world: IgsmWorld) -> Dag:
    params = _instance_params(world)
    lo, hi = cfg.params_bounds(world)
    count = int(rng.integers(lo, hi + 1))
    chosen = [params[i] for i in rng.choice(len(params), size=count, replace=False)]
    members: dict[str, list[str]] = {}
    for name, parent in chosen:
        members.setdefault(parent, []).append(name)
    remaining = {p: len(m) for p, m in members.items()}

    exprs: dict[str, Expr] = {}
    layer: dict[str, str] = {}
    ident: dict[str, int] = {}
    order: list[str] = []
    for name, parent in chosen:
        pool = [ident[n] for n in order]
        e = _draw_expr(rng, pool, cfg)
        ident[name] = len(order)
        order.append(name)
        exprs[name], layer[name] = e, "instance"
        remaining[parent] -= 1
        if remaining[parent] == 0:
            # the aggregate is usable only after all its members exist
            ident[parent] = len(order)
            order.append(parent)
            exprs[parent] = Expr("children", tuple(ident[m] for m in members[parent]))
            layer[parent] = "abstract"
    nodes = [Node(ident[n], n, exprs[n], layer=layer[n]) for n in order]
    return Dag(tuple(nodes), 0)


def _prune_abstract(dag: Dag) -> Dag:
    """Drop aggregates nobody reads (they would be invisible anyway) and reindex."""
    keep = [n for n in dag.nodes
            if n.layer != "abstract" or dag.children_of[n.id] or n.id == dag.target]
    while True:
        ids = {n.id for n in keep}
        # a pruned aggregate may have been the only reader of another aggregate
        nxt = [n for n in keep if n.layer != "abstract" or n.id == dag.target
               or any(c in ids for c in dag.children_of[n.id])]
        if len(nxt) == len(keep):
            break
        keep = nxt
    remap = {n.id: i for i, n in enumerate(keep)}
    nodes = [Node(remap[n.id], n.name, Expr(n.expr.op, tuple(remap[r] for r in n.expr.refs), n.expr.k),
                  layer=n.layer) for n in keep]
    return Dag(tuple(nodes), remap[dag.target])


def _op_counts(dag: Dag) -> dict[int, int]:
    closure: dict[int, frozenset[int]] = {}
    for nid in topo_sort(dag):
        s = {nid}
        for r in dag[nid].expr.refs:
            s |= closure[r]
        closure[nid] = frozenset(s)
    return {nid: sum(node_ops(dag[m].expr) for m in c) for nid, c in closure.items()}


def generate_igsm(config: IgsmConfig, world: IgsmWorld | None = None, seed: int = 0) -> Task:
    """Sample until a problem with op_count in range and an in-range answer appears.

    Every failed draw is discarded whole; the generator never patches a draw.
    """
    world = world or default_world()
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x16]))
    alo, ahi = config.answer_range
    olo, ohi = config.op_range
    for attempt in range(1, config.max_regen_attempts + 1):
        raw = _draw_dag(rng, config, world)
        try:
            vals = with_values(raw).values()
        except OverflowReject:
            continue
        ops = _op_counts(raw)
        cands = [nid for nid, c in ops.items() if olo <= c <= ohi and alo <= vals[nid] <= ahi]
        if not cands:
            continue
        target = int(cands[int(rng.integers(len(cands)))])
        dag = _prune_abstract(Dag(raw.nodes, target))
        dag = classify_roles(with_values(dag))
        if config.intermediate_bound is not None and any(
                abs(n.value) > config.intermediate_bound for n in dag.nodes):
            continue
        assert not validate(dag)
        solve = topo_sort(dag, seed=rng, subset=necessary(dag))
        query = render_query(dag, "igsm", seed=rng)
        cot = render_cot(dag, solve, "igsm", seed=rng)
        gold = dag[dag.target].value
        meta = {"op_count": ops[target], "seed": int(seed), "attempts": attempt,
                "redundant_premises": True}
        return Task(f"igsm-{seed}", "igsm", tuple(query), dag, cot, gold, meta)
    raise GenerationError("no iGSM problem satisfied the op/answer filters",
                          config.max_regen_attempts)
