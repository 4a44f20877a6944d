"""Arithmetic DAG generator with exact depth and detached redundant subtrees.

Trees are grown top-down from the target. Node names follow the sequential
three-letter scheme ("aaa", "aab", ...) in post-order, so every operand is
named before the node that uses it.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .cot import Task, render_cot, render_query
from .dag import (Dag, Expr, Node, OverflowReject, classify_roles, longest_path, necessary,
                  topo_sort, with_values)
from .igsm import GenerationError

OPERATORS = ("add", "sub", "mul", "square")


def pb_name(i: int) -> str:
    """Base-26 three-letter name: 0 -> 'aaa', 1 -> 'aab', 26 -> 'aba'."""
    if not 0 <= i < 26 ** 3:
        raise ValueError("name index out of range")
    return "".join(chr(97 + (i // 26 ** p) % 26) for p in (2, 1, 0))


@dataclass(frozen=True)
class PbConfig:
    depth: int = 4
    redundancy_range: tuple[int, int] = (0, 2)
    leaf_value_set: tuple[int, ...] = tuple(range(1, 11))
    answer_range: tuple[int, int] = (-1000, 1000)
    operator_set: tuple[str, ...] = OPERATORS
    max_regen_attempts: int = 5000
    redundant_depth: tuple[int, int] = (1, 2)

    def __post_init__(self):
        if self.depth < 1:
            raise ValueError("depth must be >= 1")
        if not self.leaf_value_set:
            raise ValueError("leaf_value_set must be nonempty")
        lo, hi = self.redundancy_range
        if lo < 0 or lo > hi:
            raise ValueError("redundancy_range must be a nonempty interval of counts >= 0")
        bad = set(self.operator_set) - set(OPERATORS)
        if bad or not self.operator_set:
            raise ValueError(f"operator_set must be a nonempty subset of {OPERATORS}")
        a, b = self.answer_range
        if not a <= 0 <= b:
            raise ValueError("answer_range must contain 0")


class _Builder:
    def __init__(self, rng: np.random.Generator, cfg: PbConfig):
        self.rng, self.cfg = rng, cfg
        self.exprs: list[Expr] = []

    def tree(self, depth: int) -> int:
        """Grow a subtree whose longest path has exactly ``depth`` nodes; returns its root."""
        rng, cfg = self.rng, self.cfg
        if depth == 1:
            v = cfg.leaf_value_set[int(rng.integers(len(cfg.leaf_value_set)))]
            return self._add(Expr("const", (), int(v)))
        op = cfg.operator_set[int(rng.integers(len(cfg.operator_set)))]
        if op == "square":
            return self._add(Expr("square", (self.tree(depth - 1),)))
        depths = [depth - 1, int(rng.integers(1, depth))]
        if rng.random() < 0.5:
            depths.reverse()
        a, b = (self.tree(d) for d in depths)
        if op == "sub":
            return self._add(Expr("diff", (a, b)))
        refs = (a, b) if rng.random() < 0.5 else (b, a)
        return self._add(Expr("sum" if op == "add" else "mul", refs))

    def _add(self, e: Expr) -> int:
        self.exprs.append(e)
        return len(self.exprs) - 1


def generate_pb(config: PbConfig, seed: int = 0) -> Task:
    """Sample a task; the whole draw is redone when the answer leaves range."""
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x9B]))
    lo, hi = config.answer_range
    rlo, rhi = config.redundancy_range
    for attempt in range(1, config.max_regen_attempts + 1):
        b = _Builder(rng, config)
        target = b.tree(config.depth)
        extra = int(rng.integers(rlo, rhi + 1))
        dlo, dhi = config.redundant_depth
        for _ in range(extra):
            b.tree(int(rng.integers(dlo, dhi + 1)))
        nodes = tuple(Node(i, pb_name(i), e) for i, e in enumerate(b.exprs))
        try:
            dag = classify_roles(with_values(Dag(nodes, target)))
        except OverflowReject:
            continue
        gold = dag[target].value
        if not lo <= gold <= hi:
            continue
        solve = topo_sort(dag, subset=necessary(dag))
        query = render_query(dag, "promptbench", seed=rng)
        cot = render_cot(dag, solve, "promptbench", seed=rng)
        meta = {"depth": config.depth, "redundancy": extra, "seed": int(seed),
                "attempts": attempt}
        assert longest_path(dag) == config.depth
        return Task(f"pb-{seed}", "promptbench", tuple(query), dag, cot, gold, meta)
    raise GenerationError("no PromptBench problem satisfied the answer filter",
                          config.max_regen_attempts)
