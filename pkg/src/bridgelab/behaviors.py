"""Behavior injection into canonical CoTs, the two augmentation baselines,
rollout-based query filtering, and structural CoT verification.

Three behaviors are injected at step granularity:

* subgoal: multi-operand numeric links are folded left, one operation per link;
* analysis: a step restates the dependency its node has in the query;
* reflection: an attempt on a still-locked node, resolved when it is solved.
"""
from __future__ import annotations

import zlib
from dataclasses import dataclass, replace
from typing import Iterable, Mapping, Sequence

import numpy as np

from .cot import (CotStep, Task, eval_link, fmt_num, render_cot, render_query, split_name,
                  symbolic)
from .dag import Dag, locked_nodes, necessary, topo_sort


@dataclass(frozen=True)
class InjectConfig:
    p: float = 0.1
    subgoal_always: bool = True
    seed: int = 0
    max_reflections: int | None = None  # per CoT; None = unlimited

    def __post_init__(self):
        if not 0.0 <= self.p <= 1.0:
            raise ValueError("p must lie in [0, 1]")
        if self.max_reflections is not None and self.max_reflections < 0:
            raise ValueError("max_reflections must be >= 0")


def task_rng(seed: int, task_id: str, stream: str) -> np.random.Generator:
    """Per-task generator, independent of processing order."""
    keys = [int(seed) & 0xFFFFFFFF, zlib.crc32(task_id.encode()), zlib.crc32(stream.encode())]
    return np.random.default_rng(np.random.SeedSequence(keys))


def _as_rng(rng) -> np.random.Generator:
    return rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)


def _add_behavior(step: CotStep, name: str) -> CotStep:
    if name in step.behaviors:
        return step
    return replace(step, behaviors=step.behaviors + (name,))


# ---------------------------------------------------------------- subgoals

def fold_link(link: str) -> list[str]:
    """Left-fold a flat numeric expression into single-operation links.

    "1 + 2 + 3 + 4" -> ["3 + 3 + 4", "6 + 4", "10"]
    """
    toks = link.split(" ")
    out = []
    while len(toks) > 3:
        head, _ = eval_link(" ".join(toks[:3]))
        toks = [fmt_num(head)] + toks[3:]
        out.append(" ".join(toks))
    value, _ = eval_link(" ".join(toks))
    out.append(str(value))
    return out


def inject_subgoals(cot: Sequence[CotStep]) -> tuple[CotStep, ...]:
    """Expand every numeric link with m > 1 operations into m single-operation links."""
    out = []
    for step in cot:
        if step.kind != "solve" or len(step.chain) < 2:
            out.append(step)
            continue
        numeric = step.chain[-2]
        try:
            _, ops = eval_link(numeric)
        except ValueError:  # symbolic link only (aliases)
            out.append(step)
            continue
        if ops <= 1:
            out.append(step)
            continue
        chain = step.chain[:-1] + tuple(fold_link(numeric))
        out.append(_add_behavior(replace(step, chain=chain), "subgoal"))
    return tuple(out)


# ---------------------------------------------------------------- analysis

def inject_analysis(cot: Sequence[CotStep], dag: Dag, config: InjectConfig,
                    rng=None) -> tuple[CotStep, ...]:
    """Bernoulli(p) per solve step: mark the step to restate its dependency."""
    rng = _as_rng(config.seed if rng is None else rng)
    out = []
    for step in cot:
        if step.kind == "solve" and rng.random() < config.p:
            step = _add_behavior(step, "analysis")
        out.append(step)
    return tuple(out)


# ---------------------------------------------------------------- reflection

def reflection_candidates(dag: Dag, solved: set[int], attempted: set[int]) -> list[int]:
    """Locked non-redundant nodes with at least one solved dependency."""
    need = necessary(dag)
    return sorted(n for n in locked_nodes(dag, solved)
                  if n in need and n not in attempted
                  and any(r in solved for r in dag[n].expr.refs))


def inject_reflection(cot: Sequence[CotStep], dag: Dag, config: InjectConfig,
                      rng=None, family: str = "igsm") -> tuple[CotStep, ...]:
    """Bernoulli(p) per eligible step boundary: attempt a locked node, then go on.

    A boundary is eligible when some node qualifies (see
    ``reflection_candidates``). Each node is attempted at most once. The
    attempt reuses the alias the node receives when it is finally solved.
    """
    rng = _as_rng(config.seed if rng is None else rng)
    cot = list(cot)
    alias = {s.node: s.alias for s in cot if s.kind == "solve"}
    solved: set[int] = set()
    attempted: set[int] = set()
    out: list[CotStep] = []
    budget = config.max_reflections
    for i, step in enumerate(cot):
        if step.kind == "solve" and step.node in attempted:
            step = _add_behavior(step, "reflection-resolve")
        out.append(step)
        if step.kind == "solve":
            solved.add(step.node)
        if i == len(cot) - 1 or (budget is not None and budget <= 0):
            continue
        cands = reflection_candidates(dag, solved, attempted)
        if not cands or rng.random() >= config.p:
            continue
        node = cands[int(rng.integers(len(cands)))]
        missing = [r for r in dict.fromkeys(dag[node].expr.refs) if r not in solved]
        miss = missing[int(rng.integers(len(missing)))]
        sym = symbolic(dag, dag[node], family, {**{n: dag[n].name for n in dag.ids}, **alias})
        out.append(CotStep(node, alias[node], (sym,), kind="attempt", missing=miss,
                           behaviors=("reflection-attempt",)))
        attempted.add(node)
        if budget is not None:
            budget -= 1
    return tuple(out)


def bridge_augment(task: Task, config: InjectConfig) -> Task:
    """Subgoals, then analysis, then reflection, interleaved inside the CoT."""
    cot = task.cot
    if config.subgoal_always:
        cot = inject_subgoals(cot)
    cot = inject_analysis(cot, task.dag, config, task_rng(config.seed, task.id, "analysis"))
    cot = inject_reflection(cot, task.dag, config, task_rng(config.seed, task.id, "reflection"),
                            family=task.family)
    manifest = {name: [i for i, s in enumerate(cot) if name in s.behaviors]
                for name in ("subgoal", "analysis", "reflection-attempt", "reflection-resolve")}
    meta = {**task.meta, "augment": "bridge", "behaviors": manifest,
            "inject": {"p": config.p, "subgoal_always": config.subgoal_always,
                       "seed": config.seed}}
    return replace(task, cot=cot, meta=meta)


# ---------------------------------------------------------------- baselines

def pp_aug(task: Task, copies: int, seed: int = 0) -> list[Task]:
    """Copies with independently permuted premises; the question stays last."""
    rng = task_rng(seed, task.id, "pp")
    premises, q = list(task.query[:-1]), task.query[-1]
    seen: set[tuple[str, ...]] = set()
    out = []
    for j in range(copies):
        for _ in range(64):
            perm = tuple(premises[i] for i in rng.permutation(len(premises)))
            if perm not in seen:
                break
        seen.add(perm)
        meta = {**task.meta, "augment": "pp", "copy": j}
        out.append(replace(task, id=f"{task.id}/pp{j}", query=perm + (q,), meta=meta))
    return out


def rc_aug(task: Task, copies: int, seed: int = 0, retries: int = 8) -> list[Task]:
    """Copies whose CoT follows a fresh random linear extension of the solve graph."""
    rng = task_rng(seed, task.id, "rc")
    dag = task.dag
    need = necessary(dag)
    canonical = [s.node for s in task.cot if s.kind == "solve"]
    out = []
    for j in range(copies):
        for _ in range(retries):
            order = topo_sort(dag, seed=rng, subset=need)
            if order != canonical:
                break
        cot = render_cot(dag, order, task.family, seed=rng)
        meta = {**task.meta, "augment": "rc", "copy": j}
        out.append(replace(task, id=f"{task.id}/rc{j}", cot=cot, meta=meta))
    return out


def rejection_filter(rollout_counts: Mapping[str, tuple[int, int]]) -> list[str]:
    """Keep queries the policy solves sometimes but not always (1 <= n <= N-1)."""
    kept = []
    for q, (n, total) in rollout_counts.items():
        if total < 2:
            raise ValueError(f"query {q!r}: need at least 2 rollouts, got {total}")
        if not 0 <= n <= total:
            raise ValueError(f"query {q!r}: correct count {n} outside [0, {total}]")
        if 1 <= n <= total - 1:
            kept.append(q)
    return kept


# ---------------------------------------------------------------- verification

def cot_problems(task: Task) -> list[str]:
    """Every structural or arithmetic defect of a task's CoT."""
    dag = task.dag
    problems: list[str] = []
    try:
        need = necessary(dag)
    except KeyError:
        return ["dangling reference in dag"]
    if task.gold != dag[dag.target].value:
        problems.append(f"gold {task.gold} != target value {dag[dag.target].value}")
    alias_of: dict[int, str] = {}
    owner: dict[str, int] = {}
    env: dict[str, int] = {}
    solved: set[int] = set()
    pending: set[int] = set()
    for i, s in enumerate(task.cot):
        if s.node not in dag:
            problems.append(f"step {i}: unknown node {s.node}")
            continue
        node = dag[s.node]
        if owner.setdefault(s.alias, s.node) != s.node or alias_of.setdefault(s.node, s.alias) != s.alias:
            problems.append(f"step {i}: alias {s.alias!r} is not one-to-one")
        if s.kind == "attempt":
            if s.node not in locked_nodes(dag, solved):
                problems.append(f"step {i}: attempt on unlocked node {s.node}")
            if s.missing not in node.expr.refs or s.missing in solved:
                problems.append(f"step {i}: {s.missing} is not an unsolved dependency")
            if s.node in pending:
                problems.append(f"step {i}: node {s.node} attempted twice")
            pending.add(s.node)
            continue
        if s.kind != "solve":
            problems.append(f"step {i}: unknown step kind {s.kind!r}")
            continue
        if s.node in solved:
            problems.append(f"step {i}: node {s.node} solved twice")
        if s.node not in need:
            problems.append(f"step {i}: redundant node {s.node} in solution")
        unmet = [r for r in node.expr.refs if r not in solved]
        if unmet:
            problems.append(f"step {i}: dependencies {unmet} not yet solved")
            continue
        if (s.node in pending) != ("reflection-resolve" in s.behaviors):
            problems.append(f"step {i}: resolve phrase does not match an earlier attempt")
        pending.discard(s.node)
        if not s.chain or s.chain[-1] != str(node.value):
            problems.append(f"step {i}: chain does not end in value {node.value}")
            continue
        links = s.chain if node.expr.op == "const" else s.chain[1:]
        if node.expr.op != "const":
            names = {r: alias_of.get(r, "?") for r in node.expr.refs}
            if s.chain[0] != symbolic(dag, node, task.family, names):
                problems.append(f"step {i}: symbolic form {s.chain[0]!r} does not match its premise")
            elif eval_link(s.chain[0], env)[0] != node.value:
                problems.append(f"step {i}: {s.chain[0]!r} does not evaluate to {node.value}")
        prev_ops = None
        for link in links:
            try:
                val, ops = eval_link(link, env)
            except ValueError as e:
                problems.append(f"step {i}: {e}")
                break
            if val != node.value:
                problems.append(f"step {i}: link {link!r} gives {val}, expected {node.value}")
            if "subgoal" in s.behaviors and prev_ops is not None and ops != prev_ops - 1:
                problems.append(f"step {i}: subgoal link {link!r} does not remove exactly one operation")
            prev_ops = ops
        env[s.alias] = node.value
        solved.add(s.node)
    if solved != need:
        problems.append(f"necessary nodes not solved: {sorted(need - solved)}")
    if pending:
        problems.append(f"attempted nodes never solved: {sorted(pending)}")
    return problems


def verify_cot(task: Task) -> bool:
    return not cot_problems(task)
