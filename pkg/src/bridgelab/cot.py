"""Text side of a task: premise/CoT templates, rendering, extraction, chat records.

The grammar is fixed per family (``igsm`` and ``promptbench``). Rendering
and extraction share the same template tables, so one cannot drift from the
other.
"""
from __future__ import annotations

import ast
import re
import string
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

import numpy as np

from .dag import Dag, Node, classify_roles, evaluate, necessary, with_values

FAMILIES = ("igsm", "promptbench")

HEADER = "Let's compute the answer step by step."
FOOTER = "Thus, the answer is {gold}."

SYSTEM_PROMPT = (
    "A conversation that the assistant solves the user's problem. The assistant first "
    "thinks about the reasoning process in the mind and then provides the user with the "
    "answer. The reasoning process and answer are enclosed within <think> </think> and "
    "<answer> </answer> tags, respectively, i.e., <think> all the reasoning process here "
    "</think> <answer> final answer here </answer>."
)

CHAT_TEMPLATES = {
    "qwen": ("<|im_start|>system\n{system}<|im_end|>\n<|im_start|>user\n{user}<|im_end|>\n"
             "<|im_start|>assistant\n{assistant}<|im_end|>"),
    "llama": ("<|start_header_id|>system<|end_header_id|>\n\n{system}<|eot_id|>"
              "<|start_header_id|>user<|end_header_id|>\n\n{user}<|eot_id|>"
              "<|start_header_id|>assistant<|end_header_id|>\n\n{assistant}<|eot_id|>"),
    "plain": "System: {system}\nUser: {user}\nAssistant: {assistant}",
}

ANSWER_TEMPLATE = "<think> {cot} </think>\n<answer> The final answer is \\boxed{{{gold}}} </answer>"

# iGSM lead-ins. {N} node name, {a} alias, {v} value.
IGSM_CONST_LEADS = (
    "According to the information given, the number of each {N} is {v}. Let's denote it as {a}.",
    "The number of each {N} is {v}. Let's denote it as {a}.",
)
IGSM_LEADS = (
    "Next, let {a} represent the number of each {N}.",
    "Now, we can find the number of each {N}. Let's denote it as {a}.",
    "We can then calculate the number of each {N}. Let it be {a}.",
    "Then, let's denote the number of each {N} as {a}.",
    "Now, we can find the number of each {N}. Let it be {a}.",
)
IGSM_RESOLVE_LEADS = (
    "Now, we can find the number of each {N}. Remember that it has been denoted as {a}.",
    "We can then calculate the number of each {N}. Remember that it has been denoted as {a}.",
)
IGSM_ATTEMPT = ("Then, let's denote the number of each {N} as {a}. But we haven't calculated "
                "the number of each {M} yet, thus the value of {a} is still unknown.")
IGSM_ANALYSIS = "We know that it equals {desc}."

PB_ATTEMPT = ("Let's solve {N}, {N} = {sym}, wait, {M} is not solved yet, "
              "so {N} seems to be not solvable yet, let's get back")

ALIAS_LETTERS = string.ascii_letters


class TemplateError(ValueError):
    pass


class ExtractionError(ValueError):
    pass


@dataclass(frozen=True)
class CotStep:
    """One CoT line.

    ``chain`` holds the right-hand sides of ``alias = ...``. The symbolic
    form comes first (absent for constants), then numeric links, and the
    node value is always last. Attempts carry only the symbolic form.
    """
    node: int
    alias: str
    chain: tuple[str, ...]
    kind: str = "solve"
    lead: int = 0
    missing: int | None = None
    behaviors: tuple[str, ...] = ()

    @property
    def value(self) -> int:
        return int(self.chain[-1])

    def to_dict(self) -> dict:
        d = {"node": self.node, "alias": self.alias, "chain": list(self.chain),
             "kind": self.kind, "lead": self.lead}
        if self.missing is not None:
            d["missing"] = self.missing
        if self.behaviors:
            d["behaviors"] = list(self.behaviors)
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "CotStep":
        return cls(int(d["node"]), d["alias"], tuple(d["chain"]), d.get("kind", "solve"),
                   int(d.get("lead", 0)), d.get("missing"), tuple(d.get("behaviors", ())))


@dataclass(frozen=True)
class Task:
    id: str
    family: str
    query: tuple[str, ...]
    dag: Dag
    cot: tuple[CotStep, ...]
    gold: int
    meta: dict = field(default_factory=dict, compare=True)

    def answer_text(self) -> str:
        return render_answer(self.dag, self.cot, self.family, self.gold)

    def query_text(self) -> str:
        return "\n".join(self.query)

    def to_dict(self) -> dict:
        return {"id": self.id, "family": self.family, "query": list(self.query),
                "cot": [s.to_dict() for s in self.cot], "gold": self.gold,
                "dag": self.dag.to_dict(), "meta": self.meta}

    @classmethod
    def from_dict(cls, d: Mapping) -> "Task":
        return cls(d["id"], d["family"], tuple(d["query"]), Dag.from_dict(d["dag"]),
                   tuple(CotStep.from_dict(s) for s in d["cot"]), int(d["gold"]),
                   dict(d.get("meta", {})))


# ---------------------------------------------------------------- arithmetic links

_ALLOWED = (ast.Expression, ast.BinOp, ast.UnaryOp, ast.Add, ast.Sub, ast.Mult,
            ast.USub, ast.Pow, ast.Constant, ast.Name, ast.Load)


def eval_link(text: str, env: Mapping[str, int] | None = None) -> tuple[int, int]:
    """Evaluate one arithmetic link; returns (value, number of binary operators)."""
    try:
        tree = ast.parse(text.replace("^", "**"), mode="eval")
    except SyntaxError as e:
        raise ValueError(f"bad arithmetic {text!r}") from e
    ops = 0
    for n in ast.walk(tree):
        if not isinstance(n, _ALLOWED):
            raise ValueError(f"disallowed syntax in {text!r}")
        if isinstance(n, ast.BinOp):
            if isinstance(n.op, ast.Pow) and not (
                    isinstance(n.right, ast.Constant) and n.right.value == 2):
                raise ValueError(f"only squaring is allowed: {text!r}")
            ops += 1
        if isinstance(n, ast.Constant) and type(n.value) is not int:
            raise ValueError(f"non-integer literal in {text!r}")

    def ev(n):
        if isinstance(n, ast.Expression):
            return ev(n.body)
        if isinstance(n, ast.Constant):
            return n.value
        if isinstance(n, ast.Name):
            if env is None or n.id not in env:
                raise ValueError(f"unknown name {n.id!r} in {text!r}")
            return env[n.id]
        if isinstance(n, ast.UnaryOp):
            return -ev(n.operand)
        a, b = ev(n.left), ev(n.right)
        if isinstance(n.op, ast.Add):
            return a + b
        if isinstance(n.op, ast.Sub):
            return a - b
        if isinstance(n.op, ast.Mult):
            return a * b
        return a * a

    return ev(tree), ops


def fmt_num(v: int) -> str:
    return f"({v})" if v < 0 else str(v)


def _operands(dag: Dag, node: Node, family: str) -> tuple[list[int], str]:
    """Operand ids in display order and the joining operator."""
    e = node.expr
    refs = list(e.refs)
    if family == "promptbench" and e.op in ("sum", "mul", "children"):
        refs.sort(key=lambda r: dag[r].name)
    op = {"addk": "+", "sum": "+", "children": "+", "diff": "-",
          "scale": "*", "mul": "*"}.get(e.op)
    return refs, op


def symbolic(dag: Dag, node: Node, family: str, alias: Mapping[int, str]) -> str:
    e = node.expr
    if e.op == "square":
        return f"{alias[e.refs[0]]}^2"
    refs, op = _operands(dag, node, family)
    terms = [alias[r] for r in refs]
    if e.op in ("addk", "scale"):
        terms.insert(0, str(e.k))
    return f" {op} ".join(terms)


def numeric(dag: Dag, node: Node, family: str) -> str:
    e = node.expr
    if e.op == "square":
        return f"{fmt_num(dag[e.refs[0]].value)}^2"
    refs, op = _operands(dag, node, family)
    terms = [fmt_num(dag[r].value) for r in refs]
    if e.op in ("addk", "scale"):
        terms.insert(0, str(e.k))
    return f" {op} ".join(terms)


def base_chain(dag: Dag, node: Node, family: str, alias: Mapping[int, str]) -> tuple[str, ...]:
    if node.expr.op == "const":
        return (str(node.value),)
    sym = symbolic(dag, node, family, alias)
    if family == "igsm":
        _, ops = eval_link(numeric(dag, node, family))
        if ops:
            return (sym, numeric(dag, node, family), str(node.value))
    return (sym, str(node.value))


# ---------------------------------------------------------------- query rendering

def _each_list(names: Sequence[str]) -> str:
    names = [f"each {n}" for n in names]
    if len(names) == 1:
        return names[0]
    return ", ".join(names[:-1]) + " and " + names[-1]


def igsm_relation(dag: Dag, node: Node, analysis: bool = False) -> str:
    """Right-hand side of an iGSM premise, e.g. '8 more than each X'."""
    e = node.expr
    names = [dag[r].name for r in e.refs]
    if e.op == "const":
        return str(e.k)
    if e.op == "addk":
        if len(names) == 1:
            return f"{e.k} more than each {names[0]}"
        return f"{e.k} more than the sum of {_each_list(names)}"
    if e.op in ("sum", "children"):
        return _each_list(names) if len(names) == 1 else f"the sum of {_each_list(names)}"
    if e.op == "diff":
        word = "between" if analysis else "of"
        return f"the difference {word} each {names[0]} and each {names[1]}"
    if e.op == "scale":
        return f"{e.k} times each {names[0]}"
    raise TemplateError(f"no iGSM template for {e.op!r} (igsm premise templates)")


def pb_relation(dag: Dag, node: Node) -> str:
    """A PromptBench premise without its final period."""
    e = node.expr
    n = node.name
    names = [dag[r].name for r in e.refs]
    if e.op == "const":
        return f"The value of {n} is {e.k}"
    if e.op == "sum" and len(names) == 2:
        return f"{n} gets its value by adding together the value of {names[0]} and {names[1]}"
    if e.op == "mul":
        return f"{n} gets its value by multiplying together the value of {names[0]} and {names[1]}"
    if e.op == "diff":
        return f"{n} gets its value by subtracting the value of {names[1]} from the value of {names[0]}"
    if e.op == "square":
        return f"{n} gets its value by squaring the value that {names[0]} has"
    raise TemplateError(f"no PromptBench template for {e.op!r} (promptbench premise templates)")


def premise(dag: Dag, node: Node, family: str) -> str:
    if family == "igsm":
        return f"The number of each {node.name} equals {igsm_relation(dag, node)}."
    return pb_relation(dag, node) + "."


def split_name(name: str) -> tuple[str, str]:
    owner, _, thing = name.partition("'s ")
    if not thing:
        raise TemplateError(f"iGSM node name {name!r} is not of the form \"X's Y\"")
    return owner, thing


def question(dag: Dag, family: str) -> str:
    name = dag[dag.target].name
    if family == "igsm":
        owner, thing = split_name(name)
        return f"How many {thing} does each {owner} have?"
    return f"What is the value of {name}?"


def premise_nodes(dag: Dag, family: str) -> list[int]:
    if family == "igsm":
        return [n.id for n in dag.nodes if n.layer != "abstract"]
    return list(dag.ids)


def render_query(dag: Dag, family: str, seed=None,
                 order: Sequence[int] | None = None) -> list[str]:
    """Premise sentences in a seeded permutation (or ``order``), then the question."""
    _check_family(family)
    ids = premise_nodes(dag, family)
    if order is None:
        rng = np.random.default_rng(seed)
        ids = [ids[i] for i in rng.permutation(len(ids))]
    else:
        if sorted(order) != sorted(ids):
            raise ValueError("premise order must list every premise-bearing node once")
        ids = list(order)
    return [premise(dag, dag[i], family) for i in ids] + [question(dag, family)]


# ---------------------------------------------------------------- CoT rendering

def _check_family(family: str) -> None:
    if family not in FAMILIES:
        raise ValueError(f"unknown family {family!r}; expected one of {FAMILIES}")


def _check_order(dag: Dag, order: Sequence[int]) -> None:
    need = necessary(dag)
    if set(order) != need or len(order) != len(need):
        raise ValueError("solve order must cover exactly the target's ancestor closure")
    seen: set[int] = set()
    for nid in order:
        missing = [r for r in dag[nid].expr.refs if r not in seen]
        if missing:
            raise ValueError(f"node {nid} ordered before its dependencies {missing}")
        seen.add(nid)


def make_aliases(ids: Sequence[int], rng: np.random.Generator) -> dict[int, str]:
    letters = list(ALIAS_LETTERS)
    pool = [letters[i] for i in rng.permutation(len(letters))]
    if len(ids) > len(pool):
        pool += [a + b for a in ALIAS_LETTERS for b in ALIAS_LETTERS]
    return dict(zip(ids, pool))


def render_cot(dag: Dag, order: Sequence[int], family: str, seed=None,
               aliases: Mapping[int, str] | None = None,
               leads: Mapping[int, int] | None = None) -> tuple[CotStep, ...]:
    """One solve step per necessary node, in ``order``.

    iGSM steps get fresh single-letter aliases and rotating lead-in
    templates. PromptBench steps use node names as aliases.
    """
    _check_family(family)
    order = list(order)
    _check_order(dag, order)
    rng = np.random.default_rng(seed)
    if family == "promptbench":
        alias = {nid: dag[nid].name for nid in order}
    else:
        alias = dict(aliases) if aliases is not None else make_aliases(order, rng)
    if leads is None:
        leads = _pick_leads(dag, order, rng) if family == "igsm" else {}
    steps = []
    for nid in order:
        node = dag[nid]
        steps.append(CotStep(nid, alias[nid], base_chain(dag, node, family, alias),
                             lead=int(leads.get(nid, 0))))
    return tuple(steps)


def _pick_leads(dag: Dag, order: Sequence[int], rng: np.random.Generator) -> dict[int, int]:
    """Round-robin over the lead-in pools from a random offset, with jitter."""
    out = {}
    pos = {"c": int(rng.integers(len(IGSM_CONST_LEADS))), "o": int(rng.integers(len(IGSM_LEADS)))}
    for nid in order:
        kind = "c" if dag[nid].expr.op == "const" else "o"
        size = len(IGSM_CONST_LEADS) if kind == "c" else len(IGSM_LEADS)
        if rng.random() < 0.25:
            pos[kind] = int(rng.integers(size))
        out[nid] = pos[kind] % size
        pos[kind] += 1
    return out


def analysis_text(dag: Dag, node: Node, family: str) -> str:
    if family == "igsm":
        return IGSM_ANALYSIS.format(desc=igsm_relation(dag, node, analysis=True))
    rel = pb_relation(dag, node)
    return "since " + rel[0].lower() + rel[1:] if node.expr.op == "const" else "since " + rel


def render_step(dag: Dag, step: CotStep, family: str, alias: Mapping[int, str]) -> str:
    node = dag[step.node]
    a = step.alias
    if family == "igsm":
        if step.kind == "attempt":
            return "- " + IGSM_ATTEMPT.format(N=node.name, a=a, M=dag[step.missing].name)
        is_const = node.expr.op == "const"
        if "reflection-resolve" in step.behaviors:
            lead = IGSM_RESOLVE_LEADS[step.lead % len(IGSM_RESOLVE_LEADS)]
        elif is_const:
            lead = IGSM_CONST_LEADS[step.lead % len(IGSM_CONST_LEADS)]
        else:
            lead = IGSM_LEADS[step.lead % len(IGSM_LEADS)]
        parts = [lead.format(N=node.name, a=a, v=node.value)]
        if "analysis" in step.behaviors:
            parts.append(analysis_text(dag, node, family))
        verb = "So" if is_const else "Then"
        parts.append(f"{verb} {a} = " + " = ".join(step.chain) + ".")
        return "- " + " ".join(parts)
    # promptbench
    if step.kind == "attempt":
        return PB_ATTEMPT.format(N=a, sym=step.chain[0], M=alias.get(step.missing, dag[step.missing].name))
    head = "Let's get back to" if "reflection-resolve" in step.behaviors else "Let's solve"
    since = analysis_text(dag, node, family) + ", " if "analysis" in step.behaviors else ""
    if node.expr.op == "const":
        return f"{head} {a}, {since}{a} is {step.chain[-1]}"
    return f"{head} {a}, {since}{a} = " + " = ".join(step.chain)


def render_answer(dag: Dag, cot: Sequence[CotStep], family: str, gold: int) -> str:
    alias = {s.node: s.alias for s in cot}
    lines = [HEADER] + [render_step(dag, s, family, alias) for s in cot]
    lines.append(FOOTER.format(gold=gold))
    return "\n".join(lines)


# ---------------------------------------------------------------- chat records

def render_sft_record(task: Task, template_family: str = "qwen") -> str:
    if template_family not in CHAT_TEMPLATES:
        raise ValueError(f"unknown template family {template_family!r}")
    assistant = ANSWER_TEMPLATE.format(cot=task.answer_text(), gold=task.gold)
    return CHAT_TEMPLATES[template_family].format(
        system=SYSTEM_PROMPT, user=task.query_text(), assistant=assistant)


_SHAPE = re.compile(r"^\s*<think>.*?</think>\s*<answer>.*?</answer>\s*$", re.S)
_BOXED = re.compile(r"\\boxed\{([^{}]*)\}")
_INT = re.compile(r"^\s*[-+]?\d+\s*$")


@dataclass(frozen=True)
class ParsedOutput:
    final_answer: int | None
    format_ok: bool


def parse_model_output(text: str) -> ParsedOutput:
    """Shape check plus the last boxed integer inside the answer tag."""
    fmt = (_SHAPE.match(text) is not None and text.count("<think>") == 1
           and text.count("</think>") == 1 and text.count("<answer>") == 1
           and text.count("</answer>") == 1)
    start = text.rfind("<answer>")
    region = text if start < 0 else text[start:]
    end = region.find("</answer>")
    if end >= 0:
        region = region[:end]
    boxed = _BOXED.findall(region)
    final = None
    if boxed and _INT.match(boxed[-1]):
        final = int(boxed[-1])
    return ParsedOutput(final, fmt)


# ---------------------------------------------------------------- extraction

def _tpl_regex(tpl: str) -> str:
    out = re.escape(tpl)
    out = out.replace(re.escape("{N}"), r"(?P<N>.+?)", 1)
    out = out.replace(re.escape("{a}"), r"(?P<a>[A-Za-z]+)", 1)
    out = out.replace(re.escape("{a}"), r"(?P=a)")
    out = out.replace(re.escape("{v}"), r"(?P<v>-?\d+)")
    out = out.replace(re.escape("{M}"), r"(?P<M>.+?)")
    return out


_IGSM_ANALYSIS_RE = r"(?: We know that it equals [^.]*\.)?"
_IGSM_STEP_RES = (
    [("const", re.compile("^- " + _tpl_regex(t) + _IGSM_ANALYSIS_RE + r" So (?P=a) = (?P<chain>.+)\.$"))
     for t in IGSM_CONST_LEADS]
    + [("op", re.compile("^- " + _tpl_regex(t) + _IGSM_ANALYSIS_RE + r" Then (?P=a) = (?P<chain>.+)\.$"))
       for t in IGSM_LEADS]
    + [("resolve", re.compile("^- " + _tpl_regex(t) + _IGSM_ANALYSIS_RE
                              + r" (?:Then|So) (?P=a) = (?P<chain>.+)\.$"))
       for t in IGSM_RESOLVE_LEADS]
)
_IGSM_ATTEMPT_RE = re.compile("^- " + _tpl_regex(IGSM_ATTEMPT) + "$")

_IGSM_PREMISES = (
    ("const", re.compile(r"^The number of each (?P<N>.+?) equals (?P<k>-?\d+)\.$")),
    ("addk_many", re.compile(r"^The number of each (?P<N>.+?) equals (?P<k>\d+) more than the sum of (?P<L>.+)\.$")),
    ("addk", re.compile(r"^The number of each (?P<N>.+?) equals (?P<k>\d+) more than each (?P<A>.+)\.$")),
    ("scale", re.compile(r"^The number of each (?P<N>.+?) equals (?P<k>\d+) times each (?P<A>.+)\.$")),
    ("diff", re.compile(r"^The number of each (?P<N>.+?) equals the difference of each (?P<A>.+) and each (?P<B>.+)\.$")),
    ("sum_many", re.compile(r"^The number of each (?P<N>.+?) equals the sum of (?P<L>.+)\.$")),
    ("sum", re.compile(r"^The number of each (?P<N>.+?) equals each (?P<A>.+)\.$")),
)
_IGSM_QUESTION = re.compile(r"^How many (?P<Y>.+) does each (?P<X>.+) have\?$")

_PB_PREMISES = (
    ("const", re.compile(r"^The value of (?P<N>\w+) is (?P<k>-?\d+)\.$")),
    ("sum", re.compile(r"^(?P<N>\w+) gets its value by adding together the value of (?P<A>\w+) and (?P<B>\w+)\.$")),
    ("mul", re.compile(r"^(?P<N>\w+) gets its value by multiplying together the value of (?P<A>\w+) and (?P<B>\w+)\.$")),
    ("diff", re.compile(r"^(?P<N>\w+) gets its value by subtracting the value of (?P<B>\w+) from the value of (?P<A>\w+)\.$")),
    ("square", re.compile(r"^(?P<N>\w+) gets its value by squaring the value that (?P<A>\w+) has\.$")),
)
_PB_QUESTION = re.compile(r"^What is the value of (?P<N>\w+)\?$")
_PB_STEP = re.compile(r"^(?:Let's solve|Let's get back to) (?P<N>\w+), (?:since [^,]*, )?"
                      r"(?P=N) (?:is (?P<v>-?\d+)|= (?P<chain>.+))$")
_PB_ATTEMPT = re.compile(r"^Let's solve (?P<N>\w+), .*, wait, .*let's get back$")


def _split_each_list(text: str) -> list[str]:
    if not text.startswith("each "):
        raise ExtractionError(f"expected an 'each ...' list, got {text!r}")
    parts = re.split(r", each | and each ", text[len("each "):])
    return parts


def _parse_premises(lines: Sequence[str], family: str) -> dict[str, tuple]:
    """name -> (op, k, ref names), in sentence order."""
    out: dict[str, tuple] = {}
    table = _IGSM_PREMISES if family == "igsm" else _PB_PREMISES
    for line in lines:
        for form, rx in table:
            m = rx.match(line)
            if m:
                break
        else:
            raise ExtractionError(
                f"unparseable premise {line!r} (no match in {family} premise templates)")
        g = m.groupdict()
        k = int(g["k"]) if g.get("k") is not None else None
        if form in ("addk_many", "sum_many"):
            refs = _split_each_list(g["L"])
            form = form[:-5]
        elif g.get("B") is not None:
            refs = [g["A"], g["B"]]
        elif g.get("A") is not None:
            refs = [g["A"]]
        else:
            refs = []
        name = g["N"]
        if name in out:
            raise ExtractionError(f"node {name!r} has two premises")
        out[name] = (form, k, refs)
    return out


def _parse_answer(answer: str, family: str) -> tuple[dict[str, tuple[str, str]], list[str]]:
    """Solved nodes from the CoT: name -> (alias, chain text), plus solve order."""
    solved: dict[str, tuple[str, str]] = {}
    order: list[str] = []
    for raw in answer.splitlines():
        line = raw.strip()
        if not line or line == HEADER or re.match(r"^Thus, the answer is -?\d+\.$", line):
            continue
        if family == "igsm":
            if _IGSM_ATTEMPT_RE.match(line):
                continue
            for _, rx in _IGSM_STEP_RES:
                m = rx.match(line)
                if m:
                    break
            else:
                raise ExtractionError(f"unparseable CoT line {line!r} (no match in igsm step templates)")
            name, alias, chain = m["N"], m["a"], m["chain"]
        else:
            if _PB_ATTEMPT.match(line):
                continue
            m = _PB_STEP.match(line)
            if not m:
                raise ExtractionError(
                    f"unparseable CoT line {line!r} (no match in promptbench step templates)")
            name, alias = m["N"], m["N"]
            chain = m["v"] if m["v"] is not None else m["chain"]
        solved[name] = (alias, chain)
        order.append(name)
    return solved, order


def extract_dag(query: str | Sequence[str], answer: str, family: str, world=None) -> Dag:
    """Rebuild the task DAG from query and answer text by template matching.

    Nodes get ids in sorted-name order, so premise order never matters. iGSM
    aggregate nodes are never stated as premises. Their members come from the
    ``world`` ontology (the default world when None), falling back to the
    CoT line that computes them for categories the world does not know.
    """
    _check_family(family)
    lines = [l.strip() for l in (query.splitlines() if isinstance(query, str) else query)]
    lines = [l for l in lines if l]
    if not lines:
        raise ExtractionError("empty query")
    qrx = _IGSM_QUESTION if family == "igsm" else _PB_QUESTION
    qm = qrx.match(lines[-1])
    if not qm:
        raise ExtractionError(f"unparseable question {lines[-1]!r} ({family} question template)")
    target = f"{qm['X']}'s {qm['Y']}" if family == "igsm" else qm["N"]
    premises = _parse_premises(lines[:-1], family)
    solved, _ = _parse_answer(answer or "", family)

    abstract: dict[str, list[str]] = {}
    if family == "igsm":
        wanted = {r for _, _, refs in premises.values() for r in refs}
        wanted |= set(solved) | {target}
        for name in sorted(wanted - set(premises)):
            abstract[name] = _abstract_members(name, premises, solved, world)
    elif target not in premises:
        raise ExtractionError(f"target {target!r} has no premise")

    names = sorted(set(premises) | set(abstract))
    ident = {n: i for i, n in enumerate(names)}
    from .dag import Expr
    nodes = []
    for n in names:
        if n in premises:
            form, k, refs = premises[n]
            for r in refs:
                if r not in ident:
                    raise ExtractionError(f"premise of {n!r} references unknown node {r!r}")
            expr = Expr(form, tuple(ident[r] for r in refs), k)
            layer = "instance" if family == "igsm" else None
        else:
            expr = Expr("children", tuple(ident[r] for r in abstract[n]))
            layer = "abstract"
        nodes.append(Node(ident[n], n, expr, layer=layer))
    dag = classify_roles(with_values(Dag(tuple(nodes), ident[target])))

    for name, (alias, chain) in solved.items():
        stated = int(chain.rsplit(" = ", 1)[-1])
        if stated != dag.by_name[name].value:
            raise ExtractionError(
                f"CoT states {name} = {stated} but premises give {dag.by_name[name].value}")
    return dag


def _abstract_members(name: str, premises: Mapping[str, tuple],
                      solved: Mapping[str, tuple[str, str]], world) -> list[str]:
    owner, kind = split_name(name)
    if world is None:
        from .igsm import default_world
        world = default_world()
    if kind in world.instances:
        pool = world.instances[kind]
    elif kind == world.item_category:
        pool = world.items
    else:
        pool = None
    if pool is not None:
        members = [f"{owner}'s {m}" for m in pool if f"{owner}'s {m}" in premises]
        if members:
            return members
    if name not in solved:
        raise ExtractionError(f"cannot infer members of {name!r}: unknown category, not in CoT")
    alias_of = {a: n for n, (a, _) in solved.items()}
    sym = solved[name][1].split(" = ")[0]
    try:
        return [alias_of[t.strip()] for t in sym.split("+")]
    except KeyError as e:
        raise ExtractionError(f"aggregate {name!r} uses unknown alias {e}") from None
