"""Command-line entry point: ``bridgelab <command> ...``.

Every command is deterministic given its inputs and seeds. Verification
failures exit with status 1, usage errors with status 2.
"""
from __future__ import annotations

import argparse
import json
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import __version__
from .behaviors import InjectConfig, bridge_augment, cot_problems, pp_aug, rc_aug, rejection_filter
from .cot import CHAT_TEMPLATES, parse_model_output, render_sft_record
from .igsm import IgsmConfig, IgsmWorld, generate_igsm
from .influence import (GroupGrads, ProjectionSpec, grouped_influence_report, load_gvec,
                        project_many, report_csv, save_gvec)
from .objective import (GrpoConfig, RolloutGroup, group_advantages, info_coefficient,
                        outcome_reward, parse_variant, per_step_influence, raw_influence,
                        taylor_influence_check)
from .promptbench import PbConfig, generate_pb
from .records import (atomic_write, dataset_text, default_seed, dumps, load_config,
                      merge_config, read_dataset, read_header, read_jsonl, task_seed,
                      write_dataset, write_jsonl)


class VerificationFailure(RuntimeError):
    pass


def _pmap(fn: Callable, items: Sequence, workers: int) -> list:
    """Order-preserving map; results never depend on ``workers``."""
    if workers <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items))


# ---------------------------------------------------------------- gen

GEN_DEFAULTS = {
    "igsm": {"op_range": [15, 20], "answer_range": [-1000, 1000], "max_regen_attempts": 2000,
             "const_range": [0, 9], "scale_range": [2, 9]},
    "pb": {"depth": 4, "redundancy_range": [0, 2], "leaf_value_set": list(range(1, 11)),
           "answer_range": [-1000, 1000], "operator_set": ["add", "sub", "mul", "square"],
           "max_regen_attempts": 5000},
}


def cmd_gen(args) -> None:
    file_cfg = load_config(args.config)
    world = IgsmWorld.from_dict(file_cfg.pop("world")) if "world" in file_cfg else None
    flags = {"count": args.count, "seed": args.seed}
    if args.family == "igsm":
        flags["op_range"] = args.op_range
    else:
        flags["depth"] = args.depth
        flags["redundancy_range"] = args.redundancy
    cfg = merge_config({**GEN_DEFAULTS[args.family], "count": 10, "seed": default_seed()},
                       file_cfg, flags)
    count, seed = int(cfg.pop("count")), int(cfg.pop("seed"))
    if args.family == "igsm":
        gcfg = IgsmConfig(**{k: tuple(v) if isinstance(v, list) else v for k, v in cfg.items()})
        make = lambda i: generate_igsm(gcfg, world, task_seed(seed, i))
    else:
        cfg["leaf_value_set"] = tuple(cfg["leaf_value_set"])
        cfg["operator_set"] = tuple(cfg["operator_set"])
        gcfg = PbConfig(**{k: tuple(v) if isinstance(v, list) else v for k, v in cfg.items()})
        make = lambda i: generate_pb(gcfg, task_seed(seed, i))
    tasks = _pmap(make, range(count), args.workers)
    tasks = [replace(t, id=f"{args.family}-{seed}-{i}") for i, t in enumerate(tasks)]
    effective = {"command": f"gen {args.family}", "count": count, "seed": seed, **cfg}
    if world is not None:
        effective["world"] = world.to_dict()
    write_dataset(tasks, args.out, effective)
    print(f"wrote {len(tasks)} tasks to {args.out}")


# ---------------------------------------------------------------- augment

def cmd_augment(args) -> None:
    tasks = read_dataset(args.inp, strict=True)
    seed = args.seed if args.seed is not None else default_seed()
    if args.method == "bridge":
        cfg = InjectConfig(p=args.p, subgoal_always=not args.no_subgoal, seed=seed,
                           max_reflections=args.max_reflections)
        out = _pmap(lambda t: bridge_augment(t, cfg), tasks, args.workers)
    else:
        fn = pp_aug if args.method == "pp" else rc_aug
        copies = _pmap(lambda t: fn(t, args.copies, seed), tasks, args.workers)
        out = [x for t, c in zip(tasks, copies) for x in [t, *c]]
    bad = [t.id for t in out if cot_problems(t)]
    if bad:
        raise VerificationFailure(f"augmented tasks fail verification: {bad[:5]}")
    header = read_header(args.inp).get("config", {})
    write_dataset(out, args.out, {**header, "augment": {"method": args.method, "p": args.p,
                                                        "copies": args.copies, "seed": seed}})
    print(f"wrote {len(out)} tasks to {args.out}")


def cmd_filter(args) -> None:
    counts = {r["query_id"]: (int(r["n"]), int(r["N"])) for r in read_jsonl(args.rollouts)}
    keep = set(rejection_filter(counts))
    tasks = [t for t in read_dataset(args.inp) if t.id in keep]
    write_dataset(tasks, args.out, {**read_header(args.inp).get("config", {}), "filter": "reject"})
    print(f"kept {len(tasks)} of {len(counts)} rolled-out queries")


def cmd_sft_export(args) -> None:
    tasks = read_dataset(args.inp)
    write_jsonl(({"id": t.id, "text": render_sft_record(t, args.template_family)} for t in tasks),
                args.out)
    print(f"wrote {len(tasks)} records to {args.out}")


# ---------------------------------------------------------------- scoring

def cmd_score(args) -> None:
    gold = {t.id: t.gold for t in read_dataset(args.gold, strict=False)}
    groups: dict[str, list] = {}
    for rec in read_jsonl(args.outputs):
        qid = rec["query_id"]
        if qid not in gold:
            raise VerificationFailure(f"output for unknown query {qid!r}")
        correct = outcome_reward(rec["output"], gold[qid])
        total = outcome_reward(rec["output"], gold[qid], format_bonus=args.format_bonus)
        g = groups.setdefault(qid, [[], []])
        g[0].append(correct)
        g[1].append(round(total - correct, 10))
    rows = [{"query_id": q, "rewards": r, "format_bonus": b, "n": int(sum(r)), "N": len(r)}
            for q, (r, b) in groups.items()]
    _emit(rows, args.out)


def cmd_advantage(args) -> None:
    name, c = parse_variant(args.variant)
    rows = []
    for rec in read_jsonl(args.rewards):
        r = [float(x) for x in rec["rewards"]]
        n = int(sum(1 for x in r if x >= 1.0))
        if name == "dapo" and n in (0, len(r)):
            continue
        adv = group_advantages(r, name, c)
        rows.append({"query_id": rec["query_id"], "n": n, "N": len(r), "rewards": r,
                     "advantage": [float(a) for a in adv],
                     "coefficient": info_coefficient(n / len(r), name, c)})
    _emit(rows, args.out)


def _emit(rows: list[dict], out: str | None) -> None:
    if out:
        write_jsonl(rows, out)
    else:
        for r in rows:
            print(dumps(r))


# ---------------------------------------------------------------- influence

def load_groups(rollouts: str | Path, grads_dir: str | Path, workers: int = 1) -> tuple[list[GroupGrads], dict]:
    recs = read_jsonl(rollouts)
    grads_dir = Path(grads_dir)

    def load(rec):
        vecs = [load_gvec(grads_dir / ref) for ref in rec["grad_ref"]]
        return rec, np.stack([v.values for v in vecs]), vecs[0].origin, vecs[0].spec

    loaded = _pmap(load, recs, workers)
    origins = {(o, s) for _, _, o, s in loaded}
    if len(origins) > 1:
        raise VerificationFailure("gradient files mix raw and projected spaces")
    groups = [GroupGrads(rec["query_id"], g, np.asarray(rec["rewards"]) >= 1.0,
                         np.asarray(rec["advantage"], dtype=np.float64))
              for rec, g, _, _ in loaded]
    origin, spec = next(iter(origins)) if origins else ("raw", None)
    return groups, {"origin": origin, "spec": spec}


def cmd_influence(args) -> None:
    groups, info = load_groups(args.rollouts, args.grads, args.workers)
    if args.project:
        if info["origin"] != "raw":
            raise VerificationFailure("gradients are already projected")
        dim = groups[0].grads.shape[1]
        spec = ProjectionSpec(args.seed if args.seed is not None else default_seed(), dim,
                              args.project)
        sizes = [g.grads.shape[0] for g in groups]
        flat = project_many(np.concatenate([g.grads for g in groups]), spec)
        parts = np.split(flat, np.cumsum(sizes)[:-1])
        groups = [GroupGrads(g.query_id, p, g.correct, g.advantages) for g, p in zip(groups, parts)]
    rows = grouped_influence_report(groups, args.variant, eta=args.eta)
    for r in rows:
        if r.n in (0, r.N) and r.count and r.mean_influence != 0.0:
            raise VerificationFailure(f"degenerate bucket {r.bucket} has nonzero influence")
    text = report_csv(rows)
    if args.out:
        atomic_write(args.out, text)
    else:
        sys.stdout.write(text)


# ---------------------------------------------------------------- toy

def cmd_toy(args) -> None:
    from . import toy_policy as tp

    cfg = load_config(args.config)
    seed = args.seed if args.seed is not None else int(cfg.get("seed", default_seed()))
    if args.action == "rollout":
        _toy_rollout(args, cfg, seed)
    elif args.action == "sft":
        pol = tp.ToyPolicy.init(seed=seed, scale=0.1)
        data = [tp.micro_task(task_seed(seed, i)) for i in range(int(cfg.get("tasks", 32)))]
        batch = [(m.query, tp.answer_tokens(m.gold)) for m in data]
        lr = float(cfg.get("lr", 0.5))
        prev = tp.mean_nll(pol, batch)
        print(f"step 0 nll {prev:.6f}")
        for step in range(1, int(cfg.get("steps", 20)) + 1):
            pol = tp.sft_step(pol, batch, lr)
            nll = tp.mean_nll(pol, batch)
            print(f"step {step} nll {nll:.6f}")
            if nll > prev + 1e-12:
                raise VerificationFailure("NLL increased during SFT")
            prev = nll
        if args.policy_out:
            tp.save_policy(pol, args.policy_out)
    elif args.action == "grpo":
        pol = tp.load_policy(args.policy) if args.policy else tp.ToyPolicy.init(seed=seed)
        gcfg = GrpoConfig(N=int(cfg.get("N", 8)), beta=float(cfg.get("beta", 0.0)),
                          eta=float(cfg.get("eta", 0.5)), variant=cfg.get("variant", "grpo"))
        for step in range(int(cfg.get("steps", 10))):
            m = tp.micro_task(task_seed(seed, step))
            grp = tp.rollout(pol, f"q{step}", m.query, m.gold, gcfg.N, seed=task_seed(seed + 1, step),
                             variant=gcfg.variant)
            pol = tp.grpo_step(pol, grp, gcfg)
            print(f"step {step} n {grp.n}/{grp.N} digest {pol.digest()}")
        if args.policy_out:
            tp.save_policy(pol, args.policy_out)
    elif args.action == "check-taylor":
        ratios = taylor_ratios(seed, int(cfg.get("halvings", 4)), float(cfg.get("eta", 0.1)))
        for r in ratios:
            print(f"ratio {r:.4f}")
        if not all(2.8 <= r <= 5.5 for r in ratios):
            raise VerificationFailure("Taylor error does not shrink quadratically")
    elif args.action == "check-grouped":
        worst = grouped_form_gap(seed, int(cfg.get("instances", 20)))
        print(f"max relative gap {worst:.3e}")
        if worst > 1e-10:
            raise VerificationFailure("grouped and raw influence forms disagree")


def random_instance(seed: int, V: int = 15, N: int = 8, groups: int = 3):
    """A random policy with mixed-reward groups sampled from it (for self-checks)."""
    from . import toy_policy as tp

    rng = np.random.default_rng(seed)
    vocab = tuple(f"t{i}" for i in range(V - 1)) + ("<eos>",)
    pol = tp.ToyPolicy(rng.standard_normal((V + 1, V)), vocab)
    out = []
    for k in range(groups):
        q = tuple(int(x) for x in rng.integers(0, V, size=2))
        outs = tp.sample_group(pol, q, N, max_len=6, seed=rng)
        rewards = [0.0] * N
        n = int(rng.integers(1, N)) if k < groups - 1 else int(rng.integers(0, N + 1))
        for i in rng.choice(N, size=n, replace=False):
            rewards[int(i)] = 1.0
        out.append(RolloutGroup(f"q{k}", tuple(outs), tuple(rewards), q))
    return pol, out


def grouped_form_gap(seed: int, instances: int) -> float:
    from . import toy_policy as tp

    worst = 0.0
    for i in range(instances):
        pol, groups = random_instance(task_seed(seed, i))
        train = groups[0]
        G = np.stack([tp.grad_logprob_array(pol, train.query, o) for o in train.outputs])
        T = np.stack([tp.grad_logprob_array(pol, g.query, o) for g in groups for o in g.outputs])
        A = np.concatenate([g.advantages for g in groups])
        a = per_step_influence(G, train.correct, T, A)
        b = raw_influence(G, train.advantages, T, A)
        worst = max(worst, abs(a - b) / max(abs(b), 1e-300))
    return worst


def taylor_ratios(seed: int, halvings: int = 4, eta: float = 0.1) -> list[float]:
    pol, groups = random_instance(seed)
    errs = [taylor_influence_check(pol, groups[0], groups, eta / 2 ** k)["error"]
            for k in range(halvings + 1)]
    return [errs[k] / errs[k + 1] for k in range(halvings)]


def _read_golds(path: str) -> list[tuple[str, int]]:
    """(id, gold) from a task dataset or from an SFT export (gold read from the answer)."""
    if read_header(path):
        return [(t.id, t.gold) for t in read_dataset(path, strict=False)]
    out = []
    for rec in read_jsonl(path):
        parsed = parse_model_output(rec["text"][rec["text"].rfind("<think>"):])
        if parsed.final_answer is None:
            raise VerificationFailure(f"record {rec['id']!r} has no boxed integer answer")
        out.append((rec["id"], parsed.final_answer))
    return out


def _toy_rollout(args, cfg: dict, seed: int) -> None:
    """Echo the units digit of each answer with a briefly SFT-trained toy policy.

    Writes one gradient file per output and a rollout table for ``influence``.
    """
    from . import toy_policy as tp

    golds = _read_golds(args.inp)
    N = int(cfg.get("N", args.n))
    pol = tp.ToyPolicy.init(seed=seed, scale=0.1)
    items = []
    for _, gold in golds:
        d = abs(gold) % 10
        items.append((tp.answer_tokens(d)[:1], d))
    batch = [(q, q) for q, _ in items]  # one-token answers: the digit itself
    for _ in range(int(cfg.get("sft_steps", args.sft_steps))):
        pol = tp.sft_step(pol, batch, float(cfg.get("lr", args.lr)))
    grads_dir = Path(args.grads_out)
    grads_dir.mkdir(parents=True, exist_ok=True)

    def run(idx):
        (qid, _), (q, d) = golds[idx], items[idx]
        grp = tp.rollout(pol, qid, q, d, N, max_len=1, seed=task_seed(seed, idx))
        refs = []
        for i, o in enumerate(grp.outputs):
            ref = f"{idx:06d}_{i:03d}.gvec"
            save_gvec(tp.grad_logprob(pol, q, o, query_id=qid, sample_id=i,
                                      advantage=float(grp.advantages[i]),
                                      correct=bool(grp.correct[i])), grads_dir / ref)
            refs.append(ref)
        return {**grp.to_record(), "grad_ref": refs}

    rows = _pmap(run, range(len(golds)), args.workers)
    write_jsonl(rows, args.rollouts_out)
    if args.policy_out:
        tp.save_policy(pol, args.policy_out)
    print(f"rolled out {len(rows)} groups of {N}")


# ---------------------------------------------------------------- parser

def _pair(text: str) -> list[int]:
    parts = text.replace(",", " ").split()
    if len(parts) != 2:
        raise argparse.ArgumentTypeError("expected two integers, e.g. 15,20")
    return [int(p) for p in parts]


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bridgelab", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="generate a task corpus")
    g.add_argument("family", choices=["igsm", "pb"])
    g.add_argument("--config")
    g.add_argument("--count", type=int)
    g.add_argument("--seed", type=int)
    g.add_argument("--op-range", type=_pair, help="igsm: inclusive op-count range, e.g. 15,20")
    g.add_argument("--depth", type=int, help="pb: tree depth")
    g.add_argument("--redundancy", type=_pair, help="pb: redundancy range, e.g. 0,8 (or a single value twice)")
    g.add_argument("--workers", type=int, default=1)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen)

    a = sub.add_parser("augment", help="behavior injection or baseline augmentation")
    a.add_argument("method", choices=["bridge", "pp", "rc"])
    a.add_argument("--p", type=float, default=0.1)
    a.add_argument("--copies", type=int, default=3)
    a.add_argument("--seed", type=int)
    a.add_argument("--max-reflections", type=int)
    a.add_argument("--no-subgoal", action="store_true")
    a.add_argument("--workers", type=int, default=1)
    a.add_argument("--in", dest="inp", required=True)
    a.add_argument("--out", required=True)
    a.set_defaults(func=cmd_augment)

    f = sub.add_parser("filter", help="filter a corpus by rollout accuracy")
    f.add_argument("method", choices=["reject"])
    f.add_argument("--rollouts", required=True)
    f.add_argument("--in", dest="inp", required=True)
    f.add_argument("--out", required=True)
    f.set_defaults(func=cmd_filter)

    s = sub.add_parser("sft-export", help="render chat-formatted SFT records")
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--template-family", default="qwen", choices=sorted(CHAT_TEMPLATES))
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_sft_export)

    sc = sub.add_parser("score", help="score model outputs against gold answers")
    sc.add_argument("--outputs", required=True, help="JSONL of {query_id, output}")
    sc.add_argument("--gold", required=True)
    sc.add_argument("--format-bonus", action="store_true")
    sc.add_argument("--out")
    sc.set_defaults(func=cmd_score)

    ad = sub.add_parser("advantage", help="group advantages from a rewards table")
    ad.add_argument("--rewards", required=True)
    ad.add_argument("--variant", default="grpo", help="grpo | drgrpo | gpg:C | dapo")
    ad.add_argument("--out")
    ad.set_defaults(func=cmd_advantage)

    i = sub.add_parser("influence", help="accuracy-bucketed per-step influence report")
    i.add_argument("--grads", required=True)
    i.add_argument("--rollouts", required=True)
    i.add_argument("--project", type=int, default=0, help="projection dim (0 = none)")
    i.add_argument("--seed", type=int)
    i.add_argument("--variant", default="grpo")
    i.add_argument("--eta", type=float, help="multiply by the learning rate")
    i.add_argument("--workers", type=int, default=1)
    i.add_argument("--out")
    i.set_defaults(func=cmd_influence)

    t = sub.add_parser("toy", help="toy-policy training and self-checks")
    t.add_argument("action", choices=["sft", "grpo", "check-taylor", "check-grouped", "rollout"])
    t.add_argument("--config")
    t.add_argument("--seed", type=int)
    t.add_argument("--policy")
    t.add_argument("--policy-out")
    t.add_argument("--in", dest="inp")
    t.add_argument("--n", type=int, default=8)
    t.add_argument("--sft-steps", type=int, default=20)
    t.add_argument("--lr", type=float, default=1.0)
    t.add_argument("--grads-out")
    t.add_argument("--rollouts-out")
    t.add_argument("--workers", type=int, default=1)
    t.set_defaults(func=cmd_toy)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "action", None) == "rollout" and not (args.inp and args.grads_out and args.rollouts_out):
        parser.error("toy rollout needs --in, --grads-out and --rollouts-out")
    try:
        args.func(args)
    except VerificationFailure as e:
        print(f"verification failed: {e}", file=sys.stderr)
        return 1
    except (ValueError, KeyError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
