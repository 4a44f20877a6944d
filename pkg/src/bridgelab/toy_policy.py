"""A bigram softmax policy with exact gradients.

Parameters are a (V + 1) x V logit table. Row 0 is the start context; row
t + 1 is the context after token t. The first output token is conditioned
on the last query token, or on the start row when the query is empty.
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from . import _kernels
from .dag import Dag, Node, const, diff, mul, plain_sum, with_values
from .objective import GrpoConfig, RolloutGroup, group_advantages
from .records import read_binary, write_binary

MICRO_VOCAB = tuple("0123456789") + ("+", "-", "*", "=", "<eos>")
POLICY_KIND = "toy-policy"


class StaleGroupError(RuntimeError):
    pass


@dataclass(frozen=True)
class ToyPolicy:
    theta: np.ndarray
    vocab: tuple[str, ...] = MICRO_VOCAB
    theta_ref: np.ndarray | None = None
    lineage: tuple[str, ...] = ()

    def __post_init__(self):
        th = np.array(self.theta, dtype=np.float64)
        V = len(self.vocab)
        if not 1 <= V <= 64:
            raise ValueError("vocabulary size must be in 1..64")
        if th.shape != (V + 1, V):
            raise ValueError(f"theta must have shape {(V + 1, V)}, got {th.shape}")
        th.flags.writeable = False
        object.__setattr__(self, "theta", th)
        if self.theta_ref is not None:
            ref = np.array(self.theta_ref, dtype=np.float64)
            if ref.shape != th.shape:
                raise ValueError("theta_ref shape differs from theta")
            ref.flags.writeable = False
            object.__setattr__(self, "theta_ref", ref)
        object.__setattr__(self, "vocab", tuple(self.vocab))
        object.__setattr__(self, "lineage", tuple(self.lineage))

    @classmethod
    def init(cls, vocab: Sequence[str] = MICRO_VOCAB, seed: int = 0, scale: float = 1.0,
             ref: bool = True) -> "ToyPolicy":
        rng = np.random.default_rng(seed)
        th = scale * rng.standard_normal((len(vocab) + 1, len(vocab)))
        return cls(th, tuple(vocab), th if ref else None, (f"init:{seed}",))

    @property
    def V(self) -> int:
        return len(self.vocab)

    @property
    def eos(self) -> int:
        return self.vocab.index("<eos>") if "<eos>" in self.vocab else -1

    @property
    def n_params(self) -> int:
        return self.theta.size

    def digest(self) -> str:
        return hashlib.sha256(self.theta.tobytes()).hexdigest()[:16]

    def with_theta(self, theta: np.ndarray, note: str | None = None) -> "ToyPolicy":
        lineage = self.lineage + ((note,) if note else ())
        return replace(self, theta=theta, lineage=lineage)

    def probs(self, context_row: int, temperature: float = 1.0) -> np.ndarray:
        z = self.theta[context_row] / temperature
        return _kernels.softmax(np.ascontiguousarray(z))

    # token helpers
    def encode(self, tokens: Iterable[str]) -> tuple[int, ...]:
        try:
            return tuple(self.vocab.index(t) for t in tokens)
        except ValueError:
            raise KeyError(f"token not in vocabulary: {list(tokens)}") from None

    def decode(self, ids: Iterable[int]) -> list[str]:
        return [self.vocab[i] for i in ids]


def _contexts(policy: ToyPolicy, q: Sequence[int], o: Sequence[int]) -> tuple[np.ndarray, np.ndarray]:
    V = policy.V
    for t in list(q) + list(o):
        if not 0 <= t < V:
            raise KeyError(f"unknown token id {t}")
    first = q[-1] + 1 if len(q) else 0
    ctx = np.array([first] + [t + 1 for t in o[:-1]], dtype=np.int64)[:len(o)]
    return ctx, np.asarray(o, dtype=np.int64)


def logprob(policy: ToyPolicy, q: Sequence[int], o: Sequence[int]) -> float:
    """sum_t log pi(o_t | context_t)."""
    if len(o) == 0:
        _contexts(policy, q, o)
        return 0.0
    ctx, tok = _contexts(policy, q, o)
    lp, _ = _kernels.seq_grad(policy.theta, ctx, tok)
    return float(lp)


def token_logprobs(policy: ToyPolicy, q: Sequence[int], o: Sequence[int]) -> list[float]:
    ctx, tok = _contexts(policy, q, o)
    return [float(np.log(policy.probs(c)[t])) for c, t in zip(ctx, tok)]


def token_distributions(policy: ToyPolicy, q: Sequence[int], o: Sequence[int]) -> np.ndarray:
    """Next-token distribution at every position of ``o`` (len(o) x V)."""
    ctx, _ = _contexts(policy, q, o)
    return np.array([policy.probs(c) for c in ctx]).reshape(len(ctx), policy.V)


def grad_logprob_array(policy: ToyPolicy, q: Sequence[int], o: Sequence[int]) -> np.ndarray:
    """d/dtheta log pi(o | q), flattened; each step adds (onehot - softmax) to its context row."""
    if len(o) == 0:
        _contexts(policy, q, o)
        return np.zeros(policy.n_params)
    ctx, tok = _contexts(policy, q, o)
    _, g = _kernels.seq_grad(policy.theta, ctx, tok)
    return g.reshape(-1)


def grad_logprob(policy: ToyPolicy, q: Sequence[int], o: Sequence[int], **meta):
    from .influence import GradVector
    return GradVector(grad_logprob_array(policy, q, o), "raw", None, dict(meta))


def sample_group(policy: ToyPolicy, q: Sequence[int], N: int, temperature: float = 1.0,
                 max_len: int = 8, seed: int | np.random.Generator = 0) -> list[tuple[int, ...]]:
    """N independent ancestral samples; temperature 0 decodes greedily."""
    if N < 1:
        raise ValueError("N must be >= 1")
    if temperature < 0:
        raise ValueError("temperature must be >= 0")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    u = rng.random((N, max_len))
    ctx0 = q[-1] + 1 if len(q) else 0
    inv = 0.0 if temperature == 0 else 1.0 / temperature
    toks, lens = _kernels.sample_sequences(policy.theta, int(ctx0), u, float(inv), int(policy.eos))
    return [tuple(int(t) for t in toks[i, :lens[i]]) for i in range(N)]


def mean_nll(policy: ToyPolicy, batch: Sequence[tuple[Sequence[int], Sequence[int]]]) -> float:
    return -math.fsum(logprob(policy, q, o) for q, o in batch) / len(batch)


def sft_step(policy: ToyPolicy, batch: Sequence[tuple[Sequence[int], Sequence[int]]],
             lr: float) -> ToyPolicy:
    """One gradient-descent step on the mean sequence NLL of ``batch``."""
    if not batch:
        raise ValueError("empty batch")
    g = np.zeros(policy.n_params)
    for q, o in batch:
        g += grad_logprob_array(policy, q, o)
    g /= len(batch)
    return policy.with_theta(policy.theta + lr * g.reshape(policy.theta.shape))


def policy_gradient(policy: ToyPolicy, *groups: RolloutGroup) -> np.ndarray:
    """mean over all outputs of A_i * grad log pi(o_i | q)."""
    total = np.zeros(policy.n_params)
    count = 0
    for g in groups:
        for o, a in zip(g.outputs, g.advantages):
            if a != 0.0:
                total += a * grad_logprob_array(policy, g.query, o)
            count += 1
    return total / max(count, 1)


# ---------------------------------------------------------------- KL to the reference

def kl_lowvar(policy: ToyPolicy, q: Sequence[int], o: Sequence[int]) -> float:
    """Per-sequence k3 estimate sum_t (r - log r - 1), r = pi_ref / pi at o_t."""
    if policy.theta_ref is None:
        return 0.0
    ref = replace(policy, theta=policy.theta_ref)
    out = 0.0
    for lp, lr_ in zip(token_logprobs(policy, q, o), token_logprobs(ref, q, o)):
        r = math.exp(lr_ - lp)
        out += r - (lr_ - lp) - 1.0
    return out


def kl_lowvar_grad(policy: ToyPolicy, q: Sequence[int], o: Sequence[int]) -> np.ndarray:
    """Gradient of ``kl_lowvar`` in theta with the sample held fixed: sum_t (1 - r_t) grad log pi(o_t)."""
    g = np.zeros_like(policy.theta)
    if policy.theta_ref is None:
        return g.reshape(-1)
    ref = replace(policy, theta=policy.theta_ref)
    ctx, tok = _contexts(policy, q, o)
    for c, t in zip(ctx, tok):
        p, pr = policy.probs(c), ref.probs(c)
        w = 1.0 - pr[t] / p[t]
        g[c, t] += w
        g[c] -= w * p
    return g.reshape(-1)


def kl_exact(policy: ToyPolicy, context_row: int) -> float:
    """KL(pi || pi_ref) of one context row."""
    if policy.theta_ref is None:
        return 0.0
    p = policy.probs(context_row)
    pr = replace(policy, theta=policy.theta_ref).probs(context_row)
    return float(np.sum(p * (np.log(p) - np.log(pr))))


def grpo_step(policy: ToyPolicy, group: RolloutGroup, config: GrpoConfig) -> ToyPolicy:
    """theta += eta (1/N) sum_i A_i grad log pi(o_i) - eta beta grad KL.

    The group must come from this exact policy snapshot (strictly on-policy).
    """
    if group.policy_digest is not None and group.policy_digest != policy.digest():
        raise StaleGroupError("rollout group was sampled from a different policy snapshot")
    adv = group_advantages(group.rewards, config.variant)
    step = np.zeros(policy.n_params)
    for o, a in zip(group.outputs, adv):
        if a != 0.0:
            step += a * grad_logprob_array(policy, group.query, o)
    step /= group.N
    if config.beta > 0 and policy.theta_ref is not None:
        kl = np.zeros(policy.n_params)
        for o in group.outputs:
            kl += kl_lowvar_grad(policy, group.query, o)
        step -= config.beta * kl / group.N
    if not step.any():
        return policy
    return policy.with_theta(policy.theta + config.eta * step.reshape(policy.theta.shape))


# ---------------------------------------------------------------- micro tasks

@dataclass(frozen=True)
class MicroTask:
    query: tuple[int, ...]
    gold: int
    dag: Dag


def micro_task(seed: int, policy: ToyPolicy | None = None) -> MicroTask:
    """A two-operand arithmetic problem 'a+b=' over the digit vocabulary."""
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 0x70]))
    a, b = (int(x) for x in rng.integers(0, 10, size=2))
    op = ["+", "-", "*"][int(rng.integers(3))]
    node = {"+": plain_sum([0, 1]), "-": diff(0, 1), "*": mul(0, 1)}[op]
    dag = with_values(Dag((Node(0, "a", const(a)), Node(1, "b", const(b)), Node(2, "c", node)), 2))
    vocab = policy.vocab if policy else MICRO_VOCAB
    query = tuple(vocab.index(t) for t in (str(a), op, str(b), "="))
    return MicroTask(query, dag[2].value, dag)


def answer_tokens(value: int, policy: ToyPolicy | None = None) -> tuple[int, ...]:
    vocab = policy.vocab if policy else MICRO_VOCAB
    return tuple(vocab.index(ch) for ch in str(value)) + (vocab.index("<eos>"),)


def output_text(policy: ToyPolicy, o: Sequence[int]) -> str:
    """Wrap decoded digits in the answer template so the standard scorer applies."""
    toks = [t for t in policy.decode(o) if t != "<eos>"]
    return f"<think> </think> <answer> The final answer is \\boxed{{{''.join(toks)}}} </answer>"


def rollout(policy: ToyPolicy, query_id: str, q: Sequence[int], gold: int, N: int,
            temperature: float = 1.0, max_len: int = 6, seed=0,
            variant: str = "grpo") -> RolloutGroup:
    from .objective import outcome_reward
    outs = sample_group(policy, q, N, temperature, max_len, seed)
    rewards = tuple(outcome_reward(output_text(policy, o), gold) for o in outs)
    return RolloutGroup(query_id, tuple(outs), rewards, tuple(q), variant=variant,
                        policy_digest=policy.digest())


# ---------------------------------------------------------------- persistence

def save_policy(policy: ToyPolicy, path: str | Path) -> None:
    arr = policy.theta if policy.theta_ref is None else np.stack([policy.theta, policy.theta_ref])
    header = {"kind": POLICY_KIND, "V": policy.V, "context_order": 1, "vocab": list(policy.vocab),
              "has_ref": policy.theta_ref is not None, "lineage": list(policy.lineage)}
    write_binary(path, header, arr)


def load_policy(path: str | Path) -> ToyPolicy:
    header, arr = read_binary(path)
    if header.get("kind") != POLICY_KIND:
        raise ValueError(f"{path}: not a policy file")
    if header.get("context_order") != 1:
        raise ValueError(f"{path}: unsupported context order {header.get('context_order')}")
    theta, ref = (arr[0], arr[1]) if header["has_ref"] else (arr, None)
    return ToyPolicy(theta, tuple(header["vocab"]), ref, tuple(header["lineage"]))
