"""Rewards, group advantages, information coefficients and per-step influence.

Advantage variants:

* ``grpo``/``dapo``: (r - mean) / std with the population std;
* ``drgrpo``: r - mean;
* ``gpg:C``: C * (r - mean).

For a group with n of N correct and accuracy a = n/N, a GRPO step on the
group moves the parameters by coef(a) * (mean correct grad - mean incorrect
grad), where coef is ``info_coefficient``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .cot import parse_model_output

FORMAT_BONUS = 0.05
VARIANTS = ("grpo", "drgrpo", "gpg", "dapo")


def parse_variant(variant: str, C: float | None = None) -> tuple[str, float]:
    """'gpg:0.5' -> ('gpg', 0.5); other names carry C = 1."""
    name, _, arg = variant.partition(":")
    if name not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")
    if arg and name != "gpg":
        raise ValueError(f"variant {name} takes no parameter")
    c = float(arg) if arg else (1.0 if C is None else float(C))
    if name == "gpg" and not c > 0:
        raise ValueError("gpg coefficient C must be positive")
    return name, c


def outcome_reward(text: str, gold: int, format_bonus: bool = False) -> float:
    """1 for the right boxed answer, plus 0.05 for a well-formed reply when enabled."""
    parsed = parse_model_output(text)
    r = 1.0 if parsed.final_answer is not None and parsed.final_answer == gold else 0.0
    if format_bonus and parsed.format_ok:
        r += FORMAT_BONUS
    return r


def group_advantages(rewards: Sequence[float], variant: str = "grpo",
                     C: float | None = None) -> np.ndarray:
    r = np.asarray(rewards, dtype=np.float64)
    if r.size < 2:
        raise ValueError("a group needs at least 2 rewards")
    name, c = parse_variant(variant, C)
    centered = r - r.mean()
    if name == "drgrpo":
        return centered
    if name == "gpg":
        return c * centered
    std = r.std()
    if std == 0.0:
        return np.zeros_like(r)
    return centered / std


def closed_form_advantages(n: int, N: int, variant: str = "grpo",
                           C: float | None = None) -> tuple[float, float]:
    """(A+, A-) for a binary-reward group with n of N correct."""
    if not 0 < n < N:
        raise ValueError(f"degenerate group n={n}, N={N}: all advantages are 0")
    name, c = parse_variant(variant, C)
    if name == "drgrpo":
        return 1 - n / N, -n / N
    if name == "gpg":
        return c * (1 - n / N), -c * n / N
    return math.sqrt((N - n) / n), -math.sqrt(n / (N - n))


def info_coefficient(alpha: float, variant: str = "grpo", C: float | None = None) -> float:
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    name, c = parse_variant(variant, C)
    v = alpha * (1.0 - alpha)
    if name in ("grpo", "dapo"):
        return math.sqrt(v)
    if name == "drgrpo":
        return v
    return c * v


@dataclass(frozen=True)
class GrpoConfig:
    N: int = 32
    clip_eps: float = 0.2  # kept for completeness; inert on-policy
    beta: float = 0.001
    gamma: float = 1.0
    eta: float = 1e-2
    variant: str = "grpo"

    def __post_init__(self):
        if self.N < 2:
            raise ValueError("group size N must be >= 2")
        if self.beta < 0:
            raise ValueError("beta must be >= 0")
        if self.gamma != 1.0:
            raise ValueError("gamma is fixed to 1 (reward only at the final token)")
        parse_variant(self.variant)


@dataclass(frozen=True)
class RolloutGroup:
    query_id: str
    outputs: tuple[tuple[int, ...], ...]
    rewards: tuple[float, ...]
    query: tuple[int, ...] = ()
    format_bonus: tuple[float, ...] = ()
    variant: str = "grpo"
    policy_digest: str | None = None

    @property
    def N(self) -> int:
        return len(self.rewards)

    @property
    def correct(self) -> np.ndarray:
        return np.asarray(self.rewards) >= 1.0

    @property
    def n(self) -> int:
        return int(self.correct.sum())

    @property
    def alpha(self) -> float:
        return self.n / self.N

    @property
    def advantages(self) -> np.ndarray:
        return group_advantages(self.rewards, self.variant)

    def to_record(self) -> dict:
        return {"query_id": self.query_id, "n": self.n, "N": self.N,
                "rewards": list(self.rewards), "advantage": self.advantages.tolist()}


def dapo_query_filter(groups: Iterable) -> list:
    """Keep groups whose accuracy lies strictly between 0 and 1."""
    return [g for g in groups if 0 < g.n < g.N]


def _rows(x) -> np.ndarray:
    if isinstance(x, np.ndarray):
        return np.atleast_2d(x.astype(np.float64, copy=False))
    return np.stack([np.asarray(getattr(g, "values", g), dtype=np.float64) for g in x])


def per_step_influence(train_grads, correct: Sequence[bool], target_grads,
                       target_advantages: Sequence[float], eta: float = 1.0,
                       variant: str = "grpo", apply_eta: bool = True) -> float:
    """Grouped form: eta * coef(a) * mean_t A'_t [mean_+ K(t, i) - mean_- K(t, j)].

    K is the plain gradient inner product. Degenerate groups give exactly 0.
    """
    G = _rows(train_grads)
    mask = np.asarray(correct, dtype=bool)
    N, n = mask.size, int(mask.sum())
    if G.shape[0] != N:
        raise ValueError("one gradient per output is required")
    if n in (0, N):
        return 0.0
    T = _rows(target_grads)
    A = np.asarray(target_advantages, dtype=np.float64)
    if T.shape[1] != G.shape[1]:
        raise ValueError("train and target gradients differ in dimension")
    K = T @ G.T  # (targets, outputs)
    bracket = K[:, mask].mean(axis=1) - K[:, ~mask].mean(axis=1)
    name, c = parse_variant(variant)
    val = info_coefficient(n / N, name, c) * float(np.mean(A * bracket))
    return eta * val if apply_eta else val


def raw_influence(train_grads, train_advantages: Sequence[float], target_grads,
                  target_advantages: Sequence[float], eta: float = 1.0) -> float:
    """Advantage-weighted form: eta * (1/N) sum_i A_i <g_i, (1/M) sum_t A'_t g'_t>."""
    G, T = _rows(train_grads), _rows(target_grads)
    a = np.asarray(train_advantages, dtype=np.float64)
    b = np.asarray(target_advantages, dtype=np.float64)
    tgt = (b[:, None] * T).sum(axis=0) / len(b)
    return eta * float(np.mean(a * (G @ tgt)))


def entropy_metric(dists: Iterable[np.ndarray]) -> float:
    """Mean per-token entropy (nats) of the given next-token distributions."""
    rows = [np.asarray(d, dtype=np.float64) for d in dists]
    if not rows:
        raise ValueError("entropy of an empty set of distributions")
    P = np.concatenate([r.reshape(-1, r.shape[-1]) for r in rows])
    with np.errstate(divide="ignore", invalid="ignore"):
        h = -np.where(P > 0, P * np.log(P), 0.0).sum(axis=1)
    return float(h.mean())


def perplexity_metric(token_logprobs: Iterable[Sequence[float]]) -> float:
    """exp of the mean per-token negative log-likelihood over all sequences."""
    flat = [float(x) for seq in token_logprobs for x in seq]
    if not flat:
        raise ValueError("perplexity of an empty dataset")
    return math.exp(-math.fsum(flat) / len(flat))


def taylor_influence_check(policy, train_group: RolloutGroup,
                           target_groups: Sequence[RolloutGroup], eta: float) -> dict:
    """First-order prediction of the change in the target objective vs the actual change.

    J(Q; theta) is the ratio surrogate mean_t A'_t pi_theta(o'_t) / pi_theta0(o'_t)
    over frozen target samples; its gradient at theta0 is mean_t A'_t grad log pi.
    The step is theta0 + eta * grad J(q).
    """
    from .toy_policy import logprob, policy_gradient

    g_train = policy_gradient(policy, train_group)
    g_target = policy_gradient(policy, *target_groups)
    predicted = eta * float(g_target @ g_train)
    stepped = policy.with_theta(policy.theta + eta * g_train.reshape(policy.theta.shape))

    def J(p) -> float:
        terms = []
        for g in target_groups:
            for o, a in zip(g.outputs, g.advantages):
                terms.append(a * math.exp(logprob(p, g.query, o) - logprob(policy, g.query, o)))
        return math.fsum(terms) / len(terms)

    actual = J(stepped) - J(policy)
    return {"eta": eta, "predicted": predicted, "actual": actual,
            "error": abs(actual - predicted)}
