"""Score-gradient vectors, Gaussian random projection, co-influence and the
accuracy-bucketed per-step influence report.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import _kernels
from .objective import info_coefficient, parse_variant
from .records import read_binary, write_binary

GVEC_KIND = "gradvector"
_BLOCK = 2048  # columns of R generated per chunk; fixed so outputs are bit-stable


@dataclass(frozen=True)
class ProjectionSpec:
    seed: int
    in_dim: int
    out_dim: int = 8192

    def __post_init__(self):
        if not 0 < self.out_dim < self.in_dim:
            raise ValueError("projection needs 0 < out_dim < in_dim")

    def to_dict(self) -> dict:
        return {"seed": self.seed, "in_dim": self.in_dim, "out_dim": self.out_dim}

    @classmethod
    def from_dict(cls, d: Mapping) -> "ProjectionSpec":
        return cls(int(d["seed"]), int(d["in_dim"]), int(d["out_dim"]))

    def column_blocks(self, block: int = _BLOCK):
        """Yield (start, R[:, start:start+w]) in column order.

        Column j of R is drawn right after column j - 1 from one stream, so
        the matrix does not depend on ``block``.
        """
        rng = np.random.default_rng(np.random.SeedSequence([self.seed, self.in_dim, self.out_dim]))
        scale = 1.0 / math.sqrt(self.out_dim)
        for start in range(0, self.in_dim, block):
            w = min(block, self.in_dim - start)
            yield start, rng.standard_normal((w, self.out_dim)).T * scale

    def matrix(self, block: int = _BLOCK) -> np.ndarray:
        """Materialized R (out_dim x in_dim); for tests and small problems."""
        return np.concatenate([r for _, r in self.column_blocks(block)], axis=1)


@dataclass(frozen=True)
class GradVector:
    values: np.ndarray
    origin: str = "raw"
    spec: ProjectionSpec | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        v = np.ascontiguousarray(self.values, dtype=np.float64)
        if v.ndim != 1:
            raise ValueError("gradient vectors are one-dimensional")
        object.__setattr__(self, "values", v)
        if self.origin not in ("raw", "projected"):
            raise ValueError(f"unknown origin {self.origin!r}")
        if (self.origin == "projected") != (self.spec is not None):
            raise ValueError("projected vectors carry their spec, raw vectors do not")
        if self.spec is not None and self.spec.out_dim != v.size:
            raise ValueError("projected dim does not match spec.out_dim")

    @property
    def dim(self) -> int:
        return self.values.size

    def header(self) -> dict:
        h = {"kind": GVEC_KIND, "dim": self.dim, "origin": self.origin, **self.meta}
        if self.spec is not None:
            h["spec"] = self.spec.to_dict()
        return h


def save_gvec(g: GradVector, path: str | Path) -> None:
    write_binary(path, g.header(), g.values)


def load_gvec(path: str | Path) -> GradVector:
    header, values = read_binary(path)
    if header.get("kind") != GVEC_KIND:
        raise ValueError(f"{path}: not a gradient vector file")
    if values.size != header["dim"]:
        raise ValueError(f"{path}: payload has {values.size} values, header says {header['dim']}")
    spec = ProjectionSpec.from_dict(header["spec"]) if "spec" in header else None
    meta = {k: v for k, v in header.items() if k not in ("kind", "dim", "origin", "spec")}
    return GradVector(values, header["origin"], spec, meta)


def project_many(mat: np.ndarray, spec: ProjectionSpec) -> np.ndarray:
    """Rows of ``mat`` (m x in_dim) mapped through R; R is never materialized."""
    mat = np.asarray(mat, dtype=np.float64)
    if mat.ndim != 2 or mat.shape[1] != spec.in_dim:
        raise ValueError(f"expected shape (m, {spec.in_dim}), got {mat.shape}")
    out = np.zeros((mat.shape[0], spec.out_dim))
    for start, r in spec.column_blocks():
        out += mat[:, start:start + r.shape[1]] @ r.T
    return out


def project(g: GradVector, spec: ProjectionSpec) -> GradVector:
    if g.origin != "raw":
        raise ValueError("only raw gradients can be projected")
    if g.dim != spec.in_dim:
        raise ValueError(f"gradient dim {g.dim} != spec.in_dim {spec.in_dim}")
    return GradVector(project_many(g.values[None, :], spec)[0], "projected", spec, dict(g.meta))


def _check_compatible(a: GradVector, b: GradVector) -> None:
    if a.dim != b.dim:
        raise ValueError(f"dimension mismatch {a.dim} vs {b.dim}")
    if a.origin != b.origin or a.spec != b.spec:
        raise ValueError("cannot mix gradients from different spaces")


def coinfluence(g1: GradVector, g2: GradVector) -> float:
    """<g1, g2>, summed sequentially in index order."""
    _check_compatible(g1, g2)
    return float(_kernels.rowdots(g1.values[None, :], g2.values[None, :])[0])


def stack(grads: Sequence[GradVector]) -> np.ndarray:
    for g in grads[1:]:
        _check_compatible(grads[0], g)
    return np.stack([g.values for g in grads]) if grads else np.zeros((0, 0))


def weighted_mean(weights: np.ndarray, mat: np.ndarray) -> np.ndarray:
    """(1/m) sum_i w_i mat[i], accumulated sequentially over i."""
    w = np.asarray(weights, dtype=np.float64)[None, :]
    return _kernels.gram(w, np.ascontiguousarray(mat.T))[0] / mat.shape[0]


# ---------------------------------------------------------------- report

@dataclass(frozen=True)
class GroupGrads:
    """One rollout group: per-output gradient rows, correctness and advantages."""
    query_id: str
    grads: np.ndarray
    correct: np.ndarray
    advantages: np.ndarray

    @property
    def N(self) -> int:
        return len(self.correct)

    @property
    def n(self) -> int:
        return int(np.sum(self.correct))


@dataclass(frozen=True)
class BucketRow:
    n: int
    N: int
    count: int
    mean_influence: float

    @property
    def bucket(self) -> str:
        return f"{self.n}/{self.N}"


def group_influences(groups: Sequence[GroupGrads], variant: str = "grpo",
                     eta: float | None = None) -> dict[str, float]:
    """Per-step influence of each group on the pooled target set.

    The target set is every (query, output) pair of every group, weighted by
    its own advantage. Degenerate groups get exactly 0.
    """
    if not groups:
        return {}
    sizes = {g.N for g in groups}
    if len(sizes) != 1:
        raise ValueError(f"ragged groups: sizes {sorted(sizes)}")
    all_grads = np.concatenate([g.grads for g in groups])
    all_adv = np.concatenate([g.advantages for g in groups])
    target = weighted_mean(all_adv, all_grads)
    name, c = parse_variant(variant)
    out = {}
    for g in groups:
        n, N = g.n, g.N
        if n in (0, N):
            out[g.query_id] = 0.0
            continue
        pos = g.correct.astype(bool)
        d = (weighted_mean(np.ones(n), g.grads[pos])
             - weighted_mean(np.ones(N - n), g.grads[~pos]))
        k = float(_kernels.rowdots(d[None, :], target[None, :])[0])
        val = info_coefficient(n / N, name, c) * k
        out[g.query_id] = val * eta if eta is not None else val
    return out


def grouped_influence_report(groups: Sequence[GroupGrads], variant: str = "grpo",
                             eta: float | None = None) -> list[BucketRow]:
    """Mean per-step influence per accuracy bucket n/N, for n = 0..N.

    Empty buckets report NaN; 0/N and N/N buckets report exactly 0 when
    populated.
    """
    if not groups:
        return []
    infl = group_influences(groups, variant, eta)
    N = groups[0].N
    rows = []
    for n in range(N + 1):
        vals = [infl[g.query_id] for g in sorted(groups, key=lambda g: g.query_id) if g.n == n]
        mean = math.fsum(vals) / len(vals) if vals else float("nan")
        rows.append(BucketRow(n, N, len(vals), mean))
    return rows


def report_csv(rows: Iterable[BucketRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["bucket", "count", "mean_influence"])
    for r in rows:
        w.writerow([r.bucket, r.count, repr(r.mean_influence)])
    return buf.getvalue()


def parse_report_csv(text: str) -> list[BucketRow]:
    rows = []
    for rec in csv.DictReader(io.StringIO(text)):
        n, N = map(int, rec["bucket"].split("/"))
        rows.append(BucketRow(n, N, int(rec["count"]), float(rec["mean_influence"])))
    return rows
