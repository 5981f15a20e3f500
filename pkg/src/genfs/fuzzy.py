"""Generative fuzzification: FCM-based delegate election, fire strengths, rule combination."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigError, ContractError, FormatError
from .numerics import Tensor


@dataclass
class FcmState:
    centers: np.ndarray          # (K, D)
    memberships: np.ndarray      # (N, K)
    m: float
    tol: float
    max_iterations: int
    n_iter: int = 0
    objective: list = field(default_factory=list)


@dataclass
class Delegate:
    feature: np.ndarray
    source_id: int
    rule_index: int


@dataclass
class FireStrengthVector:
    raw: np.ndarray
    normalized: np.ndarray

    @property
    def winner(self) -> int:
        return int(np.argmax(self.normalized))


def _sq_dists(points: np.ndarray, centers: np.ndarray) -> np.ndarray:
    diff = points[:, None, :] - centers[None, :, :]
    return np.einsum("nkd,nkd->nk", diff, diff)


def memberships(points: np.ndarray, centers: np.ndarray, m: float) -> np.ndarray:
    """FCM membership update. A point sitting exactly on centers shares membership among them."""
    d2 = _sq_dists(points, centers)
    u = np.zeros_like(d2)
    on_center = d2 <= 0.0
    hit = on_center.any(axis=1)
    if hit.any():
        u[hit] = on_center[hit] / on_center[hit].sum(axis=1, keepdims=True)
    rest = ~hit
    if rest.any():
        r = d2[rest] / d2[rest].min(axis=1, keepdims=True)
        inv = r ** (-1.0 / (m - 1.0))
        u[rest] = inv / inv.sum(axis=1, keepdims=True)
    return u


def fcm_objective(points, centers, u, m) -> float:
    return float(((u ** m) * _sq_dists(points, centers)).sum())


def _update_centers(points, u, m, prev):
    w = u ** m
    mass = w.sum(axis=0)
    out = prev.copy()
    live = mass > 0
    # a cluster that owns no membership (all points sit on other centres) stays put
    out[live] = (w.T[live] @ points) / mass[live, None]
    return out


def _separate(centers: np.ndarray, tol: float, rng: np.random.Generator) -> np.ndarray:
    centers = centers.copy()
    for j in range(1, len(centers)):
        for i in range(j):
            if np.linalg.norm(centers[j] - centers[i]) < tol:
                step = rng.standard_normal(centers.shape[1])
                centers[j] += tol * step / (np.linalg.norm(step) or 1.0)
    return centers


def fcm(points, K: int, m: float = 2.0, tol: float = 1e-6, max_iter: int = 300, seed: int = 0) -> FcmState:
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2:
        raise ContractError("fcm expects an (N, D) point matrix")
    N = len(points)
    if K < 1 or N < K:
        raise ConfigError(f"fcm needs N >= K >= 1 (N={N}, K={K})")
    if m <= 1.0:
        raise ConfigError(f"fuzzifier m must exceed 1, got {m}")
    rng = np.random.default_rng(seed)

    _, first = np.unique(points, axis=0, return_index=True)
    pool = np.sort(first)
    if len(pool) >= K:
        init = rng.choice(pool, size=K, replace=False)
    else:
        init = np.concatenate([pool, rng.choice(N, size=K - len(pool), replace=False)])
    centers = _separate(points[np.sort(init)], tol, rng)

    state = FcmState(centers, memberships(points, centers, m), m, tol, max_iter)
    for it in range(1, max_iter + 1):
        new = _separate(_update_centers(points, state.memberships, m, state.centers), tol, rng)
        moved = np.abs(new - state.centers).max()
        state.centers = new
        state.objective.append(fcm_objective(points, new, state.memberships, m))
        state.memberships = memberships(points, new, m)
        state.n_iter = it
        if moved < tol:
            break
    state.objective.append(fcm_objective(points, state.centers, state.memberships, m))
    return state


def elect_delegates(points, K: int, seed: int = 0, override: Sequence[int] | None = None,
                    m: float = 2.0, tol: float = 1e-6, max_iter: int = 300) -> list[Delegate]:
    """One delegate per cluster: the sample with maximal membership in it.

    Exact membership ties go to the sample nearest the cluster centre, then to
    the smaller index. A sample already elected for an earlier cluster is
    skipped so each rule keeps its own delegate. ``override`` pins sample ids
    and bypasses clustering.
    """
    points = np.asarray(points, dtype=np.float64)
    if override is not None:
        if len(override) != K:
            raise ConfigError(f"expected {K} delegate ids, got {len(override)}")
        return [Delegate(points[i].copy(), int(i), k) for k, i in enumerate(override)]
    state = fcm(points, K, m=m, tol=tol, max_iter=max_iter, seed=seed)
    d2 = _sq_dists(points, state.centers)
    taken: set[int] = set()
    out = []
    for k in range(K):
        order = np.lexsort((np.arange(len(points)), d2[:, k], -state.memberships[:, k]))
        pick = next(int(i) for i in order if int(i) not in taken)
        taken.add(pick)
        out.append(Delegate(points[pick].copy(), pick, k))
    return out


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(np.dot(a, b) / (na * nb))


def normalize_strengths(raw: np.ndarray) -> np.ndarray:
    raw = np.asarray(raw, dtype=np.float64)
    total = raw.sum()
    if total <= 0.0:
        return np.full(len(raw), 1.0 / len(raw))
    return raw / total


def _raw_similarity(xs: np.ndarray, feats: np.ndarray) -> np.ndarray:
    nx_ = np.linalg.norm(xs, axis=1, keepdims=True)
    nf = np.linalg.norm(feats, axis=1)[None, :]
    denom = nx_ * nf
    safe = np.where(denom > 0, denom, 1.0)
    raw = np.where(denom > 0, (xs @ feats.T) / safe, 0.0)
    return np.clip(raw, 0.0, 1.0)


def fire_strengths(x, delegates) -> FireStrengthVector:
    """Cosine similarity to each delegate, clamped at 0, then normalised to sum to 1."""
    feats = delegate_matrix(delegates)
    x = np.asarray(x, dtype=np.float64)
    if x.shape != feats.shape[1:]:
        raise ContractError(f"feature dimension {x.shape} does not match delegates {feats.shape[1:]}")
    raw = _raw_similarity(x[None, :], feats)[0]
    return FireStrengthVector(raw, normalize_strengths(raw))


def fire_strength_matrix(xs, delegates) -> np.ndarray:
    """Normalised fire strengths for many inputs at once, shape (N, K)."""
    feats = delegate_matrix(delegates)
    xs = np.asarray(xs, dtype=np.float64)
    if xs.ndim != 2 or xs.shape[1] != feats.shape[1]:
        raise ContractError("feature dimension does not match delegates")
    raw = _raw_similarity(xs, feats)
    return np.stack([normalize_strengths(r) for r in raw]) if len(raw) else raw


def delegate_matrix(delegates) -> np.ndarray:
    if isinstance(delegates, np.ndarray):
        return np.atleast_2d(delegates).astype(np.float64)
    return np.stack([np.asarray(d.feature if isinstance(d, Delegate) else d, dtype=np.float64) for d in delegates])


def combine(outputs: Sequence, mu, mode: str = "aligned"):
    """Fuse rule outputs: weighted average when aligned, maximum defuzzification otherwise."""
    mu = np.asarray(mu, dtype=np.float64)
    if len(outputs) != len(mu):
        raise ContractError(f"{len(outputs)} outputs but {len(mu)} fire strengths")
    if mode == "unaligned":
        return outputs[int(np.argmax(mu))]
    if mode != "aligned":
        raise ContractError(f"unknown combination mode {mode!r}")
    shapes = {tuple(np.shape(o.data if isinstance(o, Tensor) else o)) for o in outputs}
    if len(shapes) != 1:
        raise ContractError(f"aligned combination needs equal shapes, got {sorted(shapes)}")
    out = None
    for w, g in zip(mu, outputs):
        if isinstance(g, Tensor):
            term = g * Tensor(w, dtype=g.data.dtype)
        else:
            g = np.asarray(g)
            term = g * g.dtype.type(w) if np.issubdtype(g.dtype, np.floating) else g * w
        out = term if out is None else out + term
    return out


# -- delegate file ------------------------------------------------------------


def format_delegates(delegates: Sequence[Delegate]) -> str:
    lines = []
    for d in delegates:
        vec = " ".join(repr(float(v)) for v in d.feature)
        lines.append(f"rule {d.rule_index} source {d.source_id} {vec}")
    return "\n".join(lines) + "\n"


def parse_delegates(text: str) -> list[Delegate]:
    out = []
    for lineno, line in enumerate(text.splitlines(), 1):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) < 4 or parts[0] != "rule" or parts[2] != "source":
            raise FormatError(f"delegate line {lineno}: expected 'rule <k> source <id> <values...>'")
        try:
            out.append(Delegate(np.array([float(v) for v in parts[4:]]), int(parts[3]), int(parts[1])))
        except ValueError as exc:
            raise FormatError(f"delegate line {lineno}: {exc}") from None
    return out
