"""Step kernels, graphons, sampled graphs and their cut/operator norms.

A step kernel on ``n`` blocks takes value ``weights[p, q]`` on the cell
``I_p x I_q`` with ``I_p = (p/n, (p+1)/n]`` (0-based ``p``). Norms are
computed on this block structure, so a kernel of ``n`` blocks has exactly
the cut and operator norms of the corresponding function on ``[0, 1]^2``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import _kernels
from .errors import DimensionMismatch, RangeError, TooLarge

N_MAX_EXACT = 20
SYM_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class StepKernel:
    weights: np.ndarray
    lo: float = 0.0
    hi: float = 1.0

    def __post_init__(self):
        w = np.array(self.weights, dtype=float)
        if w.ndim != 2 or w.shape[0] != w.shape[1] or w.shape[0] < 1:
            raise DimensionMismatch(f"weights must be a nonempty square matrix, got {w.shape}")
        if not np.all(np.isfinite(w)):
            raise RangeError("weights must be finite")
        if np.abs(w - w.T).max() > SYM_TOL:
            raise RangeError("weights must be symmetric")
        if w.min() < self.lo - SYM_TOL or w.max() > self.hi + SYM_TOL:
            raise RangeError(f"weights outside declared range [{self.lo}, {self.hi}]")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    @property
    def n(self):
        return self.weights.shape[0]

    @property
    def is_graphon(self):
        return self.weights.min() >= 0.0 and self.weights.max() <= 1.0

    def cell(self, u):
        """0-based block index of ``u``; ``u = 0`` is clamped into the first block."""
        u = np.asarray(u, dtype=float)
        return np.clip(np.ceil(u * self.n).astype(int) - 1, 0, self.n - 1)

    def __call__(self, u, v):
        return self.weights[self.cell(u), self.cell(v)]

    def to_json(self):
        return {"n": self.n, "weights": self.weights.tolist(), "lo": self.lo, "hi": self.hi}

    @classmethod
    def from_json(cls, obj):
        w = np.asarray(obj["weights"], dtype=float)
        if "n" in obj and int(obj["n"]) != w.shape[0]:
            raise DimensionMismatch(f"n = {obj['n']} but weights have {w.shape[0]} rows")
        return cls(w, float(obj.get("lo", 0.0)), float(obj.get("hi", 1.0)))


def constant_kernel(c, n=1):
    return StepKernel(np.full((n, n), float(c)), min(0.0, c), max(1.0, c))


@dataclass(frozen=True)
class EvaluableGraphon:
    """A graphon given pointwise, ``W: [0,1]^2 -> [0,1]``."""

    name: str
    evaluator: Callable = field(repr=False)

    def __call__(self, u, v):
        return self.evaluator(np.asarray(u, dtype=float), np.asarray(v, dtype=float))

    def check(self, n_pairs=64, seed=0):
        """Spot-check symmetry and range on random pairs."""
        rng = np.random.default_rng(seed)
        u, v = rng.random(n_pairs), rng.random(n_pairs)
        a, b = self(u, v), self(v, u)
        return bool(np.allclose(a, b, atol=1e-12) and a.min() >= 0.0 and a.max() <= 1.0)


def constant(c):
    if not 0.0 <= c <= 1.0:
        raise RangeError(f"constant graphon value {c} outside [0, 1]")
    return EvaluableGraphon(f"constant({c})", lambda u, v: np.full(np.broadcast(u, v).shape, float(c)))


def two_block():
    """1 when ``u`` and ``v`` lie on opposite sides of 1/2 (boundary included)."""
    return EvaluableGraphon(
        "two_block", lambda u, v: ((u - 0.5) * (0.5 - v) >= 0).astype(float)
    )


def min_graphon():
    return EvaluableGraphon("min", np.minimum)


def table(weights):
    """Graphon given by a step table on a uniform partition."""
    kernel = StepKernel(weights)
    if not kernel.is_graphon:
        raise RangeError("table graphon entries must lie in [0, 1]")
    return EvaluableGraphon(f"table({kernel.n})", kernel)


CATALOG = {
    "constant": constant,
    "two_block": two_block,
    "min": min_graphon,
    "table": table,
}


@dataclass(frozen=True, eq=False)
class SampledGraph:
    adjacency: np.ndarray
    seed: int | None = None

    def __post_init__(self):
        a = np.array(self.adjacency, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise DimensionMismatch(f"adjacency must be square, got {a.shape}")
        if not np.array_equal(a, a.T):
            raise RangeError("adjacency must be symmetric")
        if np.any(np.diag(a) != 0):
            raise RangeError("adjacency must have a zero diagonal")
        if a.min(initial=0.0) < 0 or a.max(initial=0.0) > 1:
            raise RangeError("edge weights must lie in [0, 1]")
        a.setflags(write=False)
        object.__setattr__(self, "adjacency", a)

    @property
    def N(self):
        return self.adjacency.shape[0]

    def edge_density(self):
        N = self.N
        if N < 2:
            return 0.0
        return float(self.adjacency[np.triu_indices(N, 1)].mean())

    def to_json(self):
        return {"N": self.N, "adjacency": self.adjacency.tolist(), "seed": self.seed}

    @classmethod
    def from_json(cls, obj):
        return cls(np.asarray(obj["adjacency"], dtype=float), obj.get("seed"))


def complete_graph(N):
    return SampledGraph(np.ones((N, N)) - np.eye(N))


def empty_graph(N):
    return SampledGraph(np.zeros((N, N)))


def step_from_graph(g: SampledGraph) -> StepKernel:
    return StepKernel(g.adjacency)


def discretize(W, n) -> StepKernel:
    """Sample ``W`` at the cell midpoints of an ``n``-block partition."""
    if n < 1:
        raise ValueError("n must be positive")
    mid = (np.arange(n) + 0.5) / n
    vals = np.asarray(W(mid[:, None], mid[None, :]), dtype=float)
    vals = 0.5 * (vals + vals.T)
    lo = min(0.0, float(vals.min()))
    hi = max(1.0, float(vals.max()))
    return StepKernel(vals, lo, hi)


def _site_weights(W: StepKernel, N):
    mid = (np.arange(N) + 0.5) / N
    return W(mid[:, None], mid[None, :])


def sample_bernoulli(W: StepKernel, N, seed) -> SampledGraph:
    """Independent Bernoulli edges with probability ``W`` at the site midpoints."""
    if W.weights.min() < 0.0 or W.weights.max() > 1.0:
        raise RangeError("edge probabilities must lie in [0, 1]")
    if N < 1:
        raise ValueError("N must be positive")
    P = _site_weights(W, N)
    rng = np.random.default_rng(seed)
    iu = np.triu_indices(N, 1)
    draws = rng.random(len(iu[0]))
    adj = np.zeros((N, N))
    adj[iu] = (draws < P[iu]).astype(float)
    adj = adj + adj.T
    return SampledGraph(adj, seed)


def weighted_graph(W: StepKernel, N) -> SampledGraph:
    """Deterministic weights ``xi_pq = W(p, q)`` with a zero diagonal."""
    P = np.array(_site_weights(W, N), dtype=float)
    np.fill_diagonal(P, 0.0)
    return SampledGraph(P)


def apply_T(W: StepKernel, phi):
    phi = np.asarray(phi, dtype=float)
    if phi.shape != (W.n,):
        raise DimensionMismatch(f"expected {W.n} values, got shape {phi.shape}")
    return W.weights @ phi / W.n


def _guard(W, n_max):
    if W.n > n_max:
        raise TooLarge(f"exact norm needs n <= {n_max}, got {W.n}")


def cut_norm_exact(W: StepKernel, n_max=N_MAX_EXACT):
    """Cut norm by enumerating one side of the rectangle.

    For a fixed row set the best column set is read off the signs of the
    column sums, so only ``2**n`` row sets are visited.
    """
    _guard(W, n_max)
    return _kernels.cut_norm_enum(W.weights) / W.n**2


def op_norm_exact(W: StepKernel, n_max=N_MAX_EXACT):
    """``||T_W||`` from L-infinity to L1, maximized over sign vectors."""
    _guard(W, n_max)
    return _kernels.op_norm_enum(W.weights) / W.n**2


def cut_norm_heuristic(W: StepKernel, restarts=32, seed=0, max_iter=100):
    """Lower bound on the cut norm by alternating maximization.

    Each restart draws a random row set, then alternately replaces the
    column set and the row set by the exact best response, for both signs.
    """
    if restarts < 1:
        raise ValueError("restarts must be >= 1")
    rng = np.random.default_rng(seed)
    starts = (rng.random((restarts, W.n)) < 0.5).astype(np.float64)
    return _kernels.cut_norm_alternating(W.weights, starts, max_iter) / W.n**2


def cut_norm(W: StepKernel, restarts=32, seed=0, n_max=N_MAX_EXACT):
    """Exact cut norm when affordable, otherwise the heuristic.

    Returns ``(value, method)`` with ``method`` in ``{"exact", "heuristic"}``.
    """
    if W.n <= n_max:
        return cut_norm_exact(W, n_max), "exact"
    return cut_norm_heuristic(W, restarts, seed), "heuristic"


def kernel_sub(W1: StepKernel, W2: StepKernel) -> StepKernel:
    if W1.n != W2.n:
        raise DimensionMismatch(f"block counts differ: {W1.n} vs {W2.n}")
    w = W1.weights - W2.weights
    return StepKernel(w, min(-1.0, float(w.min())), max(1.0, float(w.max())))


def kernel_scale(W: StepKernel, c) -> StepKernel:
    w = c * W.weights
    if W.is_graphon and 0.0 <= c <= 1.0:
        return StepKernel(w, 0.0, 1.0)
    return StepKernel(w, min(-1.0, float(w.min())), max(1.0, float(w.max())))


def kernel_mix(W1: StepKernel, W2: StepKernel, eps) -> StepKernel:
    """``(1 - eps) W1 + eps W2``."""
    if W1.n != W2.n:
        raise DimensionMismatch(f"block counts differ: {W1.n} vs {W2.n}")
    w = (1.0 - eps) * W1.weights + eps * W2.weights
    return StepKernel(w, min(W1.lo, W2.lo), max(W1.hi, W2.hi))


def refine(W: StepKernel, n) -> StepKernel:
    """Re-express ``W`` on ``n`` blocks by midpoint evaluation (exact if ``W.n`` divides ``n``)."""
    return StepKernel(_site_weights(W, n), W.lo, W.hi)
