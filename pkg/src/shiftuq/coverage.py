"""How many bootstrap environments does it take to cover a shifted test law?

Everything here works on binned (finite, discrete) distributions.  The chain
of reasoning: round the target distribution to the m-sample type lattice
(rounded_target, which costs at most 2(k-1)/m in L1), lower-bound the chance
that one batch of m iid draws from the source lands exactly on that type
(xi_bound, a method-of-types inequality), and convert it into the number of
independent batches needed before at least one hits with probability 1-alpha
(required_draws).  remark_bound is the same quantity bounded in closed form
straight from the tolerance.  certify estimates the actual hit rate by
simulation, as a check on the whole chain.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

_PROB_TOL = 1e-9


class SupportViolationError(ValueError):
    """Target puts mass where the source has none; KL is infinite."""

    def __init__(self, bins):
        super().__init__(f"target has mass outside the source support (bins {list(bins)})")
        self.bins = list(bins)


@dataclass
class BinnedDistribution:
    probs: np.ndarray

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=np.float64)
        if self.probs.ndim != 1 or self.probs.size == 0:
            raise ValueError("probs must be a nonempty 1-d vector")
        if np.any(self.probs < 0):
            raise ValueError("probabilities must be nonnegative")
        if abs(self.probs.sum() - 1.0) > _PROB_TOL:
            raise ValueError(f"probabilities sum to {self.probs.sum()!r}, not 1")

    @property
    def k(self) -> int:
        return self.probs.size


@dataclass
class Partition:
    """Per-dimension equal-width bin edges; cells flattened row-major."""

    edges: list  # one ascending edge array per dimension

    def __post_init__(self):
        self.edges = [np.asarray(e, dtype=np.float64) for e in self.edges]
        for e in self.edges:
            if e.ndim != 1 or e.size < 2 or np.any(np.diff(e) <= 0):
                raise ValueError("each dimension needs at least 2 strictly increasing edges")

    @property
    def n_bins(self) -> int:
        return int(np.prod([e.size - 1 for e in self.edges]))

    def assign(self, values: np.ndarray) -> np.ndarray:
        """Flat bin index per row; out-of-range values clamp to edge bins."""
        values = np.asarray(values, dtype=np.float64)
        if values.ndim == 1:
            values = values[:, None]
        if values.shape[1] != len(self.edges):
            raise ValueError(f"expected {len(self.edges)} columns, got {values.shape[1]}")
        flat = np.zeros(values.shape[0], dtype=np.int64)
        for d, e in enumerate(self.edges):
            idx = np.clip(np.searchsorted(e, values[:, d], side="right") - 1, 0, e.size - 2)
            flat = flat * (e.size - 1) + idx
        return flat


def make_partition(values: np.ndarray, bins_per_dim: int | None = None, max_bins: int = 64) -> Partition:
    """Equal-width partition fitted to the value range, at most max_bins cells."""
    values = np.asarray(values, dtype=np.float64)
    if values.ndim == 1:
        values = values[:, None]
    d = values.shape[1]
    if bins_per_dim is None:
        bins_per_dim = max(1, int(math.floor(max_bins ** (1.0 / d))))
    if bins_per_dim ** d > max_bins:
        raise ValueError(f"{bins_per_dim}^{d} bins exceed the cap of {max_bins}")
    edges = []
    for col in values.T:
        lo, hi = float(col.min()), float(col.max())
        if hi <= lo:
            lo, hi = lo - 0.5, lo + 0.5
        edges.append(np.linspace(lo, hi, bins_per_dim + 1))
    return Partition(edges)


def bin_data(values: np.ndarray, partition: Partition) -> BinnedDistribution:
    """Empirical distribution of values over the partition's cells."""
    idx = partition.assign(values)
    counts = np.bincount(idx, minlength=partition.n_bins)
    return BinnedDistribution(counts / counts.sum())


def draws_per_env(epsilon: float, k: int) -> int:
    """Batch size making the rounding error 2(k-1)/m fit inside epsilon."""
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    if k < 1:
        raise ValueError("k must be >= 1")
    return max(1, math.ceil(2.0 * (k - 1) / epsilon))


def rounded_target(p_star: BinnedDistribution, m: int) -> BinnedDistribution:
    """Round to the type lattice: q_i = floor(m p*_i)/m, remainder on the last bin."""
    if m < 1:
        raise ValueError("m must be >= 1")
    probs = np.floor(m * p_star.probs) / m
    probs[-1] += 1.0 - probs.sum()
    return BinnedDistribution(probs)


def l1_distance(a: BinnedDistribution, b: BinnedDistribution) -> float:
    if a.k != b.k:
        raise ValueError("distributions live on different bin counts")
    return float(np.sum(np.abs(a.probs - b.probs)))


def kl_divergence(q: BinnedDistribution, p: BinnedDistribution) -> float:
    """KL(q || p); raises SupportViolationError where q has mass but p none."""
    if q.k != p.k:
        raise ValueError("distributions live on different bin counts")
    bad = (q.probs > 0) & (p.probs == 0)
    if bad.any():
        raise SupportViolationError(np.flatnonzero(bad))
    mask = q.probs > 0
    return float(np.sum(q.probs[mask] * np.log(q.probs[mask] / p.probs[mask])))


def xi_bound(q: BinnedDistribution, p: BinnedDistribution, m: int) -> float:
    """Method-of-types lower bound on P(empirical law of m draws from p == q)."""
    if m < 0:
        raise ValueError("m must be >= 0")
    return float((m + 1) ** (-q.k) * math.exp(-m * kl_divergence(q, p)))


def required_draws(xi: float, alpha: float) -> int:
    """Smallest L with (1 - xi)^L <= alpha: miss everywhere with prob <= alpha."""
    if not 0.0 < xi <= 1.0:
        raise ValueError("xi must be in (0, 1]")
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must be in (0, 1)")
    if xi == 1.0:
        return 1
    return max(1, math.ceil(math.log(alpha) / math.log(1.0 - xi)))


def remark_bound(epsilon: float, k: int, alpha: float, kl: float) -> float:
    """Closed-form environment count straight from the tolerance epsilon."""
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    if k < 1:
        raise ValueError("k must be >= 1")
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must be in (0, 1)")
    if kl < 0:
        raise ValueError("kl must be nonnegative")
    base = 2.0 * (k - 1) / epsilon
    return float(((base + 2.0) ** k * math.exp((base + 1.0) * kl) - 1.0) * math.log(1.0 / alpha))


def support_reduce(
    p: BinnedDistribution, p_star: BinnedDistribution
) -> tuple[BinnedDistribution, BinnedDistribution, float]:
    """Restrict both laws to p's support; report the L1 cost of doing so.

    Returns (p reduced, p_star reduced and renormalized, L1 distance between
    the renormalized reduction lifted back to the full space and the original
    p_star).  That distance adds to any tolerance used downstream.
    """
    if p.k != p_star.k:
        raise ValueError("distributions live on different bin counts")
    keep = p.probs > 0
    dropped = float(p_star.probs[~keep].sum())
    if dropped >= 1.0 - 1e-12:
        raise ValueError("target has no mass on the source support")
    reduced_p = BinnedDistribution(p.probs[keep])
    renorm = p_star.probs[keep] / (1.0 - dropped)
    lifted = np.zeros(p.k)
    lifted[keep] = renorm
    shift = float(np.sum(np.abs(lifted - p_star.probs)))
    return reduced_p, BinnedDistribution(renorm), shift


def exact_type_probability(q: BinnedDistribution, p: BinnedDistribution, m: int) -> float:
    """Exact P(empirical law of m draws from p equals q); q must sit on the lattice."""
    counts = q.probs * m
    rounded = np.rint(counts)
    if np.max(np.abs(counts - rounded)) > 1e-9:
        raise ValueError("q is not a type of denominator m")
    counts = rounded.astype(np.int64)
    coeff = math.factorial(m)
    prob = 1.0
    for c, pi in zip(counts, p.probs):
        coeff //= math.factorial(int(c))
        prob *= pi ** int(c)
    return float(coeff * prob)


def certify(
    p: BinnedDistribution,
    p_star: BinnedDistribution,
    m: int,
    n_envs: int,
    epsilon: float,
    trials: int,
    rng: np.random.Generator,
) -> float:
    """Simulated success rate: fraction of trials in which at least one of
    n_envs batches of m draws from p lands within epsilon (L1) of p_star."""
    if p.k != p_star.k:
        raise ValueError("distributions live on different bin counts")
    if m < 1 or n_envs < 1 or trials < 1:
        raise ValueError("m, n_envs, and trials must be positive")
    counts = rng.multinomial(m, p.probs, size=(trials, n_envs))
    dists = np.abs(counts / m - p_star.probs).sum(axis=2)
    hits = (dists <= epsilon + 1e-12).any(axis=1)
    return float(hits.mean())
