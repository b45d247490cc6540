"""Generation-by-generation simulation of the branching random walk and the
martingales read off it.

For a forest started from one particle at a, each particle of generation n
reproduces independently by the offspring law.  The evaluated functionals are
the additive martingale W_n(t) = sum e^{-t V(u) - n Psi(t)}, the signed
derivative-type martingale D_n = sum V(u) e^{-V(u)}, and its barrier
truncation D_n^{(beta)} = sum R(V(u)+beta) e^{-V(u)} over particles whose
whole ancestral path stayed above -beta.

The truncation indicator is maintained by killing below-barrier children at
birth (kill mode) or, in audit mode, by carrying a per-particle flag so one
stream of draws yields the barrier and no-barrier forests simultaneously.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from brw.laws import OffspringLaw, sample_offspring_batch
from brw.walk import RenewalFunction

__all__ = [
    "ForestError",
    "PopulationCapExceeded",
    "Generation",
    "MartingaleSeries",
    "MartingaleBatch",
    "step_generation",
    "eval_W",
    "eval_D",
    "eval_D_trunc",
    "simulate_martingales",
    "cascade_check",
]

POPULATION_CAP = 5_000_000
DEPTH_BUDGET = 20


class ForestError(Exception):
    pass


class PopulationCapExceeded(ForestError):
    """Raised when the next generation would exceed the population cap."""

    def __init__(self, depth: int, population: int):
        self.depth = depth
        self.population = population
        super().__init__(
            f"population {population} exceeds cap at depth {depth}")


@dataclass(frozen=True)
class Generation:
    """One generation of the forest: depth and particle positions.

    above_barrier is None in kill mode (dead particles are simply absent);
    in audit mode it flags particles whose path stayed above the barrier.
    """

    depth: int
    positions: np.ndarray
    above_barrier: np.ndarray | None = None

    def __post_init__(self):
        pos = np.asarray(self.positions, dtype=float)
        object.__setattr__(self, "positions", pos)
        if self.above_barrier is not None \
                and len(self.above_barrier) != pos.size:
            raise ForestError("flag vector length must match population")

    @property
    def population(self) -> int:
        return self.positions.size

    @classmethod
    def root(cls, a: float = 0.0, audit: bool = False) -> "Generation":
        flags = np.ones(1, dtype=bool) if audit else None
        return cls(0, np.array([float(a)]), flags)


def step_generation(gen: Generation, law: OffspringLaw,
                    rng: np.random.Generator, barrier: float | None = None,
                    cap: int = POPULATION_CAP) -> Generation:
    """Advance one generation.

    With barrier = beta >= 0, children at positions <= -beta are discarded at
    birth unless gen carries audit flags, in which case every child is kept
    and the flag records whether its whole path stayed above -beta.
    """
    if gen.population > cap:
        raise PopulationCapExceeded(gen.depth, gen.population)
    if gen.population == 0:
        flags = None if gen.above_barrier is None else np.zeros(0, dtype=bool)
        return Generation(gen.depth + 1, np.empty(0), flags)
    counts, flat = sample_offspring_batch(law, gen.population, rng)
    total = int(counts.sum())
    if total > cap:
        raise PopulationCapExceeded(gen.depth + 1, total)
    parent = np.repeat(np.arange(gen.population), counts)
    pos = gen.positions[parent] + flat
    if barrier is None:
        flags = (gen.above_barrier[parent] if gen.above_barrier is not None
                 else None)
        return Generation(gen.depth + 1, pos, flags)
    if gen.above_barrier is not None:
        flags = gen.above_barrier[parent] & (pos > -barrier)
        return Generation(gen.depth + 1, pos, flags)
    keep = pos > -barrier
    return Generation(gen.depth + 1, pos[keep], None)


def eval_W(gen: Generation, t: float, psi_t: float) -> float:
    """Additive martingale W_n(t) = sum e^{-t V(u) - n Psi(t)}; empty sum
    is 0."""
    if gen.population == 0:
        return 0.0
    return math.fsum(np.exp(-t * gen.positions - gen.depth * psi_t))


def eval_D(gen: Generation) -> float:
    """Signed martingale D_n = sum V(u) e^{-V(u)}."""
    if gen.population == 0:
        return 0.0
    return math.fsum(gen.positions * np.exp(-gen.positions))


def eval_D_trunc(gen: Generation, R: RenewalFunction, beta: float) -> float:
    """Truncated martingale sum R(V(u)+beta) e^{-V(u)} over particles whose
    path stayed above -beta.

    The generation must come from barrier mode with the same beta (or audit
    mode, whose flags are used).  Raises RIncompatible if R's table does not
    cover the needed range.
    """
    if beta < 0:
        raise ForestError("beta must be nonnegative")
    pos = gen.positions
    if gen.above_barrier is not None:
        pos = pos[gen.above_barrier]
    if pos.size == 0:
        return 0.0
    return math.fsum(R(pos + beta) * np.exp(-pos))


@dataclass(frozen=True)
class MartingaleSeries:
    """Per-depth martingale values of one replica."""

    replica: int
    seed_label: str
    a: float
    beta: float | None
    t_values: tuple
    n: np.ndarray
    W: np.ndarray            # shape (depths, len(t_values))
    D: np.ndarray
    D_beta: np.ndarray | None
    population: np.ndarray

    def __post_init__(self):
        if np.any(self.W < 0):
            raise ForestError("W_n(t) must be nonnegative")
        if self.D_beta is not None and np.any(self.D_beta[
                ~np.isnan(self.D_beta)] < 0):
            raise ForestError("D_n^(beta) must be nonnegative")


@dataclass
class MartingaleBatch:
    """Martingale trajectories of many replicas (NaN past truncation)."""

    a: float
    beta: float | None
    t_values: tuple
    seed_label: str
    n: np.ndarray                # depths 0..N
    W: np.ndarray                # (replicas, depths, len(t_values))
    D: np.ndarray                # (replicas, depths)
    D_beta: np.ndarray | None    # (replicas, depths) or None
    population: np.ndarray       # (replicas, depths) int
    truncated_at: np.ndarray     # depth where cap hit, -1 if completed

    def series(self, i: int) -> MartingaleSeries:
        return MartingaleSeries(i, self.seed_label, self.a, self.beta,
                                self.t_values, self.n, self.W[i], self.D[i],
                                None if self.D_beta is None else self.D_beta[i],
                                self.population[i])


def simulate_martingales(law: OffspringLaw, depth: int, replicas: int,
                         rng: np.random.Generator, t_values=(1.0,),
                         psi_values=None, a: float = 0.0,
                         beta: float | None = None,
                         R: RenewalFunction | None = None,
                         cap: int = POPULATION_CAP,
                         block: int = 2000,
                         prune: bool = True) -> MartingaleBatch:
    """Simulate independent replicas and record W_n(t), D_n, and (with a
    barrier) D_n^{(beta)} at every depth 0..depth.

    Replicas run in blocks to bound memory; the per-replica population cap
    truncates a replica (NaN afterwards) rather than biasing survivors.
    With beta set, D_n^{(beta)} needs a renewal-function handle R.  By
    default the forest itself is then barrier-killed; killed lineages
    contribute zero to every later D_n^{(beta)}, so dropping them changes
    nothing for the truncated martingale but does change W_n(t) and D_n.
    prune=False keeps killed lineages alive in the forest (the barrier
    indicator becomes a running path-minimum flag), so one pass yields the
    full-forest W_n(t) and D_n next to D_n^{(beta)}.
    """
    if depth > DEPTH_BUDGET:
        raise ForestError(f"depth budget is {DEPTH_BUDGET}")
    # the path-minimum indicator starts at generation 1, so the root itself
    # may sit at -beta; it only needs R(a + beta) to be defined
    if beta is not None and (beta < 0 or a + beta < 0):
        raise ForestError("barrier needs beta >= 0 and a + beta >= 0")
    if beta is not None and R is None:
        raise ForestError("barrier mode needs a renewal-function handle")
    t_values = tuple(float(t) for t in t_values)
    if psi_values is None:
        from brw.laws import eval_laplace
        psi_values = tuple(eval_laplace(law, t)[1] for t in t_values)
    nd = depth + 1
    W = np.full((replicas, nd, len(t_values)), np.nan)
    D = np.full((replicas, nd), np.nan)
    Db = np.full((replicas, nd), np.nan) if beta is not None else None
    pop = np.zeros((replicas, nd), dtype=np.int64)
    trunc = np.full(replicas, -1, dtype=np.int64)

    for lo in range(0, replicas, block):
        hi = min(lo + block, replicas)
        nb = hi - lo
        pos = np.full(nb, float(a))
        owner = np.arange(nb)
        alive = np.ones(nb, dtype=bool)
        for n in range(nd):
            cnt = np.bincount(owner, minlength=nb)
            pop[lo:hi, n] = cnt
            e = np.exp(-pos)
            for k, (t, psi) in enumerate(zip(t_values, psi_values)):
                wvals = np.exp(-t * pos - n * psi) if t != 1.0 or psi != 0.0 \
                    else e
                W[lo:hi, n, k] = np.bincount(owner, weights=wvals,
                                             minlength=nb)
            D[lo:hi, n] = np.bincount(owner, weights=pos * e, minlength=nb)
            if beta is not None:
                Db[lo:hi, n] = np.bincount(
                    owner[alive], weights=R(pos[alive] + beta) * e[alive],
                    minlength=nb)
            if n == depth:
                break
            counts, flat = sample_offspring_batch(law, pos.size, rng)
            parent = np.repeat(np.arange(pos.size), counts)
            pos = pos[parent] + flat
            owner = owner[parent]
            if beta is not None:
                if prune:
                    keep = pos > -beta
                    pos, owner = pos[keep], owner[keep]
                    alive = np.ones(pos.size, dtype=bool)
                else:
                    alive = alive[parent] & (pos > -beta)
            child_pop = np.bincount(owner, minlength=nb)
            over = np.flatnonzero((child_pop > cap)
                                  & (trunc[lo:hi] == -1))
            if over.size:
                trunc[lo + over] = n + 1
                keep = ~np.isin(owner, over)
                pos, owner = pos[keep], owner[keep]
            if pos.size == 0:
                for m in range(n + 1, nd):
                    live = trunc[lo:hi] == -1
                    W[lo:hi, m][live] = 0.0
                    D[lo:hi, m][live] = 0.0
                    if beta is not None:
                        Db[lo:hi, m][live] = 0.0
                break
        # everything recorded at or past a replica's truncation depth is
        # meaningless; blank it rather than reporting biased survivors
        for r in np.flatnonzero(trunc[lo:hi] != -1):
            t0 = trunc[lo + r]
            W[lo + r, t0:, :] = np.nan
            D[lo + r, t0:] = np.nan
            if beta is not None:
                Db[lo + r, t0:] = np.nan
    return MartingaleBatch(a, beta, t_values, "", np.arange(nd), W, D, Db,
                           pop, trunc)


def cascade_check(law: OffspringLaw, m: int, replicas: int,
                  rng: np.random.Generator, finite_correction: bool = True):
    """Both sides of the cascade equation for the signed martingale.

    Sample A holds D_m from fresh roots.  Sample B combines one brood with
    independent depth-m subtree copies.  With finite_correction (default)

        B = sum_{|u|=1} e^{-V(u)} (D_m^{(u)} + V(u) W_m^{(u)}),

    which is distributed exactly as D_{m+1}; the V(u) W_m term vanishes as
    m grows because W_m -> 0, leaving the pure cascade combination
    sum e^{-V(u)} D_m^{(u)} (finite_correction=False evaluates that form
    directly).  Returns (A, B, KS distance); a convergence diagnostic, not
    an exact identity at finite m unless the correction is kept.
    """
    if m < 1:
        raise ForestError("depth must be at least 1")
    if replicas < 100:
        raise ForestError("need at least 100 replicas")
    batch_a = simulate_martingales(law, m, replicas, rng)
    a = batch_a.D[:, m]
    counts, flat = sample_offspring_batch(law, replicas, rng)
    total = int(counts.sum())
    pool = simulate_martingales(law, m, total, rng)
    sub = pool.D[:, m]
    if finite_correction:
        sub = sub + flat * pool.W[:, m, 0]
    owner = np.repeat(np.arange(replicas), counts)
    b = np.bincount(owner, weights=np.exp(-flat) * sub, minlength=replicas)
    ks = _ks_distance(a[~np.isnan(a)], b)
    return a, b, ks


def _ks_distance(x: np.ndarray, y: np.ndarray) -> float:
    both = np.concatenate([x, y])
    both.sort()
    fx = np.searchsorted(np.sort(x), both, side="right") / x.size
    fy = np.searchsorted(np.sort(y), both, side="right") / y.size
    return float(np.abs(fx - fy).max())
