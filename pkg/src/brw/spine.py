"""Spinal decomposition: the branching walk under the changed measure.

Under the measure with density D_n / (R(a) e^{-a}) on the first n
generations, the tree carries a distinguished line of descent (the spine).
At each step the spine's brood is drawn from the size-biased offspring law
and the next spine particle is chosen among the children u with probability
proportional to R(V(u)) e^{-V(u)} 1{V(u) > 0}.

Only the spine and its immediate siblings are materialized; every identity
verified here is measurable from those.  Brood draws use rejection against
the plain offspring law with a per-law envelope, so laws with unbounded
brood sizes are not supported.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from brw.conditioned import sample_conditioned
from brw.forest import Generation, eval_D_trunc, step_generation
from brw.laws import OffspringLaw, sample_offspring_batch
from brw.walk import RenewalFunction, derive_step_law

__all__ = [
    "SpineError",
    "AllChildrenKilled",
    "UnboundedBrood",
    "SpineStep",
    "SpineRealization",
    "sample_spine_step",
    "sample_spine_path",
    "simulate_spine",
    "verify_spine_law",
    "verify_density",
    "spine_marginal_vs_conditioned",
]

MAX_TRIES = 1 << 30


class SpineError(Exception):
    pass


class AllChildrenKilled(SpineError):
    """Every child of a proposed brood fails the positivity indicator.

    Never raised during accepted sampling (such broods have selection
    weight 0 and are resampled); raised only when resampling is exhausted.
    """


class UnboundedBrood(SpineError):
    pass


@dataclass(frozen=True)
class SpineStep:
    children: np.ndarray
    chosen: int
    weights: np.ndarray
    n_tries: int


@dataclass(frozen=True)
class SpineRealization:
    """Spine positions plus, per step, the non-spine children and the
    selection weights that were used."""

    positions: np.ndarray
    siblings: list
    weights: list
    n_tries: np.ndarray

    def __post_init__(self):
        if np.any(self.positions[1:] <= 0):
            raise SpineError("spine must stay positive after the root")

    @property
    def horizon(self) -> int:
        return self.positions.size - 1


def _finite_broods(law: OffspringLaw):
    """Brood atoms [(prob, displacement array)] for finite-support laws."""
    from brw.laws import LATTICE_H, LATTICE_Q

    if law.family == "lattice_binary":
        atoms = [(LATTICE_Q, np.array([-LATTICE_H])),
                 (1.0 - LATTICE_Q, np.array([LATTICE_H, LATTICE_H]))]
    elif law.family == "user_table":
        atoms = [(p, np.asarray(d, dtype=float)) for p, d in law.atoms]
    else:
        return None
    if law.a_star != 1.0 or law.b_star != 0.0:
        atoms = [(p, law.a_star * d + law.b_star) for p, d in atoms]
    return atoms


def _brood_weight_bound(law: OffspringLaw, R: RenewalFunction, v: float):
    """Envelope M(v) >= sum_u R(v + Delta_u) e^{-Delta_u} 1{v + Delta_u > 0}
    over every possible brood."""
    atoms = _finite_broods(law)
    if atoms is not None:
        best = 0.0
        for _, d in atoms:
            pos = v + d
            ok = pos > 0
            if ok.any():
                best = max(best, float(
                    np.sum(R(pos[ok]) * np.exp(-d[ok]))))
        return best
    if law.family == "binary_gaussian":
        # R(x) <= c2 (1 + x) and (1 + x) e^{-x} <= 1 on x > 0, so each
        # child contributes at most c2 e^{v}
        return 2.0 * _linear_envelope(R) * math.exp(v)
    raise UnboundedBrood(
        f"family {law.family!r} has no finite brood-weight envelope")


_ENVELOPE_CACHE: dict = {}


def _linear_envelope(R: RenewalFunction) -> float:
    """c2 with R(x) <= c2 (1 + x) over the handle's range."""
    if R.kind == "lattice_exact":
        return 2.0
    key = id(R)
    if key not in _ENVELOPE_CACHE:
        x = np.maximum(R.table.grid, 0.0)
        _ENVELOPE_CACHE[key] = float(np.max(R(x) / (1.0 + x))) * 1.001
    return _ENVELOPE_CACHE[key]


def _brood_weight_bound_batch(law: OffspringLaw, R: RenewalFunction,
                              v: np.ndarray) -> np.ndarray:
    atoms = _finite_broods(law)
    if atoms is None:
        if law.family != "binary_gaussian":
            raise UnboundedBrood(
                f"family {law.family!r} has no finite brood-weight envelope")
        return 2.0 * _linear_envelope(R) * np.exp(v)
    best = np.zeros(v.shape)
    for _, d in atoms:
        pos = v[:, None] + d[None, :]
        ok = pos > 1e-9
        w = np.where(ok, np.exp(-d)[None, :], 0.0)
        w[ok] *= R(pos[ok])
        np.maximum(best, w.sum(axis=1), out=best)
    return best


def _child_weights(R: RenewalFunction, v, disp):
    # small positive tolerance: on lattices v + disp can be a roundoff
    # residue where the true position is 0 (which is killed)
    pos = v + disp
    ok = pos > 1e-9
    w = np.zeros(disp.shape)
    if np.any(ok):
        w[ok] = R(pos[ok]) * np.exp(-disp[ok])
    return w


def sample_spine_step(v: float, law: OffspringLaw, rng: np.random.Generator,
                      R: RenewalFunction) -> SpineStep:
    """One spine transition from position v.

    Draws broods under the plain law and accepts with probability
    sum_u R(v+Delta_u) e^{-Delta_u} 1{v+Delta_u > 0} / M(v); the spine child
    is then chosen with those weights.  Broods whose children are all killed
    have weight 0 and are resampled.
    """
    if v < 0:
        raise SpineError("spine position must be nonnegative")
    M = _brood_weight_bound(law, R, v)
    if M <= 0:
        raise AllChildrenKilled(f"no admissible child from v={v}")
    for tries in range(1, MAX_TRIES + 1):
        counts, flat = sample_offspring_batch(law, 1, rng)
        w = _child_weights(R, v, flat)
        s = w.sum()
        if s > 0 and rng.random() * M < s:
            chosen = int(rng.choice(flat.size, p=w / s))
            return SpineStep(v + flat, chosen, w, tries)
    raise AllChildrenKilled(f"no accepted brood from v={v} "
                            f"within {MAX_TRIES} tries")


def sample_spine_path(law: OffspringLaw, N: int, rng: np.random.Generator,
                      R: RenewalFunction, a: float = 0.0) -> SpineRealization:
    positions = np.empty(N + 1)
    positions[0] = a
    siblings = []
    weights = []
    tries = np.empty(N, dtype=np.int64)
    for n in range(N):
        step = sample_spine_step(positions[n], law, rng, R)
        positions[n + 1] = step.children[step.chosen]
        siblings.append(np.delete(step.children, step.chosen))
        weights.append(step.weights)
        tries[n] = step.n_tries
    return SpineRealization(positions, siblings, weights, tries)


def simulate_spine(law: OffspringLaw, N: int, replicas: int,
                   rng: np.random.Generator, R: RenewalFunction,
                   a: float = 0.0):
    """Replica batch of spine paths.

    Returns (positions (replicas, N+1), n_siblings (replicas, N),
    tries (replicas, N)).  The rejection loop is vectorized across the
    replicas still pending at each step.
    """
    pos = np.full((replicas, N + 1), float(a))
    n_sib = np.zeros((replicas, N), dtype=np.int64)
    tries = np.zeros((replicas, N), dtype=np.int64)
    for n in range(N):
        v = pos[:, n]
        M = _brood_weight_bound_batch(law, R, v)
        pending = np.arange(replicas)
        block = 1
        while pending.size:
            # acceptance decays like R(v) e^{-v} for unbounded-below
            # displacements, so stragglers at large v get geometrically
            # growing blocks of trials per round
            units = pending.size * block
            counts, flat = sample_offspring_batch(law, units, rng)
            owner = np.repeat(np.arange(units), counts)
            vu = np.repeat(v[pending], block)
            w = _child_weights(R, vu[owner], flat)
            sums = np.bincount(owner, weights=w, minlength=units)
            acc_u = (sums > 0) & (rng.random(units) * np.repeat(
                M[pending], block) < sums)
            acc_mat = acc_u.reshape(pending.size, block)
            acc = acc_mat.any(axis=1)
            first = np.argmax(acc_mat, axis=1)
            tries[pending, n] += np.where(acc, first + 1, block)
            if acc.any():
                idx = pending[acc]
                unit = np.flatnonzero(acc) * block + first[acc]
                cw = np.cumsum(w)
                ends = np.cumsum(counts)
                starts = ends - counts
                base = np.where(starts > 0, cw[starts - 1], 0.0)
                target = base[unit] + rng.random(unit.size) * sums[unit]
                child = np.searchsorted(cw, target, side="right")
                child = np.clip(child, starts[unit], ends[unit] - 1)
                pos[idx, n + 1] = v[idx] + flat[child]
                n_sib[idx, n] = counts[unit] - 1
            pending = pending[~acc]
            block = min(2 * block, 1 << 14)
            if pending.size and np.any(tries[pending, n] >= MAX_TRIES):
                raise AllChildrenKilled("rejection budget exhausted")
    return pos, n_sib, tries


# ---------------------------------------------------------------------------
# verification against the plain measure

def _exact_spine_kernel(law: OffspringLaw, R: RenewalFunction, v: float):
    """Exact transition pmf {v' : prob} of the spine from v, for
    finite-support laws: (1/R(v)) sum_broods p_b sum_i R(v+D_i) e^{-D_i}
    1{v+D_i > 0} at v' = v + D_i."""
    atoms = _finite_broods(law)
    out: dict = {}
    for p, d in atoms:
        w = _child_weights(R, v, d)
        for di, wi in zip(d, w):
            if wi > 0:
                key = round(v + di, 9)
                out[key] = out.get(key, 0.0) + p * wi
    rv = R(v) if v > 0 else 1.0
    return {k: val / rv for k, val in out.items()}


def verify_spine_law(law: OffspringLaw, N: int, mode: str = "exact",
                     rng: np.random.Generator | None = None,
                     R: RenewalFunction | None = None, replicas: int = 0,
                     g=None, a: float = 0.0):
    """Spine path law against (1/R(a)) E_a[g(S) R(S_N); min > 0].

    Exact mode (finite-support laws) enumerates both path laws and returns
    (tv, mass_spine, mass_h).  MC mode returns (lhs, lhs_se, rhs, rhs_se).
    """
    from brw.conditioned import EnumerationTooLarge

    if R is None:
        raise SpineError("a renewal function handle is required")
    if mode == "exact":
        atoms = _finite_broods(law)
        if atoms is None:
            raise SpineError("exact mode needs a finite-support law")
        step = derive_step_law(law)
        if step.values is None:
            vals = np.array([-step.span, step.span])
            probs = np.array([0.5, 0.5])
        else:
            vals, probs = step.values, step.probs
        # spine side: breadth-first expansion of the exact kernel
        paths = {(round(a, 9),): 1.0}
        for _ in range(N):
            if len(paths) * vals.size > 10_000_000:
                raise EnumerationTooLarge("spine path enumeration too large")
            nxt = {}
            for path, p in paths.items():
                for v2, q in _exact_spine_kernel(law, R, path[-1]).items():
                    nxt[path + (v2,)] = nxt.get(path + (v2,), 0.0) + p * q
            paths = nxt
        # h-transform side over the associated step law
        hpaths = {(round(a, 9),): 1.0}
        for _ in range(N):
            nxt = {}
            for path, p in hpaths.items():
                for dv, q in zip(vals, probs):
                    v2 = path[-1] + dv
                    if v2 > 1e-9:
                        key = path + (round(v2, 9),)
                        nxt[key] = nxt.get(key, 0.0) + p * q
            hpaths = nxt
        r0 = R(a) if a > 0 else 1.0
        hlaw = {k: p * R(k[-1]) / r0 for k, p in hpaths.items()}
        keys = set(paths) | set(hlaw)
        tv = 0.5 * sum(abs(paths.get(k, 0.0) - hlaw.get(k, 0.0))
                       for k in keys)
        return tv, sum(paths.values()), sum(hlaw.values())
    if mode == "mc":
        if rng is None or replicas <= 0 or g is None:
            raise SpineError("mc mode needs rng, replicas, and g")
        step = derive_step_law(law)
        pos, _, _ = simulate_spine(law, N, replicas, rng, R, a=a)
        lhs_vals = np.asarray([g(row) for row in pos])
        s = a + np.cumsum(step.sample(rng, (replicas, N)), axis=1)
        ok = np.all(s > 0, axis=1)
        r0 = R(a) if a > 0 else 1.0
        w = np.zeros(replicas)
        w[ok] = np.asarray([g(np.concatenate([[a], row]))
                            for row in s[ok]]) * R(s[ok, -1]) / r0
        return (float(lhs_vals.mean()),
                float(lhs_vals.std(ddof=1) / math.sqrt(replicas)),
                float(w.mean()),
                float(w.std(ddof=1) / math.sqrt(replicas)))
    raise SpineError(f"unknown mode {mode!r}")


def verify_density(law: OffspringLaw, n: int, G, replicas: int,
                   rng: np.random.Generator, R: RenewalFunction,
                   a: float = 0.0):
    """E_Q[G] against E_P[G D_n] / (R(a) e^{-a}) for G a bounded functional
    of the first-generation positions.

    Returns (lhs, lhs_se, rhs, rhs_se).  The right side evaluates G on the
    plain first generation and weights by the depth-n truncated martingale,
    so every n >= 1 exercises the same identity through the martingale
    property.
    """
    lhs_vals = np.empty(replicas)
    for i in range(replicas):
        step = sample_spine_step(a, law, rng, R)
        lhs_vals[i] = G(step.children)
    norm = R(a) * math.exp(-a) if a > 0 else math.exp(-a)
    rhs_vals = np.empty(replicas)
    for i in range(replicas):
        gen1 = step_generation(Generation.root(a), law, rng)
        gval = G(gen1.positions)
        keep = gen1.positions > 0
        gen = Generation(1, gen1.positions[keep])
        for _ in range(n - 1):
            gen = step_generation(gen, law, rng, barrier=0.0)
        rhs_vals[i] = gval * eval_D_trunc(gen, R, 0.0) / norm
    return (float(lhs_vals.mean()),
            float(lhs_vals.std(ddof=1) / math.sqrt(replicas)),
            float(rhs_vals.mean()),
            float(rhs_vals.std(ddof=1) / math.sqrt(replicas)))


def _ks_distance(x: np.ndarray, y: np.ndarray) -> float:
    pooled = np.concatenate([x, y])
    order = np.argsort(pooled, kind="mergesort")
    steps = np.where(order < x.size, 1.0 / x.size, -1.0 / y.size)
    cum = np.cumsum(steps)
    # with ties (lattice marginals) the ECDF gap is only defined at
    # boundaries between distinct values
    svals = pooled[order]
    edge = np.append(svals[1:] != svals[:-1], True)
    return float(np.max(np.abs(cum[edge])))


def spine_marginal_vs_conditioned(law: OffspringLaw, N: int, replicas: int,
                                  rng: np.random.Generator,
                                  R: RenewalFunction,
                                  n_permutations: int = 200):
    """Two-sample KS between zeta_N (conditioned walk) and V(omega_N)
    (spine), with a permutation p-value."""
    step = derive_step_law(law)
    zeta = np.asarray([sample_conditioned(step, N, rng).zeta[-1]
                       for _ in range(replicas)])
    pos, _, _ = simulate_spine(law, N, replicas, rng, R)
    spine = pos[:, -1]
    # collapse float residue so lattice atoms tie across the two samplers
    zeta = np.round(zeta, 9)
    spine = np.round(spine, 9)
    d_obs = _ks_distance(zeta, spine)
    pooled = np.concatenate([zeta, spine])
    count = 1
    for _ in range(n_permutations):
        perm = rng.permutation(pooled)
        if _ks_distance(perm[:replicas], perm[replicas:]) >= d_obs:
            count += 1
    return d_obs, count / (n_permutations + 1)
