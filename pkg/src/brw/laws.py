"""Offspring point-process laws and their Laplace transforms.

A law describes one reproduction event of the branching random walk: a random
number of children together with their displacements from the parent.  The
normalization of interest is the boundary case

    E[sum_u exp(-V(u))] = 1,    E[sum_u V(u) exp(-V(u))] = 0,

reached from a raw law by the affine map V -> a* V + b*.

Built-in families
-----------------
binary_gaussian   two children, i.i.d. Gaussian displacements
lattice_binary    one child at -h (prob q) or two children at +h,
                  q = (2 - sqrt(2))/4, h = log(2 + sqrt(2)); boundary by
                  construction and supported on the lattice h*Z
heavy_count       N children, P(N = n) proportional to n^-2 (log n)^-theta
                  for n >= 2, i.i.d. Gaussian displacements; the canonical
                  family violating the Z log Z + Y (log Y)^2 moment condition
                  for theta <= 3
user_table        finite discrete mixture of deterministic broods
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Callable

import numpy as np
from scipy import integrate

__all__ = [
    "LawError",
    "NoBoundaryRoot",
    "NonIntegrable",
    "OutOfDomain",
    "OffspringDraw",
    "OffspringLaw",
    "LaplaceProfile",
    "LATTICE_H",
    "LATTICE_Q",
    "binary_gaussian",
    "lattice_binary",
    "heavy_count",
    "user_table",
    "single_child_law",
    "law_from_spec",
    "law_to_spec",
    "sample_offspring",
    "sample_offspring_batch",
    "eval_yz",
    "eval_yz_batch",
    "eval_laplace",
    "laplace_profile",
    "normalize_to_boundary",
    "is_boundary",
]

LN2 = math.log(2.0)
#: lattice span of the lattice_binary family
LATTICE_H = math.log(2.0 + math.sqrt(2.0))
#: probability of the single-child brood in lattice_binary
LATTICE_Q = (2.0 - math.sqrt(2.0)) / 4.0

_BOUNDARY_TOL = 1e-12
_HEAVY_TABLE_MAX = 1 << 20  # explicit pmf table for N <= ~1e6; tail by rejection


class LawError(Exception):
    """Base class for offspring-law errors."""


class NoBoundaryRoot(LawError):
    """The bracket search for the boundary normalization found no root."""


class NonIntegrable(LawError):
    """The Laplace transform diverges over the whole search range."""


class OutOfDomain(LawError):
    """Laplace transform requested outside the finiteness interval."""


@dataclass(frozen=True)
class OffspringDraw:
    """One realized brood: a displacement per child."""

    displacements: np.ndarray

    def __post_init__(self):
        d = np.asarray(self.displacements, dtype=float)
        if d.ndim != 1 or not np.all(np.isfinite(d)):
            raise LawError("displacements must be a finite 1-d vector")
        object.__setattr__(self, "displacements", d)


@dataclass(frozen=True)
class LaplaceProfile:
    """Laplace transform data of a law: Phi, Psi = log Phi, Psi', sigma^2."""

    phi: Callable[[float], float]
    psi: Callable[[float], float]
    psi_prime: Callable[[float], float]
    sigma2: float
    mode: str  # "analytic" or "monte_carlo(<draws>)"


@dataclass(frozen=True)
class OffspringLaw:
    """Immutable offspring law with an optional affine boundary normalization.

    The base family generates raw child displacements d; sampled displacements
    are a_star * d + b_star.  (a_star, b_star) = (1, 0) means "raw".
    """

    family: str
    params: tuple = ()
    a_star: float = 1.0
    b_star: float = 0.0
    atoms: tuple = field(default=(), repr=False)  # user_table only

    def sample(self, rng: np.random.Generator) -> OffspringDraw:
        return sample_offspring(self, rng)


# ---------------------------------------------------------------------------
# constructors

def binary_gaussian(mu: float = 2 * LN2, s2: float = 2 * LN2) -> OffspringLaw:
    """Two children with i.i.d. Normal(mu, s2) displacements.

    Defaults solve log 2 - mu + s2/2 = 0 and -mu + s2 = 0, so the default law
    is already in the boundary case.
    """
    if s2 <= 0:
        raise LawError("s2 must be positive")
    return OffspringLaw("binary_gaussian", (float(mu), float(s2)))


def lattice_binary() -> OffspringLaw:
    """One child at -h with probability q, else two children at +h."""
    return OffspringLaw("lattice_binary", ())


def heavy_count(theta: float, mu: float = 0.0, s2: float = 1.0) -> OffspringLaw:
    """N children, P(N=n) = c_theta n^-2 (log n)^-theta for n >= 2.

    theta > 1 is required for E[N] < infinity.  Displacements are i.i.d.
    Normal(mu, s2); the raw law is not boundary-normalized.
    """
    if not theta > 1:
        raise LawError("theta must exceed 1 (E[#children] must be finite)")
    if s2 <= 0:
        raise LawError("s2 must be positive")
    return OffspringLaw("heavy_count", (float(theta), float(mu), float(s2)))


def user_table(atoms) -> OffspringLaw:
    """Finite mixture law: atoms = [(prob, [displacements...]), ...]."""
    cleaned = []
    total = 0.0
    for p, disp in atoms:
        p = float(p)
        if p < 0:
            raise LawError("atom probabilities must be nonnegative")
        d = tuple(float(x) for x in disp)
        if not all(math.isfinite(x) for x in d):
            raise LawError("atom displacements must be finite")
        cleaned.append((p, d))
        total += p
    if not cleaned or abs(total - 1.0) > 1e-12:
        raise LawError("atom probabilities must sum to 1")
    return OffspringLaw("user_table", (), atoms=tuple(cleaned))


def single_child_law(displacement: float = 0.0) -> OffspringLaw:
    """Degenerate law: exactly one child at a fixed displacement."""
    return user_table([(1.0, [displacement])])


# ---------------------------------------------------------------------------
# heavy_count normalizing constant and count sampling

@lru_cache(maxsize=None)
def _heavy_tables(theta: float):
    """(c_theta, E[N], pmf cdf table up to _HEAVY_TABLE_MAX) for heavy_count.

    The raw series sum_{n>=2} n^-2 (log n)^-theta is summed explicitly up to
    the table bound; the remainder is a midpoint Euler-Maclaurin integral,
    accurate far below 1e-14 relative.
    """
    m = _HEAVY_TABLE_MAX
    n = np.arange(2, m + 1, dtype=float)
    w = n ** -2.0 * np.log(n) ** -theta
    head = math.fsum(w)
    # tail integral via u = 1/x: int_a^inf x^-2 log^-theta(x) dx
    #                          = int_0^{1/a} (-log u)^-theta du
    tail, _ = integrate.quad(
        lambda u: (-math.log(u)) ** -theta, 0.0, 1.0 / (m + 0.5),
        epsabs=1e-20, epsrel=1e-13)
    total = head + tail
    c_theta = 1.0 / total

    # E[N]: sum n^-1 (log n)^-theta has the closed-form tail
    # int_a^inf dx / (x log^theta x) = log(a)^(1-theta) / (theta - 1).
    head1 = math.fsum(n * w)
    tail1 = math.log(m + 0.5) ** (1.0 - theta) / (theta - 1.0)
    mean_n = c_theta * (head1 + tail1)

    cdf = np.cumsum(w) * c_theta
    return c_theta, mean_n, cdf


def heavy_mean_children(theta: float) -> float:
    """E[#children] for the heavy_count family."""
    return _heavy_tables(theta)[1]


def _sample_heavy_counts(theta: float, size: int, rng: np.random.Generator) -> np.ndarray:
    """Vectorized draws of the heavy-tailed child count."""
    _, _, cdf = _heavy_tables(theta)
    u = rng.random(size)
    counts = np.searchsorted(cdf, u) + 2
    over = np.flatnonzero(u >= cdf[-1])
    if over.size:
        m = _HEAVY_TABLE_MAX
        log_ref = math.log(m + 1)
        ratio_ref = (m + 2) / (m + 1)
        for i in over:
            # tail rejection: propose from P0(n) = m/(n(n+1)), n > m
            while True:
                n = int(m / rng.random())
                if n <= m:
                    continue
                accept = ((n + 1) / n) * (log_ref / math.log(n)) ** theta / ratio_ref
                if rng.random() < accept:
                    counts[i] = n
                    break
    return counts


# ---------------------------------------------------------------------------
# sampling

def sample_offspring(law: OffspringLaw, rng: np.random.Generator) -> OffspringDraw:
    """Draw one brood from the law (i.i.d. across calls within a stream)."""
    counts, flat = sample_offspring_batch(law, 1, rng)
    return OffspringDraw(flat[: counts[0]])


def sample_offspring_batch(law: OffspringLaw, size: int,
                           rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Draw ``size`` broods at once.

    Returns (counts, flat_displacements): counts[i] children for brood i, and
    a flat vector of all displacements in brood order.
    """
    if law.family == "binary_gaussian":
        mu, s2 = law.params
        counts = np.full(size, 2, dtype=np.int64)
        flat = rng.normal(mu, math.sqrt(s2), size=2 * size)
    elif law.family == "lattice_binary":
        single = rng.random(size) < LATTICE_Q
        counts = np.where(single, 1, 2).astype(np.int64)
        flat = np.empty(int(counts.sum()))
        ends = np.cumsum(counts)
        starts = ends - counts
        flat[starts[single]] = -LATTICE_H
        twos = starts[~single]
        flat[twos] = LATTICE_H
        flat[twos + 1] = LATTICE_H
    elif law.family == "heavy_count":
        theta, mu, s2 = law.params
        counts = _sample_heavy_counts(theta, size, rng)
        flat = rng.normal(mu, math.sqrt(s2), size=int(counts.sum()))
    elif law.family == "user_table":
        probs = np.array([p for p, _ in law.atoms])
        sizes = np.array([len(d) for _, d in law.atoms], dtype=np.int64)
        idx = rng.choice(len(law.atoms), size=size, p=probs)
        counts = sizes[idx]
        parts = [np.asarray(law.atoms[i][1], dtype=float) for i in idx]
        flat = np.concatenate(parts) if parts else np.empty(0)
    else:
        raise LawError(f"unknown family {law.family!r}")
    if law.a_star != 1.0 or law.b_star != 0.0:
        flat = law.a_star * flat + law.b_star
    return counts, flat


def eval_yz(draw: OffspringDraw) -> tuple[float, float]:
    """(Y, Z) = (sum exp(-V), sum max(V,0) exp(-V)) over the brood."""
    v = draw.displacements
    e = np.exp(-v)
    return float(e.sum()), float((np.maximum(v, 0.0) * e).sum())


def eval_yz_batch(counts: np.ndarray, flat: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized (Y, Z) per brood for a batch from sample_offspring_batch."""
    ids = np.repeat(np.arange(counts.size), counts)
    e = np.exp(-flat)
    y = np.bincount(ids, weights=e, minlength=counts.size)
    z = np.bincount(ids, weights=np.maximum(flat, 0.0) * e, minlength=counts.size)
    return y, z


# ---------------------------------------------------------------------------
# Laplace transform

def _base_phi_parts(law: OffspringLaw, t: float) -> tuple[float, float]:
    """(Phi_base(t), Phi_base'(t)) of the raw (pre-normalization) family."""
    if law.family == "binary_gaussian":
        mu, s2 = law.params
        phi = 2.0 * math.exp(-t * mu + 0.5 * t * t * s2)
        return phi, phi * (-mu + t * s2)
    if law.family == "lattice_binary":
        h, q = LATTICE_H, LATTICE_Q
        eh, emh = math.exp(t * h), math.exp(-t * h)
        return q * eh + 2 * (1 - q) * emh, q * h * eh - 2 * (1 - q) * h * emh
    if law.family == "heavy_count":
        theta, mu, s2 = law.params
        en = heavy_mean_children(theta)
        phi = en * math.exp(-t * mu + 0.5 * t * t * s2)
        return phi, phi * (-mu + t * s2)
    if law.family == "user_table":
        phi = dphi = 0.0
        for p, disp in law.atoms:
            for d in disp:
                e = p * math.exp(-t * d)
                phi += e
                dphi += -d * e
        return phi, dphi
    raise LawError(f"unknown family {law.family!r}")


def eval_laplace(law: OffspringLaw, t: float, mode: str = "analytic",
                 mc_draws: int = 100_000,
                 rng: np.random.Generator | None = None):
    """(Phi(t), Psi(t), Psi'(t)) of the normalized law.

    Analytic mode uses the family's closed form composed with the affine
    normalization: Phi(t) = Phi_base(t a*) exp(-t b*).  Monte Carlo mode
    returns ((Phi, se), (Psi, se), (Psi', se)) from ``mc_draws`` broods.
    """
    if mode == "analytic":
        a, b = law.a_star, law.b_star
        phi_b, dphi_b = _base_phi_parts(law, t * a)
        phi = phi_b * math.exp(-t * b)
        if not math.isfinite(phi) or phi <= 0:
            raise OutOfDomain(f"Phi({t}) is not finite for this law")
        psi = math.log(phi)
        psi_prime = a * (dphi_b / phi_b) - b  # d/dt log Phi
        return phi, psi, psi_prime
    if mode == "monte_carlo":
        if rng is None:
            raise LawError("monte_carlo mode requires an rng")
        counts, flat = sample_offspring_batch(law, mc_draws, rng)
        ids = np.repeat(np.arange(mc_draws), counts)
        e = np.exp(-t * flat)
        s = np.bincount(ids, weights=e, minlength=mc_draws)
        sv = np.bincount(ids, weights=flat * e, minlength=mc_draws)
        phi, phi_se = float(s.mean()), float(s.std(ddof=1) / math.sqrt(mc_draws))
        dphi, dphi_se = float(-sv.mean()), float(sv.std(ddof=1) / math.sqrt(mc_draws))
        if phi <= 0:
            raise OutOfDomain(f"Phi({t}) estimate nonpositive")
        psi = math.log(phi)
        psi_prime = dphi / phi
        # delta-method standard errors
        psi_se = phi_se / phi
        psi_prime_se = math.hypot(dphi_se / phi, dphi * phi_se / phi ** 2)
        return (phi, phi_se), (psi, psi_se), (psi_prime, psi_prime_se)
    raise LawError(f"unknown mode {mode!r}")


def _sigma2_analytic(law: OffspringLaw) -> float:
    """E[sum V^2 exp(-V)] under the normalized law (closed forms)."""
    a, b = law.a_star, law.b_star
    if law.family in ("binary_gaussian", "heavy_count"):
        if law.family == "binary_gaussian":
            mu, s2 = law.params
            en = 2.0
        else:
            theta, mu, s2 = law.params
            en = heavy_mean_children(theta)
        m = a * mu + b
        v = a * a * s2
        # E[X^2 e^-X] for X ~ N(m, v), times E[N]
        return en * math.exp(-m + 0.5 * v) * ((m - v) ** 2 + v)
    if law.family == "lattice_binary":
        return LATTICE_H ** 2
    if law.family == "user_table":
        out = 0.0
        for p, disp in law.atoms:
            for d in disp:
                x = a * d + b
                out += p * x * x * math.exp(-x)
        return out
    raise LawError(f"unknown family {law.family!r}")


def laplace_profile(law: OffspringLaw, mode: str = "analytic",
                    mc_draws: int = 100_000,
                    rng: np.random.Generator | None = None) -> LaplaceProfile:
    """Bundle Phi, Psi, Psi' and sigma^2 for a law."""
    if mode == "analytic":
        sigma2 = _sigma2_analytic(law)
        if not (sigma2 > 0 and math.isfinite(sigma2)):
            raise LawError("sigma^2 must be positive and finite")
        return LaplaceProfile(
            phi=lambda t: eval_laplace(law, t)[0],
            psi=lambda t: eval_laplace(law, t)[1],
            psi_prime=lambda t: eval_laplace(law, t)[2],
            sigma2=sigma2,
            mode="analytic",
        )
    if mode == "monte_carlo":
        if rng is None:
            raise LawError("monte_carlo mode requires an rng")
        counts, flat = sample_offspring_batch(law, mc_draws, rng)
        ids = np.repeat(np.arange(mc_draws), counts)
        s2_terms = np.bincount(ids, weights=flat * flat * np.exp(-flat),
                               minlength=mc_draws)
        sigma2 = float(s2_terms.mean())
        stream = rng

        def mk(which):
            def f(t):
                res = eval_laplace(law, t, "monte_carlo", mc_draws, stream)
                return res[which][0]
            return f

        return LaplaceProfile(mk(0), mk(1), mk(2), sigma2,
                              f"monte_carlo({mc_draws})")
    raise LawError(f"unknown mode {mode!r}")


# ---------------------------------------------------------------------------
# boundary normalization

def is_boundary(law: OffspringLaw, tol: float = 1e-9) -> bool:
    """True if Psi(1) and Psi'(1) vanish analytically within tol."""
    _, psi, psi_prime = eval_laplace(law, 1.0)
    return abs(psi) <= tol and abs(psi_prime) <= tol


def normalize_to_boundary(law: OffspringLaw, a_max: float = 50.0,
                          tol: float = 1e-12) -> OffspringLaw:
    """Affine reduction V -> a* V + b* putting the law in the boundary case.

    Finds a* solving Psi(a) = a Psi'(a) by bisection on [1e-6, a_max] and sets
    b* = Psi(a*), both in terms of the law's current (possibly already
    normalized) transform; the affine maps compose.  Idempotent.
    """
    _, psi1, psi1p = eval_laplace(law, 1.0)
    if abs(psi1) <= _BOUNDARY_TOL and abs(psi1p) <= _BOUNDARY_TOL:
        return law

    def g(t):
        _, psi, psi_prime = eval_laplace(law, t)
        return psi - t * psi_prime

    lo, hi = 1e-6, a_max
    grid = np.linspace(lo, hi, 2048)
    vals = []
    n_finite = 0
    for t in grid:
        try:
            vals.append(g(float(t)))
            n_finite += 1
        except (OutOfDomain, OverflowError):
            vals.append(math.nan)
    if n_finite == 0:
        raise NonIntegrable("Phi diverges over the whole search range")

    bracket = None
    for i in range(len(grid) - 1):
        va, vb = vals[i], vals[i + 1]
        if math.isnan(va) or math.isnan(vb):
            continue
        if va == 0.0:
            bracket = (grid[i], grid[i])
            break
        if va * vb < 0:
            bracket = (grid[i], grid[i + 1])
            break
    if bracket is None:
        raise NoBoundaryRoot(
            f"no sign change of Psi(a) - a Psi'(a) on [{lo}, {a_max}]")

    a_lo, a_hi = float(bracket[0]), float(bracket[1])
    while a_hi - a_lo > tol:
        mid = 0.5 * (a_lo + a_hi)
        if g(a_lo) * g(mid) <= 0:
            a_hi = mid
        else:
            a_lo = mid
    a_root = 0.5 * (a_lo + a_hi)
    _, b_root, _ = eval_laplace(law, a_root)

    return replace(law,
                   a_star=a_root * law.a_star,
                   b_star=a_root * law.b_star + b_root)


# ---------------------------------------------------------------------------
# JSON law specifications

def law_from_spec(spec: dict) -> OffspringLaw:
    """Build a law from the documented JSON schema.

    Schema: {"family": str, "params": {...}, "normalize": bool}.
    """
    if not isinstance(spec, dict):
        raise LawError("law spec must be a JSON object")
    unknown = set(spec) - {"family", "params", "normalize"}
    if unknown:
        raise LawError(f"unknown law spec keys: {sorted(unknown)}")
    family = spec.get("family")
    params = spec.get("params", {}) or {}
    if family == "binary_gaussian":
        law = binary_gaussian(params.get("mu", 2 * LN2), params.get("s2", 2 * LN2))
    elif family == "lattice_binary":
        law = lattice_binary()
    elif family == "heavy_count":
        if "theta" not in params:
            raise LawError("heavy_count requires params.theta")
        law = heavy_count(params["theta"], params.get("mu", 0.0),
                          params.get("s2", 1.0))
    elif family == "user_table":
        if "atoms" not in params:
            raise LawError("user_table requires params.atoms")
        law = user_table([(a["p"], a["displacements"]) for a in params["atoms"]])
    else:
        raise LawError(f"unknown family {family!r}")
    if spec.get("normalize", False):
        law = normalize_to_boundary(law)
    return law


def law_to_spec(law: OffspringLaw) -> dict:
    """Inverse of law_from_spec for the raw (pre-normalization) parameters."""
    if law.family == "binary_gaussian":
        params = {"mu": law.params[0], "s2": law.params[1]}
    elif law.family == "lattice_binary":
        params = {}
    elif law.family == "heavy_count":
        params = {"theta": law.params[0], "mu": law.params[1], "s2": law.params[2]}
    else:
        params = {"atoms": [{"p": p, "displacements": list(d)} for p, d in law.atoms]}
    return {"family": law.family, "params": params,
            "normalize": not (law.a_star == 1.0 and law.b_star == 0.0)}
