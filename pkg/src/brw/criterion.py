"""Integrability diagnostics for the derivative martingale limit.

Whether the signed martingale limit is non-trivial is governed by two brood
moments: E[Y (log+ Y)^2] and E[Z log+ Z], where per brood Y = sum exp(-V)
and Z = sum max(V, 0) exp(-V).  Finite moments of this kind cannot be
certified by Monte Carlo alone, so the module reports evidence in three
capped or truncated forms and leaves the verdict to the reader:

  * capped moment curves K -> E[Y (log+ Y)^2 ^ K] and E[Z log+ Z ^ K],
    whose flattening (or not) tracks the underlying integrability,
  * two martingale series evaluated along the walk conditioned to stay
    positive, one that plateaus exactly when the limit is non-trivial
    and one whose growth flags the trivial case,
  * tail functionals F1(z) = E[Y; log Y >= z] and
    F3(z) = E[Z; log Z >= z + log y] / R(z), fed to the series/integral
    diagnostics of the conditioned module.

Everything here samples broods under the plain offspring law, so heavy
count laws are fine; no change of measure is needed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .laws import (OffspringLaw, sample_offspring_batch, eval_yz_batch,
                   is_boundary, _heavy_tables, _HEAVY_TABLE_MAX)
from .walk import (StepLaw, RenewalFunction, derive_step_law,
                   estimate_renewal, default_grid)
from .forest import simulate_martingales
from .spine import _finite_broods
from .conditioned import (sample_conditioned, MonotoneTable,
                          SERIES_PLATEAU_MAX, SERIES_DIVERGENT_MIN)

__all__ = [
    "CriterionError", "MomentReport", "CriterionSeries", "TailTables",
    "DichotomyReport", "estimate_moments", "eval_X", "run_criterion_series",
    "eval_tail_functionals", "dichotomy_experiment", "renewal_handle",
]

_CHUNK = 200_000
_POS_TOL = 1e-9


class CriterionError(Exception):
    pass


# ---------------------------------------------------------------------------
# capped brood moments

@dataclass
class MomentReport:
    """Capped moment curves over a ladder of caps.

    m_y[k] estimates E[min(Y (log+ Y)^2, caps[k])] and m_z[k] estimates
    E[min(Z log+ Z, caps[k])].  Both curves are nondecreasing in the cap
    by construction (the same sample is capped at every level).  slope_y
    and slope_z measure the growth per unit log(cap) over the last decade
    of the ladder; a curve that has flattened has slope near zero.
    """

    caps: np.ndarray
    m_y: np.ndarray
    m_y_se: np.ndarray
    m_z: np.ndarray
    m_z_se: np.ndarray
    draws: int
    slope_y: float = field(init=False)
    slope_z: float = field(init=False)

    def __post_init__(self):
        self.caps = np.asarray(self.caps, dtype=float)
        for name in ("m_y", "m_y_se", "m_z", "m_z_se"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != self.caps.shape:
                raise CriterionError(f"{name} shape mismatch")
            setattr(self, name, arr)
        if self.caps.size < 2 or np.any(np.diff(self.caps) <= 0):
            raise CriterionError("caps must be increasing with >= 2 levels")
        if np.any(np.diff(self.m_y) < -1e-12) or np.any(np.diff(self.m_z) < -1e-12):
            raise CriterionError("capped moments must be nondecreasing")
        self.slope_y = _last_decade_slope(self.caps, self.m_y)
        self.slope_z = _last_decade_slope(self.caps, self.m_z)


def _last_decade_slope(caps: np.ndarray, m: np.ndarray) -> float:
    lo = int(np.searchsorted(caps, caps[-1] / 10.0))
    lo = min(lo, caps.size - 2)
    dlog = math.log(caps[-1]) - math.log(caps[lo])
    return float((m[-1] - m[lo]) / dlog)


def estimate_moments(law: OffspringLaw, draws: int,
                     rng: np.random.Generator,
                     caps: np.ndarray | None = None) -> MomentReport:
    """Monte Carlo capped moment curves for a boundary-case law."""
    if not is_boundary(law):
        raise CriterionError("offspring law must be in the boundary case")
    if caps is None:
        # plain MC cannot populate caps far beyond draws * P(tail), so the
        # default ladder stops at 1e4
        caps = np.logspace(0.0, 4.0, 9)
    caps = np.asarray(caps, dtype=float)
    s1y = np.zeros(caps.size)
    s2y = np.zeros(caps.size)
    s1z = np.zeros(caps.size)
    s2z = np.zeros(caps.size)
    done = 0
    while done < draws:
        n = min(_CHUNK, draws - done)
        counts, flat = sample_offspring_batch(law, n, rng)
        y, z = eval_yz_batch(counts, flat)
        with np.errstate(divide="ignore", invalid="ignore"):
            ly = np.where(y > 0, np.log(np.maximum(y, 1e-300)), 0.0)
            lz = np.where(z > 0, np.log(np.maximum(z, 1e-300)), 0.0)
        gy = y * np.maximum(ly, 0.0) ** 2
        gz = z * np.maximum(lz, 0.0)
        for k, cap in enumerate(caps):
            cy = np.minimum(gy, cap)
            cz = np.minimum(gz, cap)
            s1y[k] += cy.sum()
            s2y[k] += (cy * cy).sum()
            s1z[k] += cz.sum()
            s2z[k] += (cz * cz).sum()
        done += n
    m_y = s1y / draws
    m_z = s1z / draws
    se_y = np.sqrt(np.maximum(s2y / draws - m_y ** 2, 0.0) / draws)
    se_z = np.sqrt(np.maximum(s2z / draws - m_z ** 2, 0.0) / draws)
    return MomentReport(caps, m_y, se_y, m_z, se_z, draws)


# ---------------------------------------------------------------------------
# one-step martingale ratio X

def _explicit_x(zeta_flat: np.ndarray, rz: np.ndarray, counts: np.ndarray,
                flat: np.ndarray, R: RenewalFunction) -> np.ndarray:
    """X per brood: sum R(zeta + d) exp(-d) 1{zeta + d > 0} / R(zeta)."""
    ids = np.repeat(np.arange(zeta_flat.size), counts)
    pos = zeta_flat[ids] + flat
    alive = pos > _POS_TOL
    w = np.zeros(flat.size)
    w[alive] = R(pos[alive]) * np.exp(-flat[alive])
    return np.bincount(ids, weights=w, minlength=zeta_flat.size) / rz


def _x_batch(law: OffspringLaw, zeta_flat: np.ndarray, R: RenewalFunction,
             rng: np.random.Generator) -> np.ndarray:
    """One X draw per entry of zeta_flat, each from a fresh brood."""
    counts, flat = sample_offspring_batch(law, zeta_flat.size, rng)
    return _explicit_x(zeta_flat, R(zeta_flat), counts, flat, R)


def eval_X(law: OffspringLaw, zeta: float, R: RenewalFunction,
           rng: np.random.Generator, size: int = 1) -> np.ndarray:
    """Draw the ratio of successive truncated martingale terms at zeta.

    E[X] = 1 for every zeta > 0 by harmonicity of R under the associated
    walk killed at 0.  Raises RIncompatible if a child position falls
    beyond the reach of the R handle.
    """
    if not zeta > 0:
        raise CriterionError("zeta must be positive")
    if not is_boundary(law):
        raise CriterionError("offspring law must be in the boundary case")
    return _x_batch(law, np.full(size, float(zeta)), R, rng)


# ---------------------------------------------------------------------------
# diagnostic series along the conditioned walk

def _classify_partial(partial: np.ndarray, se: np.ndarray) -> tuple[float, str]:
    """Last-half growth plus label; growth must clear 4 standard errors
    of the last-half increment before it counts as divergence, so a
    couple of rare importance hits on a near-zero base stay plateaued."""
    half = partial.size // 2
    base = partial[half]
    inc = partial[-1] - base
    se_inc = math.sqrt(float((se[half:] ** 2).sum()))
    if partial[-1] == 0.0:
        growth = 0.0
    elif base == 0.0:
        growth = math.inf
    else:
        growth = float(inc / base)
    if inc <= 4.0 * se_inc or growth <= SERIES_PLATEAU_MAX:
        return growth, "convergent-series"
    if growth >= SERIES_DIVERGENT_MIN:
        return growth, "divergent-series"
    return growth, "inconclusive"


def _majority(labels: list) -> str:
    for lab in set(labels):
        if labels.count(lab) * 2 > len(labels):
            return lab
    return "inconclusive"


@dataclass
class CriterionSeries:
    """Partial sums of the two diagnostic series.

    summand_capped[i] estimates E[X (W_n X ^ 1)] at n = n_vals[i], where
    W_n = R(zeta_n) exp(-zeta_n); its partial sum plateaus exactly when
    the martingale limit is non-trivial.  summand_tail[i, j] estimates
    E[X; W_n X >= y_vals[j]]; growth of any column flags the trivial
    case.

    Classification reuses the last-half growth thresholds of the
    conditioned module's series diagnostic, applied per path with a
    majority vote and median growth: a single path revisiting low levels
    late inflates its own partial sums genuinely (the walk is transient
    but not yet far away at finite n) and the vote discards it, the same
    remedy the conditioned module uses for its integral-test jitter.
    """

    n_vals: np.ndarray
    y_vals: np.ndarray
    path_summand_capped: np.ndarray    # (paths, n)
    path_se_capped: np.ndarray
    path_summand_tail: np.ndarray      # (paths, n, len(y))
    path_se_tail: np.ndarray
    m_draws: int
    n_paths: int = field(init=False)
    summand_capped: np.ndarray = field(init=False)
    se_capped: np.ndarray = field(init=False)
    summand_tail: np.ndarray = field(init=False)
    se_tail: np.ndarray = field(init=False)
    partial_capped: np.ndarray = field(init=False)
    partial_tail: np.ndarray = field(init=False)
    growth_capped: float = field(init=False)
    label_capped: str = field(init=False)
    growth_tail: np.ndarray = field(init=False)
    label_tail: list = field(init=False)

    def __post_init__(self):
        if np.any(self.path_summand_capped < -1e-15) \
                or np.any(self.path_summand_tail < -1e-15):
            raise CriterionError("series summands must be nonnegative")
        p = self.path_summand_capped.shape[0]
        self.n_paths = p
        self.summand_capped = self.path_summand_capped.mean(axis=0)
        self.se_capped = np.sqrt((self.path_se_capped ** 2).sum(axis=0)) / p
        self.summand_tail = self.path_summand_tail.mean(axis=0)
        self.se_tail = np.sqrt((self.path_se_tail ** 2).sum(axis=0)) / p
        self.partial_capped = np.cumsum(self.summand_capped)
        self.partial_tail = np.cumsum(self.summand_tail, axis=0)
        pairs = [_classify_partial(np.cumsum(self.path_summand_capped[i]),
                                   self.path_se_capped[i])
                 for i in range(p)]
        self.growth_capped = float(np.median([g for g, _ in pairs]))
        self.label_capped = _majority([lab for _, lab in pairs])
        self.growth_tail = np.empty(self.y_vals.size)
        self.label_tail = []
        for j in range(self.y_vals.size):
            pairs = [_classify_partial(
                np.cumsum(self.path_summand_tail[i, :, j]),
                self.path_se_tail[i, :, j]) for i in range(p)]
            self.growth_tail[j] = float(np.median([g for g, _ in pairs]))
            self.label_tail.append(_majority([lab for _, lab in pairs]))

    @property
    def verdict(self) -> str:
        """Joint classification: any divergent series flags a trivial
        limit, an all-plateau report flags a non-trivial one."""
        labels = [self.label_capped] + list(self.label_tail)
        if any(l == "divergent-series" for l in labels):
            return "violating-like"
        if all(l == "convergent-series" for l in labels):
            return "satisfying-like"
        return "inconclusive"

    def rows(self, law_name: str):
        """Flat (law, series, n, summand, partial_sum, se) rows for CSV."""
        out = []
        for i, n in enumerate(self.n_vals):
            out.append((law_name, "capped", int(n),
                        float(self.summand_capped[i]),
                        float(self.partial_capped[i]),
                        float(self.se_capped[i])))
        for j, y in enumerate(self.y_vals):
            name = f"tail-y{y:g}"
            for i, n in enumerate(self.n_vals):
                out.append((law_name, name, int(n),
                            float(self.summand_tail[i, j]),
                            float(self.partial_tail[i, j]),
                            float(self.se_tail[i, j])))
        return out


def renewal_handle(step: StepLaw, rng: np.random.Generator | None = None,
                   n_excursions: int = 60_000,
                   x_max: float | None = None) -> RenewalFunction:
    """Default R handle for a step law: exact on lattices, an estimated
    table with the fitted linear tail everywhere else."""
    if step.kind == "lattice":
        return RenewalFunction.from_lattice(step.span)
    if rng is None:
        raise CriterionError("non-lattice step laws need an rng to estimate R")
    grid = default_grid(step, x_max=x_max) if x_max else default_grid(step)
    # excursion lengths have infinite mean; the default step budget would
    # censor the table into a biased partial estimate
    table = estimate_renewal(step, n_excursions, grid, rng,
                             max_total_steps=2_000_000_000)
    if table.partial:
        raise CriterionError("renewal table budget exhausted")
    return RenewalFunction.from_table(table, extend_tail=True)


# Broods larger than this are summed through their normal surrogate
# (mean + sqrt(N) fluctuation); relative error is O(N^{-1/2}).
_N_EXPLICIT = 512
# past e^36 the floored count exceeds 2^53; switch to continuous-tail
# weight arithmetic carried in log N
_LN_INT_MAX = 36.0
_GH_NODES = np.polynomial.hermite_e.hermegauss(96)


def _gaussian_disp_params(law: OffspringLaw) -> tuple[float, float]:
    if law.family == "binary_gaussian":
        mu0, s2 = law.params
    else:
        _, mu0, s2 = law.params
    return law.a_star * mu0 + law.b_star, law.a_star ** 2 * s2


def _w_moments(law: OffspringLaw, zeta: np.ndarray, R: RenewalFunction):
    """Mean and sd of one child weight W = R(zeta+d) e^{-d} 1{zeta+d>0}
    for a normal displacement d, per zeta, by Gauss-Hermite quadrature."""
    mud, sd2 = _gaussian_disp_params(law)
    sd = math.sqrt(sd2)
    h, gw = _GH_NODES
    gw = gw / gw.sum()
    moms = []
    # e^{-kx} phi_{mud,sd2}(x) = e^{k^2 sd2/2 - k mud} phi_{mud - k sd2, sd2}(x)
    for k in (1, 2):
        fac = math.exp(k * k * sd2 / 2.0 - k * mud)
        x = (mud - k * sd2) + sd * h
        pos = zeta[:, None] + x[None, :]
        vals = R(np.maximum(pos, 0.0)) ** k * (pos > _POS_TOL)
        moms.append(fac * (vals @ gw))
    m1, m2 = moms
    return m1, np.sqrt(np.maximum(m2 - m1 ** 2, 0.0))


@lru_cache(maxsize=None)
def _heavy_count_proposal(theta: float):
    """Size-biased count proposal split at the pmf table edge.

    Below the edge the proposal is the exact size-biased pmf; above it,
    floor of the continuous inversion of the size-biased tail.  Returns
    (table mass, tail mass, tail branch probability, table cdf, c_theta,
    log edge)."""
    c, _, _ = _heavy_tables(theta)
    m = _HEAVY_TABLE_MAX
    n = np.arange(2, m + 1, dtype=float)
    sb = c / (n * np.log(n) ** theta)          # n * p_n
    s_table = float(sb.sum())
    ln_a = math.log(m + 1.0)
    t_mass = c * ln_a ** (1.0 - theta) / (theta - 1.0)
    t_frac = t_mass / (s_table + t_mass)
    cdf = np.cumsum(sb) / s_table
    return s_table, t_mass, t_frac, cdf, c, ln_a


def _heavy_weighted_x(law: OffspringLaw, zrep: np.ndarray, rz: np.ndarray,
                      muw: np.ndarray, sgw: np.ndarray, R: RenewalFunction,
                      rng: np.random.Generator):
    """Count-importance-sampled X draws for a heavy count law.

    Counts come from the size-biased proposal, so broods of size e^zeta
    (which carry the whole series mass) appear with polynomial instead of
    exponential probability; the importance weight is exact.  Broods
    beyond _N_EXPLICIT use the normal surrogate for the interior sum.
    Returns (wx, lnx) with wx = weight * X and lnx = log X; E[wx] = 1.
    """
    theta = law.params[0]
    s_table, t_mass, t_frac, cdf, c, ln_a = _heavy_count_proposal(theta)
    mud, sd2 = _gaussian_disp_params(law)
    km = zrep.size
    wx = np.zeros(km)
    lnx = np.full(km, -np.inf)
    zn = rng.standard_normal(km)
    is_tail = rng.random(km) < t_frac

    tb = np.flatnonzero(~is_tail)
    cnt = np.searchsorted(cdf, rng.random(tb.size)) + 2
    w_tb = s_table / ((1.0 - t_frac) * cnt)
    expl = cnt <= _N_EXPLICIT
    ei = tb[expl]
    ecnt = cnt[expl]
    if ei.size:
        d = rng.normal(mud, math.sqrt(sd2), int(ecnt.sum()))
        xs = _explicit_x(zrep[ei], rz[ei], ecnt, d, R)
        wx[ei] = w_tb[expl] * xs
        with np.errstate(divide="ignore"):
            lnx[ei] = np.log(xs)
    ci = tb[~expl]
    if ci.size:
        nf = cnt[~expl].astype(float)
        xs = np.maximum(nf * muw[ci] + np.sqrt(nf) * sgw[ci] * zn[ci],
                        0.0) / rz[ci]
        wx[ci] = w_tb[~expl] * xs
        with np.errstate(divide="ignore"):
            lnx[ci] = np.log(xs)

    ti = np.flatnonzero(is_tail)
    if ti.size:
        v = np.maximum(rng.random(ti.size), 1e-12)
        ln_n = ln_a * v ** (-1.0 / (theta - 1.0))
        small = ln_n <= _LN_INT_MAX
        si = ti[small]
        if si.size:
            nf = np.floor(np.exp(ln_n[small]))
            fac = np.maximum(muw[si] + sgw[si] * zn[si] / np.sqrt(nf), 0.0)
            xs = nf * fac / rz[si]
            # cell mass ln(n)^{1-theta} - ln(n+1)^{1-theta} cancels
            # catastrophically for large n; expand via log1p/expm1
            lg = np.log(nf)
            dlt = lg ** (1.0 - theta) * (
                -np.expm1((1.0 - theta) * np.log1p(np.log1p(1.0 / nf) / lg)))
            w = ((theta - 1.0) * t_mass
                 / (nf ** 2 * lg ** theta * t_frac * dlt))
            wx[si] = w * xs
            with np.errstate(divide="ignore"):
                lnx[si] = np.log(xs)
        bi = ti[~small]
        if bi.size:
            ln_nb = ln_n[~small]
            fac = np.maximum(muw[bi] + sgw[bi] * zn[bi]
                             * np.exp(-0.5 * ln_nb), 0.0)
            # exact cell weight degenerates to t_mass / (t_frac N); N
            # cancels against X = N fac / R so wx stays finite
            wx[bi] = (t_mass / t_frac) * fac / rz[bi]
            with np.errstate(divide="ignore"):
                lnx[bi] = ln_nb + np.log(fac) - np.log(rz[bi])
    return wx, lnx


def _weighted_x_draws(law: OffspringLaw, zbase: np.ndarray, m_draws: int,
                      R: RenewalFunction, rng: np.random.Generator):
    """(wx, lnx) for m_draws importance-weighted X copies per zeta.

    Finite-brood laws use the exact size-biased brood mixture (weight
    E[N]/N); binary gaussian broods have constant size so plain draws
    already have weight 1.
    """
    zrep = np.repeat(zbase, m_draws)
    rz = np.repeat(np.asarray(R(zbase), dtype=float), m_draws)
    if law.family == "heavy_count":
        m1, sg = _w_moments(law, zbase, R)
        muw = np.repeat(m1, m_draws)
        sgw = np.repeat(sg, m_draws)
        return _heavy_weighted_x(law, zrep, rz, muw, sgw, R, rng)
    km = zrep.size
    broods = _finite_broods(law)
    if broods is None:
        counts, flat = sample_offspring_batch(law, km, rng)
        w = np.ones(km)
    else:
        probs = np.array([p for p, _ in broods])
        sizes = np.array([len(d) for _, d in broods], dtype=np.int64)
        mean_n = float((probs * sizes).sum())
        idx = rng.choice(len(broods), size=km, p=probs * sizes / mean_n)
        counts = sizes[idx]
        w = mean_n / counts
        flat = np.empty(int(counts.sum()))
        starts = np.cumsum(counts) - counts
        for b, (_, disp) in enumerate(broods):
            rows = np.flatnonzero(idx == b)
            for j, dj in enumerate(disp):
                flat[starts[rows] + j] = dj
    xs = _explicit_x(zrep, rz, counts, flat, R)
    with np.errstate(divide="ignore"):
        lnx = np.log(xs)
    return w * xs, lnx


def run_criterion_series(law: OffspringLaw, horizon: int, n_paths: int,
                         y_vals, rng: np.random.Generator,
                         R: RenewalFunction | None = None,
                         m_draws: int = 64,
                         step: StepLaw | None = None) -> CriterionSeries:
    """Estimate both diagnostic series along conditioned-walk paths.

    For each path and each n <= horizon, m_draws fresh importance-
    weighted copies of X at zeta_n feed both the capped summand and every
    tail level in y_vals.  Plain X draws would need a brood of e^{zeta_n}
    children to register a tail event, so counts are drawn size-biased
    with exact weights; classification is per path with a majority vote
    (see CriterionSeries).
    """
    if horizon < 2 or n_paths < 1 or m_draws < 1:
        raise CriterionError("horizon >= 2, n_paths >= 1, m_draws >= 1")
    y_vals = np.asarray(y_vals, dtype=float)
    if y_vals.size == 0 or np.any(y_vals < 1.0):
        raise CriterionError("tail levels must satisfy y >= 1")
    ln_y = np.log(y_vals)
    if step is None:
        step = derive_step_law(law)
    if R is None:
        R = renewal_handle(step, rng)
    n_vals = np.arange(1, horizon + 1)
    pa = np.zeros((n_paths, horizon))
    pa_se = np.zeros((n_paths, horizon))
    pb = np.zeros((n_paths, horizon, y_vals.size))
    pb_se = np.zeros((n_paths, horizon, y_vals.size))
    # n-chunks keep the flat brood arrays bounded for heavy count laws
    per = _CHUNK // 8 if law.family == "heavy_count" else _CHUNK
    n_chunk = max(1, per // m_draws)
    for ip in range(n_paths):
        zeta = sample_conditioned(step, horizon, rng).zeta[1:]
        ln_wn = np.log(np.asarray(R(zeta), dtype=float)) - zeta
        for lo in range(0, horizon, n_chunk):
            hi = min(lo + n_chunk, horizon)
            k = hi - lo
            wx, lnx = _weighted_x_draws(law, zeta[lo:hi], m_draws, R, rng)
            ln_wnx = np.repeat(ln_wn[lo:hi], m_draws) + lnx
            a = (wx * np.exp(np.minimum(ln_wnx, 0.0))).reshape(k, m_draws)
            pa[ip, lo:hi] = a.mean(axis=1)
            pa_se[ip, lo:hi] = a.std(axis=1) / math.sqrt(m_draws)
            for j in range(y_vals.size):
                b = (wx * (ln_wnx >= ln_y[j])).reshape(k, m_draws)
                pb[ip, lo:hi, j] = b.mean(axis=1)
                pb_se[ip, lo:hi, j] = b.std(axis=1) / math.sqrt(m_draws)
    return CriterionSeries(n_vals, y_vals, pa, pa_se, pb, pb_se, m_draws)


# ---------------------------------------------------------------------------
# tail functionals

@dataclass
class TailTables:
    """Suffix-moment tables F1(z) = E[Y; log Y >= z] and
    F3(z) = E[Z; log Z >= z + log y] / R(z) on a common z grid.

    F1 is bounded by E[Y] = 1 and both curves are non-increasing (the
    same sample feeds every z).  f1_table/f3_table wrap the curves as
    MonotoneTable handles for the series and integral diagnostics.
    """

    z_grid: np.ndarray
    f1: np.ndarray
    f1_se: np.ndarray
    f3: np.ndarray
    f3_se: np.ndarray
    y_level: float
    draws: int

    def __post_init__(self):
        if np.any(np.diff(self.f1) > 1e-12) or np.any(np.diff(self.f3) > 1e-12):
            raise CriterionError("tail functionals must be non-increasing")
        if np.any(self.f1 > 1.0 + 1e-6):
            raise CriterionError("F1 exceeds its bound E[Y] = 1")

    def f1_table(self) -> MonotoneTable:
        return MonotoneTable(self.z_grid, np.minimum.accumulate(self.f1))

    def f3_table(self) -> MonotoneTable:
        return MonotoneTable(self.z_grid, np.minimum.accumulate(self.f3))


def eval_tail_functionals(law: OffspringLaw, z_grid, R: RenewalFunction,
                          draws: int, rng: np.random.Generator,
                          y_level: float = 1.0) -> TailTables:
    if y_level < 1.0:
        raise CriterionError("tail level must satisfy y >= 1")
    z_grid = np.asarray(z_grid, dtype=float)
    if z_grid[0] != 0.0 or np.any(np.diff(z_grid) <= 0):
        raise CriterionError("z grid must be increasing and start at 0")
    log_y = math.log(y_level)
    ys, zs = [], []
    done = 0
    while done < draws:
        n = min(_CHUNK, draws - done)
        counts, flat = sample_offspring_batch(law, n, rng)
        y, z = eval_yz_batch(counts, flat)
        ys.append(y)
        zs.append(z)
        done += n
    y = np.concatenate(ys)
    z = np.concatenate(zs)
    f1, f1_se = _suffix_mean(y, z_grid)
    f3_num, f3_num_se = _suffix_mean(z, z_grid + log_y)
    r = np.asarray(R(z_grid), dtype=float)
    return TailTables(z_grid, f1, f1_se, f3_num / r, f3_num_se / r,
                      y_level, draws)


def _suffix_mean(vals: np.ndarray, thresholds: np.ndarray):
    """mean(v * 1{log v >= t}) and its se, per threshold, via sorted
    suffix sums."""
    n = vals.size
    with np.errstate(divide="ignore"):
        lv = np.where(vals > 0, np.log(np.maximum(vals, 1e-300)), -np.inf)
    order = np.argsort(lv)
    v_sorted = vals[order]
    lv_sorted = lv[order]
    cs = np.concatenate(([0.0], np.cumsum(v_sorted)))
    cs2 = np.concatenate(([0.0], np.cumsum(v_sorted ** 2)))
    idx = np.searchsorted(lv_sorted, thresholds, side="left")
    s1 = cs[-1] - cs[idx]
    s2 = cs2[-1] - cs2[idx]
    mean = s1 / n
    se = np.sqrt(np.maximum(s2 / n - mean ** 2, 0.0) / n)
    return mean, se


# ---------------------------------------------------------------------------
# side-by-side experiment

@dataclass
class DichotomyReport:
    """Paired evidence for two laws; no verdict is issued.

    For each law the report holds the capped moment curves and the two
    diagnostic series.  A law with a non-trivial limit shows flattening
    moment curves and a plateauing capped series; a trivial limit shows
    a growing moment curve and growing tail series.
    """

    names: tuple
    moments: tuple
    series: tuple
    quantile_depths: np.ndarray | None = None
    quantile_levels: tuple = (0.1, 0.5, 0.9)
    quantiles: tuple | None = None     # per law: (depths, levels) array

    def rows(self):
        out = []
        for name, s in zip(self.names, self.series):
            out.extend(s.rows(name))
        return out

    def summary(self) -> str:
        lines = []
        for name, mom, ser in zip(self.names, self.moments, self.series):
            tails = ", ".join(
                f"y={y:g}: {lab} ({g:.3g})" for y, lab, g in
                zip(ser.y_vals, ser.label_tail, ser.growth_tail))
            lines.append(
                f"{name}: moment slopes y={mom.slope_y:.3g} z={mom.slope_z:.3g}; "
                f"capped series {ser.label_capped} ({ser.growth_capped:.3g}); "
                f"tail series {tails}; verdict {ser.verdict}")
        return "\n".join(lines)


def dichotomy_experiment(law_a: OffspringLaw, law_b: OffspringLaw,
                         rng: np.random.Generator,
                         names: tuple = ("law_a", "law_b"),
                         horizon: int = 10_000, n_paths: int = 5,
                         y_vals=(1.0, 2.0, 8.0),
                         moment_draws: int = 200_000,
                         m_draws: int = 64,
                         quantile_depth: int = 8,
                         quantile_replicas: int = 500) -> DichotomyReport:
    """Moment, series, and martingale-quantile diagnostics on a law pair.

    No verdict is forced on the caller; each law gets its own moment
    curves, series classification, and quantile trajectories of the
    truncated martingale over a shallow forest.
    """
    moments, series, quants = [], [], []
    levels = (0.1, 0.5, 0.9)
    for law in (law_a, law_b):
        moments.append(estimate_moments(law, moment_draws, rng))
        R = renewal_handle(derive_step_law(law), rng)
        series.append(run_criterion_series(law, horizon, n_paths, y_vals,
                                           rng, R=R, m_draws=m_draws))
        batch = simulate_martingales(law, quantile_depth, quantile_replicas,
                                     rng, a=0.0, beta=0.0, R=R)
        quants.append(np.nanquantile(batch.D_beta, levels, axis=0).T)
    return DichotomyReport(tuple(names), tuple(moments), tuple(series),
                           np.arange(quantile_depth + 1), levels,
                           tuple(quants))
