"""The associated one-dimensional walk and its renewal structure.

For a boundary-case offspring law the size-biased one-step measure

    mu(dx) = E[ sum_u 1{V(u) in dx} e^{-V(u)} ]

is a centered probability law; the walk (S_n) with these steps drives the
many-to-one identity

    E[ sum_{|u|=n} g(V(u_1), ..., V(u_n)) ] = E[ e^{S_n} g(S_1, ..., S_n) ].

This module derives step laws, estimates the renewal measures of the walk's
ladder structure (U for strict ascending heights, U-minus for weak descending
heights), and exposes the renewal function

    R(x) = U-minus([0, x)),   R(0) := 1,

which is harmonic for the walk killed on entering (-inf, 0].

Renewal masses are estimated from independent excursions: U-minus cell
masses are visit counts of -S_j over j < tau (tau = first entry to (0, inf))
and U cell masses are visit counts of S_n over n < tau_minus (first entry to
(-inf, 0]).  Both passage times are a.s. finite but have infinite mean, so
each excursion is capped at a large step count; an excursion that is still
running at the cap is censored.  The resulting downward bias per cell is of
order P(tau > cap), a few 1e-4 at the default cap, well below the Monte
Carlo standard error at any feasible sample size.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from brw.laws import (LATTICE_H, OffspringLaw, eval_laplace,
                      sample_offspring_batch)

__all__ = [
    "WalkError",
    "EnvelopeMissing",
    "RIncompatible",
    "StepLaw",
    "LadderDecomposition",
    "RenewalTable",
    "RenewalFunction",
    "derive_step_law",
    "default_grid",
    "estimate_renewal",
    "exact_lattice_renewal",
    "exact_lattice_R",
    "check_harmonic",
    "estimate_c0",
    "decompose_ladders",
    "verify_many_to_one",
    "exact_tree_expectation",
]


class WalkError(Exception):
    pass


class EnvelopeMissing(WalkError):
    """Resampled step-law derivation needs a finite bound on Y."""


class RIncompatible(WalkError):
    """Renewal function queried outside its table without tail extension."""


# ---------------------------------------------------------------------------
# step laws

@dataclass(frozen=True)
class StepLaw:
    """Law of one increment of the associated walk.

    kind: gaussian (params = (variance,)), lattice (symmetric +-span steps),
    discrete (finite atoms), resampled (weighted empirical pool).
    mode is "analytic" except for resampled pools.
    """

    kind: str
    params: tuple = ()
    values: np.ndarray | None = field(default=None, repr=False)
    probs: np.ndarray | None = field(default=None, repr=False)

    @property
    def mode(self) -> str:
        return "resampled" if self.kind == "resampled" else "analytic"

    @property
    def span(self) -> float | None:
        """Lattice span, or None for non-lattice laws."""
        return self.params[0] if self.kind == "lattice" else None

    @property
    def mean(self) -> float:
        if self.kind == "gaussian":
            return 0.0
        if self.kind == "lattice":
            return 0.0
        return float(np.dot(self.probs, self.values))

    @property
    def var(self) -> float:
        if self.kind == "gaussian":
            return self.params[0]
        if self.kind == "lattice":
            return self.params[0] ** 2
        m = self.mean
        return float(np.dot(self.probs, (self.values - m) ** 2))

    def sample(self, rng: np.random.Generator, size) -> np.ndarray:
        return self.sample_tilted(0.0, rng, size)

    def sample_tilted(self, t: float, rng: np.random.Generator, size) -> np.ndarray:
        """Draw from the tilted law exp(t x - kappa(t)) mu(dx)."""
        if self.kind == "gaussian":
            (v,) = self.params
            return rng.normal(t * v, math.sqrt(v), size=size)
        if self.kind == "lattice":
            (h,) = self.params
            p_up = 1.0 / (1.0 + math.exp(-2.0 * t * h))
            return np.where(rng.random(size) < p_up, h, -h)
        w = self.probs * np.exp(t * self.values)
        w /= w.sum()
        return rng.choice(self.values, size=size, p=w)

    def log_mgf(self, t: float) -> float:
        """kappa(t) = log E[exp(t S_1)]."""
        if self.kind == "gaussian":
            return 0.5 * t * t * self.params[0]
        if self.kind == "lattice":
            return math.log(math.cosh(t * self.params[0]))
        return math.log(float(np.dot(self.probs, np.exp(t * self.values))))


def derive_step_law(law: OffspringLaw, rng: np.random.Generator | None = None,
                    mode: str = "analytic", pool_size: int = 200_000) -> StepLaw:
    """Size-biased (e^-V weighted) one-step law of a boundary-case law.

    Analytic mode uses closed forms per family.  Resampled mode draws broods,
    accepts each with probability Y / Y_max and then picks a child with
    probability e^-V / Y; it needs a finite bound on Y, which only laws with
    finitely many broods provide.
    """
    _, psi, psi_prime = eval_laplace(law, 1.0)
    if abs(psi) > 1e-9 or abs(psi_prime) > 1e-9:
        raise WalkError("offspring law must be in the boundary case")
    if mode == "analytic":
        if law.family in ("binary_gaussian", "heavy_count"):
            s2 = law.params[-1]
            return StepLaw("gaussian", (law.a_star ** 2 * s2,))
        if law.family == "lattice_binary":
            return StepLaw("lattice", (LATTICE_H * law.a_star,))
        if law.family == "user_table":
            vals, wts = [], []
            for p, disp in law.atoms:
                for d in disp:
                    x = law.a_star * d + law.b_star
                    vals.append(x)
                    wts.append(p * math.exp(-x))
            values = np.asarray(vals)
            probs = np.asarray(wts)
            # aggregate duplicate displacements
            uniq, inv = np.unique(values, return_inverse=True)
            probs = np.bincount(inv, weights=probs)
            probs /= probs.sum()  # sums to Phi(1)=1 up to roundoff
            if uniq.size == 1 and uniq[0] == 0.0:
                return StepLaw("discrete", (), values=uniq, probs=probs)
            if uniq.size == 2 and abs(uniq[0] + uniq[1]) < 1e-12 \
                    and abs(probs[0] - 0.5) < 1e-12:
                return StepLaw("lattice", (float(uniq[1]),))
            return StepLaw("discrete", (), values=uniq, probs=probs)
        raise WalkError(f"no analytic step law for family {law.family!r}")
    if mode == "resampled":
        if law.family != "user_table":
            raise EnvelopeMissing(
                f"family {law.family!r} has no finite bound on Y")
        y_env = max(sum(math.exp(-(law.a_star * d + law.b_star)) for d in disp)
                    for _, disp in law.atoms)
        if rng is None:
            raise WalkError("resampled mode requires an rng")
        pool = np.empty(pool_size)
        filled = 0
        while filled < pool_size:
            n = max(2 * (pool_size - filled), 1000)
            counts, flat = sample_offspring_batch(law, n, rng)
            e = np.exp(-flat)
            ends = np.cumsum(counts)
            starts = ends - counts
            cume = np.cumsum(e)
            y = cume[ends - 1] - np.where(starts > 0, cume[starts - 1], 0.0)
            acc = np.flatnonzero(rng.random(n) * y_env < y)
            # inverse-cdf child pick inside each accepted brood
            base = np.where(starts[acc] > 0, cume[starts[acc] - 1], 0.0)
            target = base + rng.random(acc.size) * y[acc]
            idx = np.searchsorted(cume, target, side="left")
            idx = np.minimum(np.maximum(idx, starts[acc]), ends[acc] - 1)
            take = min(acc.size, pool_size - filled)
            pool[filled:filled + take] = flat[idx[:take]]
            filled += take
        return StepLaw("resampled", (), values=pool,
                       probs=np.full(pool_size, 1.0 / pool_size))
    raise WalkError(f"unknown mode {mode!r}")


# ---------------------------------------------------------------------------
# renewal tables

@dataclass
class RenewalTable:
    """Cumulative renewal masses on a uniform grid.

    grid has C+1 boundaries 0 = x_0 < ... < x_C; u_cum[i] = U([0, x_i)),
    uminus_cum[i] = U-minus([0, x_i)), r_vals[i] = R(x_i) with R(0) = 1
    pinned.  counts_* hold raw record counts per cell; exact tables carry
    zero standard errors.
    """

    grid: np.ndarray
    u_cum: np.ndarray
    uminus_cum: np.ndarray
    r_vals: np.ndarray
    se_u: np.ndarray
    se_uminus: np.ndarray
    se_r: np.ndarray
    counts_plus: np.ndarray
    counts_minus: np.ndarray
    n_excursions: int
    sigma: float
    span: float | None = None
    partial: bool = False
    exact: bool = False

    def __post_init__(self):
        if np.any(np.diff(self.grid) <= 0):
            raise WalkError("grid must be strictly increasing")
        for name in ("u_cum", "uminus_cum", "r_vals"):
            if np.any(np.diff(getattr(self, name)) < -1e-9):
                raise WalkError(f"{name} must be nondecreasing")

    def envelope(self) -> tuple[float, float]:
        """(c1, c2) with c1 (1+x) <= R(x) <= c2 (1+x) over the table."""
        ratio = self.r_vals / (1.0 + self.grid)
        return float(ratio.min()), float(ratio.max())

    def to_csv(self, path) -> None:
        rows = np.column_stack([
            self.grid, self.u_cum, self.uminus_cum, self.r_vals, self.se_r,
            np.concatenate([[0], self.counts_minus]),
        ])
        header = "x,U,Uminus,R,se_R,n_samples"
        np.savetxt(path, rows, delimiter=",", header=header, comments="",
                   fmt="%.17g")

    @classmethod
    def from_csv(cls, path, sigma: float, span: float | None = None,
                 n_excursions: int = 0) -> "RenewalTable":
        rows = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        grid = rows[:, 0]
        z = np.zeros(grid.size)
        counts = rows[1:, 5]
        return cls(grid, rows[:, 1], rows[:, 2], rows[:, 3], z,
                   z.copy(), rows[:, 4], counts.copy(), counts,
                   n_excursions, sigma, span)


def default_grid(step: StepLaw, x_max: float | None = None) -> np.ndarray:
    """Uniform grid: cells of span/4 on lattices (aligned), sigma/10
    otherwise, out to 100 step standard deviations by default."""
    sigma = math.sqrt(step.var)
    if x_max is None:
        x_max = 100.0 * sigma
    if step.span is not None:
        delta = step.span / 4.0
    else:
        delta = sigma / 10.0
    n_cells = max(int(math.ceil(x_max / delta)), 4)
    return delta * np.arange(n_cells + 1)


def _visit_pass(step: StepLaw, n_exc: int, delta: float, n_cells: int,
                rng: np.random.Generator, descending: bool,
                n_groups: int, budget: int, exc_cap: int):
    """Visit counts of one excursion family.

    Descending side: D_j = -S_j, excursion alive while D_j >= 0 (i.e. until
    tau, the first entry of S to (0, inf)); every pre-tau position with D in
    [0, x_max) counts.  Ascending side: D_j = S_j, alive while D_j > 0 for
    j >= 1 (until tau_minus).  Returns per-group cell sums, raw counts,
    steps used, number of cap-censored excursions, and an overrun flag.
    """
    x_max = delta * n_cells
    group_sums = np.zeros((n_groups, n_cells))
    counts = np.zeros(n_cells, dtype=np.int64)
    # the j = 0 visit: D_0 = 0 lands in cell 0 for every excursion
    base = n_exc // n_groups
    extra = n_exc - base * n_groups
    group_sums[:, 0] += base
    group_sums[:extra, 0] += 1
    counts[0] += n_exc

    lattice = step.span is not None
    if lattice:
        cells_per_step = round(step.span / delta)
        if abs(cells_per_step * delta - step.span) > 1e-12 * step.span:
            raise WalkError("grid not aligned to the lattice span")
        u_lim = -(-n_cells // cells_per_step)

    macro = 50_000
    steps_used = 0
    censored = 0
    overrun = False
    start = 0
    while start < n_exc and not overrun:
        nb = min(macro, n_exc - start)
        gid = ((np.arange(start, start + nb)) % n_groups).astype(np.int64)
        if lattice:
            d = np.zeros(nb, dtype=np.int64)
        else:
            d = np.zeros(nb)
        j = np.zeros(nb, dtype=np.int64)
        while d.size:
            a = d.size
            chunk = int(min(max(2_000_000 // a, 128), 1 << 20))
            if steps_used + a * chunk > budget:
                overrun = True
                break
            steps_used += a * chunk
            if lattice:
                y = np.where(rng.random((a, chunk)) < 0.5, 1, -1)
                pref = d[:, None] + np.cumsum(y, axis=1)
            else:
                y = step.sample(rng, (a, chunk))
                if descending:
                    y = -y
                pref = d[:, None] + np.cumsum(y, axis=1)
            dead = (pref < 0) if descending else (pref <= 0)
            has_dead = dead.any(axis=1)
            stop = np.where(has_dead, dead.argmax(axis=1), chunk)
            live = np.arange(chunk) < stop[:, None]
            if lattice:
                inside = live & (pref < u_lim)
            else:
                inside = live & (pref < x_max) & (pref >= 0)
            rows, cols = np.nonzero(inside)
            if rows.size:
                dv = pref[rows, cols]
                if lattice:
                    cell = dv * cells_per_step
                else:
                    cell = (dv / delta).astype(np.int64)
                key = gid[rows] * n_cells + cell
                group_sums += np.bincount(
                    key, minlength=n_groups * n_cells
                ).reshape(n_groups, n_cells)
                counts += np.bincount(cell, minlength=n_cells)
            alive = ~has_dead
            j = j + chunk
            hit_cap = alive & (j >= exc_cap)
            censored += int(hit_cap.sum())
            alive &= ~hit_cap
            if not alive.all():
                d = pref[alive, -1]
                gid, j = gid[alive], j[alive]
            else:
                d = pref[:, -1]
        start += nb
    return group_sums, counts, steps_used, censored, overrun


def estimate_renewal(step: StepLaw, n_excursions: int, grid: np.ndarray,
                     rng: np.random.Generator, n_groups: int = 100,
                     max_total_steps: int = 10_000_000,
                     max_excursion_steps: int = 1 << 22) -> RenewalTable:
    """Estimate U, U-minus, and R on the grid from n_excursions excursions.

    Per-cell standard errors come from splitting excursions into n_groups
    independent groups.  If the total step budget runs out the table is
    returned with the partial flag set; a per-excursion cap censors the few
    excursions whose first passage exceeds it (downward bias of order
    P(tau > cap) per cell, negligible against the standard errors).
    """
    if abs(step.mean) > 1e-9:
        raise WalkError("step law must be centered")
    grid = np.asarray(grid, dtype=float)
    delta = grid[1] - grid[0]
    n_cells = grid.size - 1
    gm, cm, used_m, cens_m, over_m = _visit_pass(
        step, n_excursions, delta, n_cells, rng, True, n_groups,
        max_total_steps, max_excursion_steps)
    gp, cp, used_p, cens_p, over_p = _visit_pass(
        step, n_excursions, delta, n_cells, rng, False, n_groups,
        max_total_steps - used_m, max_excursion_steps)

    per_group = np.bincount(np.arange(n_excursions) % n_groups,
                            minlength=n_groups).astype(float)

    def reduce(groups):
        cum = np.cumsum(groups, axis=1)  # per-group cumulative cell mass
        est = np.concatenate([[0.0], cum.sum(axis=0) / n_excursions])
        rates = cum / per_group[:, None]
        se = rates.std(axis=0, ddof=1) / math.sqrt(n_groups)
        return est, np.concatenate([[0.0], se])

    uminus_cum, se_uminus = reduce(gm)
    u_cum, se_u = reduce(gp)
    r_vals = uminus_cum.copy()
    r_vals[0] = 1.0  # R(0) := 1 pin, applied only at exactly x = 0
    return RenewalTable(grid, u_cum, uminus_cum, r_vals, se_u, se_uminus,
                        se_uminus.copy(), cp, cm, n_excursions,
                        math.sqrt(step.var), step.span,
                        partial=over_m or over_p)


def exact_lattice_R(x, span: float = LATTICE_H):
    """Closed-form R for the symmetric +-span lattice walk.

    The weak descending ladder height is 0 or span with probability 1/2
    each, so U-minus puts mass 2 on every lattice level; R(x) =
    U-minus([0, x)) = 2 ceil(x / span) for x > 0, and R(0) := 1.
    """
    x = np.asarray(x, dtype=float)
    if np.any(x < 0):
        raise RIncompatible("R is defined on [0, inf)")
    k = np.ceil(x / span - 1e-9)
    out = 2.0 * np.maximum(k, 0.0)
    out = np.where(x == 0.0, 1.0, out)
    return out if out.ndim else float(out)


def exact_lattice_renewal(span: float = LATTICE_H,
                          x_max: float | None = None) -> RenewalTable:
    """Exact renewal table of the symmetric +-span walk (mass 2 per level
    for U-minus, mass 1 per level for U)."""
    if x_max is None:
        x_max = 100.0 * span
    delta = span / 4.0
    n_cells = int(math.ceil(x_max / delta))
    grid = delta * np.arange(n_cells + 1)
    minus = np.zeros(n_cells)
    plus = np.zeros(n_cells)
    minus[::4] = 2.0
    plus[::4] = 1.0
    uminus_cum = np.concatenate([[0.0], np.cumsum(minus)])
    u_cum = np.concatenate([[0.0], np.cumsum(plus)])
    r_vals = uminus_cum.copy()
    r_vals[0] = 1.0
    z = np.zeros(grid.size)
    return RenewalTable(grid, u_cum, uminus_cum, r_vals, z, z.copy(),
                        z.copy(), plus.astype(np.int64),
                        minus.astype(np.int64), 0, span, span, exact=True)


@dataclass(frozen=True)
class RenewalFunction:
    """Callable handle for R(x).

    kind "lattice_exact" evaluates the closed form; kind "table" linearly
    interpolates a RenewalTable.  Past the table edge the handle raises
    RIncompatible unless built with extend_tail=True, in which case it
    continues with the fitted linear slope c0 (opt-in because the tail is
    an extrapolation, not data).
    """

    kind: str
    span: float | None = None
    table: RenewalTable | None = None
    extend_tail: bool = False
    c0: float | None = None

    @classmethod
    def from_lattice(cls, span: float = LATTICE_H) -> "RenewalFunction":
        return cls("lattice_exact", span=span)

    @classmethod
    def from_table(cls, table: RenewalTable,
                   extend_tail: bool = False) -> "RenewalFunction":
        c0 = estimate_c0(table)[0] if extend_tail else None
        return cls("table", span=table.span, table=table,
                   extend_tail=extend_tail, c0=c0)

    @property
    def x_max(self) -> float:
        return math.inf if self.kind == "lattice_exact" else self.table.grid[-1]

    def __call__(self, x):
        if self.kind == "lattice_exact":
            return exact_lattice_R(x, self.span)
        x = np.asarray(x, dtype=float)
        scalar = x.ndim == 0
        x = np.atleast_1d(x)
        if np.any(x < 0):
            raise RIncompatible("R is defined on [0, inf)")
        grid = self.table.grid
        over = x > grid[-1]
        if np.any(over) and not self.extend_tail:
            raise RIncompatible(
                f"x = {x[over].max():.6g} beyond table edge {grid[-1]:.6g}")
        out = np.interp(np.minimum(x, grid[-1]), grid, self.table.r_vals)
        if np.any(over):
            out[over] += self.c0 * (x[over] - grid[-1])
        out[x == 0.0] = 1.0
        return float(out[0]) if scalar else out


def estimate_c0(table: RenewalTable) -> tuple[float, float]:
    """(slope of R over the top half of the grid, drift of R(x)/x over the
    last decade).  Fact: R(x)/x converges to a constant c0."""
    if table.grid[-1] < 50.0 * table.sigma:
        raise WalkError("table must extend to at least 50 step sigmas")
    half = table.grid.size // 2
    x = table.grid[half:]
    r = table.r_vals[half:]
    slope = float(np.polyfit(x, r, 1)[0])
    x_hi = table.grid[-1]
    r_hi = table.r_vals[-1] / x_hi
    i_lo = int(np.searchsorted(table.grid, x_hi / 10.0))
    r_lo = table.r_vals[i_lo] / table.grid[i_lo]
    drift = abs(r_hi - r_lo) / r_hi
    return slope, drift


def check_harmonic(step: StepLaw, R: RenewalFunction, x_grid,
                   replicas: int, rng: np.random.Generator):
    """Monte Carlo check of E[R(x + S_1); x + S_1 > 0] = R(x).

    Returns (max relative deviation, rows); rows hold
    (x, estimate, se, R(x)) per grid point.
    """
    rows = []
    worst = 0.0
    for x in np.atleast_1d(np.asarray(x_grid, dtype=float)):
        s = step.sample(rng, replicas)
        arg = x + s
        pos = arg > 0
        vals = np.zeros(replicas)
        vals[pos] = R(arg[pos])
        est = float(vals.mean())
        se = float(vals.std(ddof=1) / math.sqrt(replicas))
        rx = float(R(x))
        rows.append((float(x), est, se, rx))
        worst = max(worst, abs(est - rx) / rx)
    return worst, np.array(rows)


# ---------------------------------------------------------------------------
# ladder structure diagnostics

@dataclass(frozen=True)
class LadderDecomposition:
    """Strict ascending ladder epochs/heights of one long walk, pooled weak
    descending heights, and per-replica first passage times."""

    t_up: np.ndarray        # strict ascending epochs T_k
    h_up: np.ndarray        # strict ascending heights H_k
    h_down: np.ndarray      # weak descending ladder heights (pooled)
    tau: np.ndarray         # first entry to (0, inf); -1 if censored
    tau_minus: np.ndarray   # first entry to (-inf, 0]; -1 if censored

    def __post_init__(self):
        if np.any(np.diff(self.t_up) <= 0) or np.any(np.diff(self.h_up) <= 0):
            raise WalkError("ascending ladder epochs/heights must increase")

    def mean_h1(self) -> float:
        """Empirical E[H_1] = E[S_tau] from ladder increments."""
        return float(np.diff(np.concatenate([[0.0], self.h_up])).mean())

    def slln_drift(self) -> float:
        """Relative change of H_k / k over the last half of the ladder."""
        k = np.arange(1, self.h_up.size + 1)
        rates = self.h_up / k
        half = rates.size // 2
        return abs(rates[-1] - rates[half]) / rates[-1]


def decompose_ladders(step: StepLaw, n_walks: int, horizon: int,
                      rng: np.random.Generator) -> LadderDecomposition:
    """Ladder data from one long walk plus first passage times from
    n_walks independent replicas (censored at the horizon with -1)."""
    s = np.cumsum(step.sample(rng, horizon))
    runmax = np.maximum.accumulate(s)
    prevmax = np.concatenate([[0.0], runmax[:-1]])
    up = np.flatnonzero(s > prevmax)
    t_up = up + 1
    h_up = s[up]
    runmin = np.minimum.accumulate(s)
    prevmin = np.concatenate([[0.0], runmin[:-1]])
    down = np.flatnonzero(s <= prevmin)
    h_down = np.diff(np.concatenate([[0.0], -s[down]]))

    steps = np.cumsum(step.sample(rng, (n_walks, horizon)), axis=1)
    pos = steps > 0
    tau = np.where(pos.any(axis=1), pos.argmax(axis=1) + 1, -1)
    neg = steps <= 0
    tau_minus = np.where(neg.any(axis=1), neg.argmax(axis=1) + 1, -1)
    return LadderDecomposition(t_up, h_up, h_down, tau, tau_minus)


# ---------------------------------------------------------------------------
# many-to-one

def verify_many_to_one(law: OffspringLaw, g, n: int, replicas: int,
                       rng: np.random.Generator,
                       step: StepLaw | None = None):
    """Both sides of the many-to-one identity with standard errors.

    g maps a (paths, n) array of genealogical positions to a bounded
    nonnegative vector.  Returns (lhs, lhs_se, rhs, rhs_se).
    """
    if n < 0 or n > 12:
        raise WalkError("depth must be in [0, 12] (population growth)")
    if n == 0:
        return 1.0, 0.0, 1.0, 0.0
    if step is None:
        step = derive_step_law(law)

    roots = np.arange(replicas)
    paths = np.zeros((replicas, 0))
    owner = roots.copy()
    for _ in range(n):
        counts, flat = sample_offspring_batch(law, owner.size, rng)
        keep = np.repeat(np.arange(owner.size), counts)
        paths = np.concatenate(
            [paths[keep], (paths[keep, -1:] if paths.shape[1] else 0.0)
             + flat[:, None]], axis=1) if paths.shape[1] else flat[:, None]
        owner = owner[keep]
    vals = np.asarray(g(paths), dtype=float)
    per_root = np.bincount(owner, weights=vals, minlength=replicas)
    lhs = float(per_root.mean())
    lhs_se = float(per_root.std(ddof=1) / math.sqrt(replicas))

    s = np.cumsum(step.sample(rng, (replicas, n)), axis=1)
    w = np.exp(s[:, -1]) * np.asarray(g(s), dtype=float)
    rhs = float(w.mean())
    rhs_se = float(w.std(ddof=1) / math.sqrt(replicas))
    return lhs, lhs_se, rhs, rhs_se


def exact_tree_expectation(law: OffspringLaw, g, n: int) -> float:
    """Exact E[sum_{|u|=n} g(path)] for finite-support laws by enumerating
    displacement sequences with their expected multiplicities."""
    if law.family == "lattice_binary":
        from brw.laws import LATTICE_Q
        atoms = [(LATTICE_Q, (-LATTICE_H,)), (1 - LATTICE_Q, (LATTICE_H, LATTICE_H))]
    elif law.family == "user_table":
        atoms = law.atoms
    else:
        raise WalkError("exact enumeration needs a finite-support law")
    mult: dict[float, float] = {}
    for p, disp in atoms:
        for d in disp:
            x = law.a_star * d + law.b_star
            mult[x] = mult.get(x, 0.0) + p
    items = sorted(mult.items())
    total = 0.0
    stack = [((), 1.0)]
    for _ in range(n):
        nxt = []
        for path, w in stack:
            for d, m in items:
                nxt.append((path + (path[-1] + d if path else d,), w * m))
        stack = nxt
    for path, w in stack:
        total += w * float(g(np.array([path]))[0])
    return total
