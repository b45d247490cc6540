import math

import numpy as np
import pytest

from brw.laws import (
    LATTICE_H,
    LATTICE_Q,
    binary_gaussian,
    heavy_count,
    lattice_binary,
    normalize_to_boundary,
    single_child_law,
)
from brw.criterion import (
    CriterionError,
    MomentReport,
    dichotomy_experiment,
    estimate_moments,
    eval_tail_functionals,
    eval_X,
    renewal_handle,
    run_criterion_series,
    _weighted_x_draws,
)
from brw.streams import substream
from brw.walk import (LATTICE_H as H, RenewalFunction, RIncompatible,
                      default_grid, derive_step_law, estimate_renewal)

LAT_STEP = derive_step_law(lattice_binary())
R_LAT = RenewalFunction.from_lattice(H)


# ---------------------------------------------------------------------------
# capped moments

def test_moment_report_validation():
    caps = np.array([1.0, 10.0])
    z = np.zeros(2)
    with pytest.raises(CriterionError):
        MomentReport(np.array([10.0, 1.0]), z, z, z, z, 10)
    with pytest.raises(CriterionError):
        MomentReport(caps, np.array([1.0, 0.5]), z, z, z, 10)
    with pytest.raises(CriterionError):
        MomentReport(caps, np.zeros(3), np.zeros(3), z, z, 10)
    rep = MomentReport(caps, np.array([0.2, 0.5]), z, z, z, 10)
    assert rep.slope_y >= 0 and rep.slope_z == 0.0


def test_moments_one_child_all_zero():
    rng = substream(23, "crit-mom0", 0)
    rep = estimate_moments(single_child_law(0.0), 2_000, rng)
    assert np.all(rep.m_y == 0.0) and np.all(rep.m_z == 0.0)


def test_moments_lattice_flat_at_analytic_cap():
    # Y is two-valued: e^h = 2+sqrt(2) (one child) or 2e^{-h} < 1 (two
    # children), so Y(log+ Y)^2 is bounded by (2+sqrt(2)) h^2 and the
    # curve freezes at q (2+sqrt(2)) h^2 = h^2 / 2 beyond that cap;
    # Z log+ Z vanishes since both Z values are below 1
    rng = substream(23, "crit-momlat", 0)
    gmax = (2.0 + math.sqrt(2.0)) * H ** 2
    caps = np.array([0.5 * gmax, gmax, 2.0 * gmax, 10.0 * gmax])
    rep = estimate_moments(lattice_binary(), 100_000, rng, caps=caps)
    exact = LATTICE_Q * gmax
    assert abs(rep.m_y[1] - exact) < 4 * rep.m_y_se[1] + 1e-12
    assert rep.m_y[1] == rep.m_y[2] == rep.m_y[3]
    assert np.all(rep.m_z == 0.0)
    assert rep.slope_y == 0.0


def test_moments_heavy_slope_dichotomy():
    rng = substream(23, "crit-momheavy", 0)
    rep2 = estimate_moments(normalize_to_boundary(heavy_count(2.0)),
                            400_000, rng)
    rep4 = estimate_moments(normalize_to_boundary(heavy_count(4.0)),
                            400_000, rng)
    assert rep2.slope_y > 0.1
    assert rep4.slope_y < 0.05
    assert np.all(np.diff(rep2.m_y) >= 0) and np.all(np.diff(rep2.m_z) >= 0)


def test_moments_rejects_unnormalized_law():
    rng = substream(23, "crit-mombad", 0)
    with pytest.raises(CriterionError):
        estimate_moments(heavy_count(2.0), 100, rng)


# ---------------------------------------------------------------------------
# eval_X

def test_eval_x_one_child_is_one():
    rng = substream(23, "crit-x0", 0)
    x = eval_X(single_child_law(0.0), 1.7 * H, R_LAT, rng, size=50)
    assert np.all(x == 1.0)


def test_eval_x_lattice_values_and_mean():
    # single child at -h lands exactly on 0 and the strict indicator
    # kills it; two children at +h give 2 R(2h) e^{-h} / R(h)
    rng = substream(23, "crit-xlat", 0)
    x = eval_X(lattice_binary(), H, R_LAT, rng, size=100_000)
    hi = 2.0 * 4.0 * math.exp(-H) / 2.0
    assert set(np.round(np.unique(x), 12)) == {0.0, round(hi, 12)}
    se = x.std() / math.sqrt(x.size)
    assert abs(x.mean() - 1.0) < 4 * se


def test_eval_x_validation():
    rng = substream(23, "crit-xbad", 0)
    with pytest.raises(CriterionError):
        eval_X(lattice_binary(), 0.0, R_LAT, rng)
    with pytest.raises(CriterionError):
        eval_X(heavy_count(2.0), 1.0, R_LAT, rng)


def test_eval_x_propagates_r_incompatible():
    # a table handle without the tail extension cannot price children
    # that land past its edge
    rng = substream(23, "crit-xedge", 0)
    law = binary_gaussian()
    step = derive_step_law(law)
    grid = default_grid(step, x_max=6.0 * math.sqrt(step.var))
    table = estimate_renewal(step, 20_000, grid, rng,
                             max_total_steps=2_000_000_000)
    R_hard = RenewalFunction.from_table(table, extend_tail=False)
    with pytest.raises(RIncompatible):
        eval_X(law, R_hard.x_max - 0.1, R_hard, rng, size=2_000)


def test_weighted_x_mean_one_heavy():
    # the count-importance-sampled draws keep E[w X] = 1 (harmonicity)
    rng = substream(23, "crit-isx", 0)
    law = normalize_to_boundary(heavy_count(2.0))
    R = renewal_handle(derive_step_law(law), rng)
    for z in (0.7, 5.0, 60.0):
        wx, lnx = _weighted_x_draws(law, np.full(1500, z), 64, R, rng)
        se = wx.std() / math.sqrt(wx.size)
        assert abs(wx.mean() - 1.0) < 4 * se + 0.01
        assert np.all(wx >= 0.0)


# ---------------------------------------------------------------------------
# criterion series

def test_series_one_child_deterministic():
    # X = 1 identically; the capped summand is exactly the walk weight
    # R(zeta)e^{-zeta} < 1 and the tail summand at y = e never fires
    rng = substream(23, "crit-s0", 0)
    s = run_criterion_series(single_child_law(0.0), 400, 1, [math.e],
                             rng, R=R_LAT, step=LAT_STEP)
    assert np.all(s.se_capped < 1e-15)
    assert np.all(s.summand_tail == 0.0)
    assert s.label_capped == "convergent-series"
    assert s.label_tail == ["convergent-series"]
    assert s.verdict == "satisfying-like"
    assert np.all(np.diff(s.partial_capped) >= 0)
    assert np.all(np.diff(s.partial_tail, axis=0) >= 0)


def test_series_validation():
    rng = substream(23, "crit-sbad", 0)
    with pytest.raises(CriterionError):
        run_criterion_series(lattice_binary(), 1, 1, [1.0], rng, R=R_LAT)
    with pytest.raises(CriterionError):
        run_criterion_series(lattice_binary(), 100, 1, [0.5], rng, R=R_LAT)


def test_series_lattice_plateaus():
    rng = substream(23, "crit-slat", 0)
    s = run_criterion_series(lattice_binary(), 4_000, 2, [1.0, 2.0], rng,
                             R=R_LAT)
    assert s.label_capped == "convergent-series"
    assert s.verdict == "satisfying-like"
    # E[X] = 1 per n: check the pooled weighted draws through summand
    # bounds: X (wX ^ 1) <= X so partial sums stay below n
    assert s.partial_capped[-1] <= s.n_vals[-1]


def test_series_heavy_dichotomy():
    rng = substream(23, "crit-sheavy", 0)
    h2 = normalize_to_boundary(heavy_count(2.0))
    s2 = run_criterion_series(h2, 4_000, 3, [1.0, 2.0, 8.0], rng)
    assert s2.verdict == "violating-like"
    assert all(l == "divergent-series" for l in s2.label_tail)
    h4 = normalize_to_boundary(heavy_count(4.0))
    s4 = run_criterion_series(h4, 4_000, 3, [1.0, 2.0, 8.0], rng)
    assert s4.verdict == "satisfying-like"


def test_series_rows_shape():
    rng = substream(23, "crit-srows", 0)
    s = run_criterion_series(lattice_binary(), 50, 1, [1.0, 2.0], rng,
                             R=R_LAT)
    rows = s.rows("lat")
    assert len(rows) == 3 * 50
    assert rows[0][:3] == ("lat", "capped", 1)
    assert rows[50][1] == "tail-y1"


def test_series_deterministic_with_seed():
    a = run_criterion_series(lattice_binary(), 100, 1, [1.0],
                             substream(40, "crit-det", 0), R=R_LAT)
    b = run_criterion_series(lattice_binary(), 100, 1, [1.0],
                             substream(40, "crit-det", 0), R=R_LAT)
    assert np.array_equal(a.summand_capped, b.summand_capped)
    assert np.array_equal(a.summand_tail, b.summand_tail)


# ---------------------------------------------------------------------------
# tail functionals

def test_tail_functionals_one_child():
    rng = substream(23, "crit-t0", 0)
    z = np.array([0.0, 0.5, 1.0])
    tab = eval_tail_functionals(single_child_law(0.0), z, R_LAT, 2_000, rng)
    assert np.array_equal(tab.f1, [1.0, 0.0, 0.0])
    assert np.all(tab.f3 == 0.0)


def test_tail_functionals_lattice_step():
    # Y = 2+sqrt(2) w.p. q or 2e^{-h} < 1, so F1 = q(2+sqrt(2)) = 1/2
    # up to z = h and 0 after; both Z values are below 1 so F3 = 0
    rng = substream(23, "crit-tlat", 0)
    z = np.array([0.0, 0.5 * H, 0.999 * H, 1.001 * H, 2.0 * H])
    tab = eval_tail_functionals(lattice_binary(), z, R_LAT, 100_000, rng)
    for k in range(3):
        assert abs(tab.f1[k] - 0.5) < 4 * tab.f1_se[k]
    assert tab.f1[3] == 0.0 and tab.f1[4] == 0.0
    assert np.all(tab.f3 == 0.0)
    assert np.all(tab.f1 <= 1.0 + 1e-9)
    t1 = tab.f1_table()
    assert t1(0.0) >= t1(2.0 * H)


def test_tail_functionals_validation():
    rng = substream(23, "crit-tbad", 0)
    with pytest.raises(CriterionError):
        eval_tail_functionals(lattice_binary(), [0.5, 1.0], R_LAT, 100, rng)
    with pytest.raises(CriterionError):
        eval_tail_functionals(lattice_binary(), [0.0, 1.0], R_LAT, 100, rng,
                              y_level=0.5)


# ---------------------------------------------------------------------------
# dichotomy experiment

def test_dichotomy_self_pair_identical_labels():
    rng = substream(23, "crit-dself", 0)
    rep = dichotomy_experiment(lattice_binary(), lattice_binary(), rng,
                               names=("a", "b"), horizon=800, n_paths=2,
                               y_vals=(1.0, 2.0), moment_draws=20_000,
                               quantile_depth=4, quantile_replicas=100)
    sa, sb = rep.series
    assert sa.label_capped == sb.label_capped
    assert sa.label_tail == sb.label_tail
    assert sa.verdict == sb.verdict == "satisfying-like"
    assert rep.quantiles[0].shape == (5, 3)
    assert "verdict" in rep.summary()
    assert len(rep.rows()) == 2 * 3 * 800


def test_dichotomy_pair_report():
    rng = substream(23, "crit-dpair", 0)
    rep = dichotomy_experiment(
        binary_gaussian(), normalize_to_boundary(heavy_count(2.0)), rng,
        names=("satisfying", "violating"), horizon=2_000, n_paths=2,
        y_vals=(1.0,), moment_draws=100_000,
        quantile_depth=4, quantile_replicas=100)
    sat, vio = rep.series
    assert sat.label_capped == "convergent-series"
    assert vio.label_tail == ["divergent-series"]
    m_sat, m_vio = rep.moments
    assert m_vio.slope_y > m_sat.slope_y + 0.05
