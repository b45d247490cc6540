import math

import numpy as np
import pytest

from brw import laws, walk
from brw.streams import substream

H = laws.LATTICE_H


def test_derive_step_law_analytic():
    s = walk.derive_step_law(laws.binary_gaussian())
    assert s.kind == "gaussian"
    assert s.var == pytest.approx(2 * math.log(2), rel=1e-12)
    s = walk.derive_step_law(laws.lattice_binary())
    assert s.kind == "lattice"
    assert s.span == pytest.approx(H, rel=1e-12)
    s = walk.derive_step_law(laws.single_child_law(0.0))
    assert s.values.tolist() == [0.0] and s.probs.tolist() == [1.0]
    assert s.var == 0.0


def test_step_law_moment_invariants():
    rng = substream(1, "steps")
    for law in (laws.binary_gaussian(), laws.lattice_binary()):
        s = walk.derive_step_law(law)
        x = s.sample(rng, 200_000)
        se_m = x.std(ddof=1) / math.sqrt(x.size)
        assert abs(x.mean()) < 4 * se_m
        se_v = (x ** 2).std(ddof=1) / math.sqrt(x.size)
        assert abs(np.mean(x ** 2) - s.var) < max(4 * se_v, 1e-9)


def test_derive_step_law_requires_boundary():
    with pytest.raises(walk.WalkError):
        walk.derive_step_law(laws.binary_gaussian(0.0, 1.0))


def test_resampled_step_law_matches_analytic():
    law = laws.normalize_to_boundary(
        laws.user_table([(0.5, [-1.0]), (0.5, [1.0, 1.0])]))
    rng = substream(2, "resample")
    analytic = walk.derive_step_law(law)
    pool = walk.derive_step_law(law, rng, mode="resampled", pool_size=150_000)
    assert pool.mode == "resampled"
    for v, p in zip(analytic.values, analytic.probs):
        emp = np.mean(np.abs(pool.values - v) < 1e-9)
        assert emp == pytest.approx(p, abs=4 * math.sqrt(p * (1 - p) / 150_000))


def test_resampled_needs_envelope():
    with pytest.raises(walk.EnvelopeMissing):
        walk.derive_step_law(laws.binary_gaussian(), substream(0, "x"),
                             mode="resampled")


def test_exact_lattice_R_values():
    assert walk.exact_lattice_R(0.0) == 1.0
    assert walk.exact_lattice_R(0.5 * H) == 2.0
    assert walk.exact_lattice_R(H) == 2.0      # left-open: U-minus([0, h))
    assert walk.exact_lattice_R(1.5 * H) == 4.0
    assert walk.exact_lattice_R(2.5 * H) == 6.0
    with pytest.raises(walk.RIncompatible):
        walk.exact_lattice_R(-1.0)


def test_lattice_harmonic_closed_form():
    # from x = 1.5h: R(2.5h)/2 + R(0.5h)/2 = 3 + 1 = 4 = R(1.5h)
    lhs = 0.5 * walk.exact_lattice_R(2.5 * H) + 0.5 * walk.exact_lattice_R(0.5 * H)
    assert lhs == walk.exact_lattice_R(1.5 * H) == 4.0
    # on-lattice point: from x = h only the up-step survives the kill
    lhs = 0.5 * walk.exact_lattice_R(2 * H)
    assert lhs == walk.exact_lattice_R(H) == 2.0


def test_estimate_renewal_matches_exact_lattice():
    step = walk.derive_step_law(laws.lattice_binary())
    grid = walk.default_grid(step, x_max=10 * H)
    tab = walk.estimate_renewal(step, 30_000, grid, substream(3, "ren"),
                                max_total_steps=500_000_000)
    assert not tab.partial
    ex = walk.exact_lattice_renewal(H, 10 * H)
    z_r = np.abs(tab.r_vals - ex.r_vals)[1:] / np.maximum(tab.se_r[1:], 1e-12)
    z_u = np.abs(tab.u_cum - ex.u_cum)[1:] / np.maximum(tab.se_u[1:], 1e-12)
    assert z_r.max() < 4.5
    assert z_u.max() < 4.5
    assert tab.r_vals[0] == 1.0           # R(0) := 1 pin
    assert tab.u_cum[1] >= 1.0            # U([0,0]): the H_0 = S_0 term
    c1, c2 = tab.envelope()
    assert 0 < c1 <= c2 < math.inf


def test_estimate_renewal_budget_flag():
    step = walk.derive_step_law(laws.lattice_binary())
    grid = walk.default_grid(step, x_max=10 * H)
    tab = walk.estimate_renewal(step, 50_000, grid, substream(4, "tiny"),
                                max_total_steps=200_000)
    assert tab.partial


def test_renewal_function_handle():
    ex = walk.exact_lattice_renewal(H, 10 * H)
    R = walk.RenewalFunction.from_table(ex)
    assert R(0.0) == 1.0
    assert R(0.5 * H) == pytest.approx(2.0)
    with pytest.raises(walk.RIncompatible):
        R(11 * H)
    with pytest.raises(walk.RIncompatible):
        R(-0.5)
    big = walk.exact_lattice_renewal(H, 60 * H)
    Rext = walk.RenewalFunction.from_table(big, extend_tail=True)
    # linear continuation with the fitted slope, anchored at the edge
    edge = big.grid[-1]
    assert Rext(edge + 2.0) == pytest.approx(
        big.r_vals[-1] + Rext.c0 * 2.0, rel=1e-9)
    Rlat = walk.RenewalFunction.from_lattice(H)
    assert Rlat(1.5 * H) == 4.0
    assert Rlat.x_max == math.inf


def test_estimate_c0_lattice():
    ex = walk.exact_lattice_renewal(H, 100 * H)
    c0, drift = walk.estimate_c0(ex)
    assert c0 == pytest.approx(2.0 / H, rel=0.02)
    assert drift < 0.05
    small = walk.exact_lattice_renewal(H, 10 * H)
    with pytest.raises(walk.WalkError):
        walk.estimate_c0(small)


def test_check_harmonic_lattice_exact_R():
    step = walk.derive_step_law(laws.lattice_binary())
    R = walk.RenewalFunction.from_lattice(H)
    xs = H * np.array([0.5, 1.0, 1.5, 2.5, 7.0, 20.0])
    worst, rows = walk.check_harmonic(step, R, xs, 200_000, substream(5, "harm"))
    for x, est, se, rx in rows:
        assert abs(est - rx) < 4.5 * max(se, 1e-12)


def test_check_harmonic_degenerate_step():
    step = walk.StepLaw("discrete", (), values=np.array([0.0]),
                        probs=np.array([1.0]))
    R = walk.RenewalFunction.from_lattice(H)
    worst, _ = walk.check_harmonic(step, R, [0.7, 1.3], 100, substream(6, "id"))
    assert worst == 0.0


def test_gaussian_table_harmonic():
    step = walk.derive_step_law(laws.binary_gaussian())
    grid = walk.default_grid(step, x_max=20 * math.sqrt(step.var))
    tab = walk.estimate_renewal(step, 60_000, grid, substream(7, "gauss"),
                                max_total_steps=2_000_000_000)
    assert not tab.partial
    R = walk.RenewalFunction.from_table(tab)
    sigma = math.sqrt(step.var)
    xs = sigma * np.array([0.3, 1.0, 3.0, 8.0, 13.0])
    worst, rows = walk.check_harmonic(step, R, xs, 40_000, substream(8, "hg"))
    for x, est, se, rx in rows:
        # slack for the table's own cell-level noise on top of the MC error
        assert abs(est - rx) < 5 * se + 0.02 * rx


def test_renewal_csv_roundtrip(tmp_path):
    ex = walk.exact_lattice_renewal(H, 10 * H)
    p = tmp_path / "table.csv"
    ex.to_csv(p)
    back = walk.RenewalTable.from_csv(p, sigma=H, span=H)
    assert np.allclose(back.grid, ex.grid)
    assert np.allclose(back.r_vals, ex.r_vals)
    assert np.allclose(back.u_cum, ex.u_cum)


def test_decompose_ladders():
    step = walk.derive_step_law(laws.binary_gaussian())
    lad = walk.decompose_ladders(step, 400, 4000, substream(9, "ladder"))
    assert np.all(np.diff(lad.t_up) > 0)
    assert np.all(np.diff(lad.h_up) > 0)
    assert 0 < lad.mean_h1() < 10
    assert np.all((lad.tau >= 1) | (lad.tau == -1))
    assert np.all((lad.tau_minus >= 1) | (lad.tau_minus == -1))
    assert lad.slln_drift() < 0.5


def test_many_to_one_depth_zero_and_one():
    lhs, _, rhs, _ = walk.verify_many_to_one(
        laws.binary_gaussian(), lambda p: np.ones(p.shape[0]), 0, 100,
        substream(10, "m2o"))
    assert lhs == rhs == 1.0
    g = lambda p: np.ones(p.shape[0])
    lhs, lse, rhs, rse = walk.verify_many_to_one(
        laws.binary_gaussian(), g, 1, 60_000, substream(11, "m2o1"))
    assert lhs == pytest.approx(2.0, abs=1e-12)  # two children always
    assert abs(rhs - 2.0) < 4 * rse


def test_many_to_one_lattice_exact_oracle():
    g = lambda p: (p[:, 1] > 0).astype(float)
    law = laws.lattice_binary()
    exact = walk.exact_tree_expectation(law, g, 2)
    lhs, lse, rhs, rse = walk.verify_many_to_one(law, g, 2, 60_000,
                                                 substream(12, "m2o2"))
    assert abs(lhs - exact) < 4 * lse
    assert abs(rhs - exact) < 4 * rse
    assert abs(lhs - rhs) < 4 * math.hypot(lse, rse)


def test_exact_tree_expectation_counts_children():
    law = laws.lattice_binary()
    n_children = walk.exact_tree_expectation(
        law, lambda p: np.ones(p.shape[0]), 1)
    assert n_children == pytest.approx(2 - laws.LATTICE_Q, rel=1e-12)
    with pytest.raises(walk.WalkError):
        walk.exact_tree_expectation(laws.binary_gaussian(),
                                    lambda p: np.ones(p.shape[0]), 1)


def test_many_to_one_depth_guard():
    with pytest.raises(walk.WalkError):
        walk.verify_many_to_one(laws.lattice_binary(),
                                lambda p: np.ones(p.shape[0]), 13, 10,
                                substream(13, "x"))
