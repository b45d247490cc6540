import math

import numpy as np
import pytest

from brw.conditioned import (
    ConditionedError,
    ConditionedPath,
    EnumerationTooLarge,
    Excursion,
    ExcursionOverrun,
    MonotoneTable,
    NotMonotone,
    reverse_excursion,
    sample_conditioned,
    sample_excursion,
    classify_series,
    series_diagnostic,
    tanaka_path_pmf,
    verify_h_transform,
)
from brw.laws import binary_gaussian, lattice_binary
from brw.streams import substream
from brw.walk import RenewalFunction, derive_step_law, exact_lattice_R

LSTEP = derive_step_law(lattice_binary())
H = LSTEP.span
GSTEP = derive_step_law(binary_gaussian())


def test_excursion_validation():
    Excursion(np.array([0.0, -1.0, 0.5]))
    with pytest.raises(ConditionedError):
        Excursion(np.array([0.0]))
    with pytest.raises(ConditionedError):
        Excursion(np.array([0.0, 1.0, 2.0]))
    with pytest.raises(ConditionedError):
        Excursion(np.array([0.0, -1.0, -2.0]))


def test_reverse_excursion_example():
    # xi = (0, -h, 0, h) reverses to nu = (0, h, 2h, h)
    e = Excursion(np.array([0.0, -H, 0.0, H]))
    nu = reverse_excursion(e)
    assert np.allclose(nu, [0.0, H, 2 * H, H])
    assert np.all(nu[1:] > 0)


def test_sample_excursion_law():
    # P(tau = 1) = 1/2, P(tau = 3) = 1/8 on the lattice; 0 never stops it
    rng = substream(11, "exc-law", 0)
    n = 40_000
    taus = []
    for _ in range(n):
        try:
            taus.append(sample_excursion(LSTEP, 1 << 20, rng).tau)
        except ExcursionOverrun:
            taus.append(1 << 20)
    taus = np.array(taus)
    assert np.all(taus[taus < (1 << 20)] % 2 == 1)
    for k, p in [(1, 0.5), (3, 0.125), (5, 0.0625)]:
        f = np.mean(taus == k)
        assert abs(f - p) < 4.5 * math.sqrt(p * (1 - p) / n)


def test_sample_excursion_overrun():
    rng = substream(11, "exc-overrun", 0)
    with pytest.raises(ExcursionOverrun):
        for _ in range(200):
            sample_excursion(LSTEP, 64, rng)


def test_conditioned_path_invariants():
    rng = substream(11, "cond-inv", 0)
    for step in (LSTEP, GSTEP):
        p = sample_conditioned(step, 500, rng)
        assert p.horizon == 500
        assert p.zeta[0] == 0.0 and np.all(p.zeta[1:] > 0)
        assert p.t_plus[0] == 0 and p.h_plus[0] == 0.0
        assert np.all(np.diff(p.t_plus) > 0)
        assert np.all(np.diff(p.h_plus) > 0)
        # ladder heights sit on the path at the recorded epochs
        assert np.allclose(p.zeta[p.t_plus], p.h_plus)


def test_lattice_first_step_degenerate():
    # zeta_1 = h with probability one on the lattice
    rng = substream(11, "cond-first", 0)
    for _ in range(50):
        p = sample_conditioned(LSTEP, 1, rng)
        assert p.zeta[1] == pytest.approx(H)


def test_tanaka_pmf_hand_values():
    assert tanaka_path_pmf((0, 1)) == pytest.approx(1.0)
    assert tanaka_path_pmf((0, 1, 2)) == pytest.approx(1.0)
    assert tanaka_path_pmf((0, 1, 2, 1)) == pytest.approx(0.25)
    assert tanaka_path_pmf((0, 1, 2, 3)) == pytest.approx(0.75)
    assert tanaka_path_pmf((0, 1, 0, 1)) == 0.0
    assert tanaka_path_pmf((0, -1, 0, 1)) == 0.0


def test_exact_h_transform_small_horizons():
    for n in range(1, 9):
        tv, mass_h, mass_t = verify_h_transform(LSTEP, n, mode="exact")
        assert tv <= 1e-12
        assert mass_h == pytest.approx(1.0, abs=1e-12)
        assert mass_t == pytest.approx(1.0, abs=1e-12)


def test_exact_mode_guards():
    with pytest.raises(EnumerationTooLarge):
        verify_h_transform(LSTEP, 40, mode="exact")
    with pytest.raises(ConditionedError):
        verify_h_transform(GSTEP, 4, mode="exact")


def test_sampler_matches_exact_pmf():
    rng = substream(11, "cond-pmf", 0)
    n_rep = 40_000
    counts = {}
    for _ in range(n_rep):
        p = sample_conditioned(LSTEP, 4, rng)
        key = tuple(np.rint(p.zeta / H).astype(int))
        counts[key] = counts.get(key, 0) + 1
    for key, c in counts.items():
        p_exact = tanaka_path_pmf(key)
        assert p_exact > 0
        se = math.sqrt(p_exact * (1 - p_exact) / n_rep)
        assert abs(c / n_rep - p_exact) < 4.5 * se


def test_mc_h_transform_gaussian():
    # Tanaka samples against the reweighted unconditioned walk, with the
    # renewal function from a Monte Carlo table
    from brw.walk import default_grid, estimate_renewal

    rng = substream(11, "cond-mc", 0)
    sigma = math.sqrt(GSTEP.var)
    grid = default_grid(GSTEP, x_max=60.0 * sigma)
    table = estimate_renewal(GSTEP, 60_000, grid, rng,
                             max_total_steps=500_000_000)
    R = RenewalFunction.from_table(table, extend_tail=True)
    g = lambda z: float(z[-1] <= 2.0 * sigma)
    lhs, lhs_se, rhs, rhs_se = verify_h_transform(
        GSTEP, 4, mode="mc", rng=rng, replicas=6000, R=R, g=g)
    # R table noise adds a small systematic part on the rhs
    tol = 4.0 * math.hypot(lhs_se, rhs_se) + 0.02 * abs(rhs)
    assert abs(lhs - rhs) < tol


def test_expected_sum_identity():
    # E[sum_n f(zeta_n)] = int f(x) R(x) U(dx) for compact f; on the lattice
    # U puts mass 1 at each level mh and R(mh) = 2m with R(0) = 1, so
    # f = 1{x < 3h} gives 1 + 2 + 4 = 7
    rng = substream(11, "cond-sum", 0)
    horizon = 6000
    n_rep = 2500
    vals = np.empty(n_rep)
    for i in range(n_rep):
        z = sample_conditioned(LSTEP, horizon, rng).zeta
        vals[i] = np.count_nonzero(z < 3 * H - 1e-9)
    target = sum(exact_lattice_R(m * H, H) for m in range(3))
    assert target == 7.0
    se = vals.std(ddof=1) / math.sqrt(n_rep)
    # visits past the horizon are a small negative bias
    assert abs(vals.mean() - target) < 4.0 * se + 0.1


def test_monotone_table():
    with pytest.raises(NotMonotone):
        MonotoneTable(np.array([0.0, 1.0, 2.0]), np.array([1.0, 0.5, 0.7]))
    with pytest.raises(ConditionedError):
        MonotoneTable(np.array([1.0, 2.0]), np.array([1.0, 0.5]))
    F = MonotoneTable(np.array([0.0, 1.0, 2.0]), np.array([1.0, 0.5, 0.25]))
    assert F(0.0) == 1.0 and F(0.99) == 1.0 and F(1.0) == 0.5
    assert F(10.0) == 0.25
    # int_0^2 F(y) y dy = 0.5 + 0.5 * 1.5 = 1.25 for the step table
    assert F.integral_y_dy(2.0) == pytest.approx(1.25)
    assert F.integral_y_dy(4.0) == pytest.approx(1.25 + 0.25 * 6.0)


def test_series_diagnostic_dichotomy():
    rng = substream(11, "cond-series", 0)
    F_conv = MonotoneTable.from_function(lambda y: (1 + y) ** -3.0, 4000.0, 8192)
    F_div = MonotoneTable.from_function(lambda y: (1 + y) ** -1.5, 4000.0, 8192)
    assert series_diagnostic(
        F_conv, sample_conditioned(LSTEP, 1000, rng)
    ).integral_class == "convergent-integral"
    assert series_diagnostic(
        F_div, sample_conditioned(LSTEP, 1000, rng)
    ).integral_class == "divergent-integral"
    for step in (LSTEP, GSTEP):
        _, label, _ = classify_series(F_conv, step, rng)
        assert label == "convergent-series"
        _, label, _ = classify_series(F_div, step, rng)
        assert label == "divergent-series"


def test_series_diagnostic_shapes():
    rng = substream(11, "cond-shapes", 0)
    path = sample_conditioned(LSTEP, 2000, rng)
    F = MonotoneTable.from_function(lambda y: math.exp(-y), 50.0, 512)
    d = series_diagnostic(F, path, N=1500)
    assert d.checkpoints[-1] == 1500
    assert np.all(np.diff(d.partial_sums) >= 0)
    assert np.all(np.diff(d.integral_vals) >= 0)
    with pytest.raises(ConditionedError):
        series_diagnostic(F, path, N=5000)
