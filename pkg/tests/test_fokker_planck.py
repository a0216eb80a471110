"""Finite-volume density evolution and the correlation bridge."""

import math

import numpy as np
import pytest
from scipy import integrate

import jumpcoal as jc
from jumpcoal import GridSpec, LocalSpec, SymmetricGridFamily
from jumpcoal.errors import ConfigError


BOX = (0.0, 1.0)


def standard_kernels(**over):
    base = dict(kappa1=1.0, s1=0.3, s2=0.2, kappa2=1.0, s3=0.3, amp=1.0, s4=0.3)
    base.update(over)
    return jc.gaussian_kernels(**base)


def make_grid(m=12):
    return GridSpec(-0.5, 1.5, m)


# -------------------------------------------------------------- initial data


def test_poisson_density_zero_intensity():
    R = jc.poisson_density(make_grid(), 0.0, BOX, 3)
    assert float(R.comps[0]) == 1.0
    for n in range(1, 4):
        assert np.all(np.asarray(R.comps[n]) == 0.0)
    assert jc.lp_integral(R) == 1.0


def test_poisson_density_truncated_mass():
    # unit expected count over the support box: the retained mass is the
    # partial exponential sum scaled by e^{-1}
    grid = make_grid()
    R2 = jc.poisson_density(grid, 1.0, BOX, 2)
    assert jc.lp_integral(R2) == pytest.approx(math.exp(-1.0) * 2.5, rel=1e-12)
    R3 = jc.poisson_density(grid, 1.0, BOX, 3)
    assert jc.lp_integral(R3) == pytest.approx(0.9810118431238463, rel=1e-12)
    marg = jc.count_marginal(R3)
    np.testing.assert_allclose(
        marg,
        math.exp(-1.0) * np.array([1.0, 1.0, 0.5, 1.0 / 6.0]),
        rtol=1e-12,
    )


def test_poisson_density_mass_approaches_one():
    grid = make_grid()
    masses = [jc.lp_integral(jc.poisson_density(grid, 1.0, BOX, n)) for n in (1, 3, 6)]
    assert all(b > a for a, b in zip(masses, masses[1:]))
    assert masses[-1] == pytest.approx(1.0, abs=1e-3)
    assert masses[-1] <= 1.0 + 1e-12


def test_poisson_density_intensity_forms_agree():
    grid = make_grid()
    rho = 0.8
    Rc = jc.poisson_density(grid, rho, BOX, 3)
    Ra = jc.poisson_density(grid, np.full(grid.n_cells, rho), BOX, 3)
    Rf = jc.poisson_density(grid, lambda x: rho * np.ones(np.asarray(x).shape[:-1]), BOX, 3)
    for n in range(4):
        np.testing.assert_array_equal(Rc.comps[n], Ra.comps[n])
        np.testing.assert_array_equal(Rc.comps[n], Rf.comps[n])


def test_poisson_density_rejects_negative_intensity():
    with pytest.raises(ValueError):
        jc.poisson_density(make_grid(), -0.3, BOX, 2)


def test_local_spec_requires_taper():
    with pytest.raises(ConfigError):
        LocalSpec(BOX, 2, 0.0)


# ------------------------------------------------------ correlation bridge


def test_density_to_correlation_empty():
    grid = make_grid(8)
    R = SymmetricGridFamily(
        grid,
        [np.asarray(1.0)] + [np.zeros((grid.n_cells,) * n) for n in range(1, 3)],
        check_symmetry=False,
    )
    k = jc.density_to_correlation(R)
    assert float(k.comps[0]) == 1.0
    for n in range(1, k.n_max + 1):
        assert np.all(np.asarray(k.comps[n]) == 0.0)


def test_density_to_correlation_single_order():
    grid = make_grid(8)
    f = np.linspace(0.1, 0.5, grid.n_cells)
    R = SymmetricGridFamily(
        grid,
        [np.asarray(0.0), f, np.zeros((grid.n_cells,) * 2)],
        check_symmetry=False,
    )
    k = jc.density_to_correlation(R)
    assert float(k.comps[0]) == pytest.approx(grid.cell_volume * f.sum(), rel=1e-14)
    np.testing.assert_allclose(k.comps[1], f, rtol=1e-14)
    assert np.all(np.asarray(k.comps[2]) == 0.0)


def test_density_to_correlation_poisson_limit():
    # with a deep cap the correlation of the truncated Poisson state comes
    # back constant at the intensity, up to the explicit exponential tail
    grid = make_grid()
    rho, cap = 1.0, 6
    R = jc.poisson_density(grid, rho, BOX, cap)
    k = jc.density_to_correlation(R)
    inside = np.all((grid.points >= BOX[0]) & (grid.points < BOX[1]), axis=-1)
    tail1 = math.exp(-rho) * (math.e - sum(1.0 / math.factorial(m) for m in range(cap)))
    vals = np.asarray(k.comps[1])[inside]
    assert np.max(np.abs(vals - rho)) <= rho * tail1 + 1e-12
    outside = ~inside
    assert np.max(np.abs(np.asarray(k.comps[1])[outside])) == 0.0


# ------------------------------------------------------------- loss rates


def test_loss_rates_empty_and_pair_identity():
    ker = standard_kernels()
    e1, e2 = jc.loss_rate_split(np.zeros((0, 1)), ker, 0.5)
    assert e1 == 0.0 and e2 == 0.0

    rng = np.random.default_rng(9)
    for n in (2, 3, 4):
        pts = rng.uniform(-0.4, 1.4, size=(n, 1))
        e1, _ = jc.loss_rate_split(pts, ker, 0.5)
        assert e1 == pytest.approx(
            jc.total_coalescence_rate(pts, ker, 0.5), rel=1e-14
        )


def test_loss_rate_single_particle_quadrature():
    ker = standard_kernels()
    x = np.array([0.3])
    e1, e2 = jc.loss_rate_split(x[None, :], ker, 0.5)
    assert e1 == 0.0

    def integrand(y):
        yy = np.array([y])
        return float(ker.c2(x - yy)) * float(jc.gaussian_taper(yy, 0.5))

    want, _ = integrate.quad(integrand, -8.0, 8.0, limit=200)
    assert e2 == pytest.approx(want, rel=1e-8)
    assert e2 == pytest.approx(jc.jump_weight_integral(x, ker, 0.5), rel=1e-14)


def test_loss_rate_repulsion_reduces_jumps():
    ker = standard_kernels(amp=2.0)
    free = standard_kernels(amp=0.0)
    pts = np.array([[0.4], [0.5]])
    _, e2_rep = jc.loss_rate_split(pts, ker, 0.5)
    _, e2_free = jc.loss_rate_split(pts, free, 0.5)
    assert 0.0 < e2_rep < e2_free


# --------------------------------------------------------- adjoint generator


def test_density_generator_kills_empty():
    ker = standard_kernels()
    grid = make_grid(8)
    R = SymmetricGridFamily(
        grid,
        [np.asarray(1.0)] + [np.zeros((grid.n_cells,) * n) for n in range(1, 3)],
        check_symmetry=False,
    )
    out = jc.density_generator(R, ker, 0.5)
    for comp in out.comps:
        assert np.all(np.asarray(comp) == 0.0)


def test_density_generator_conserves_mass():
    ker = standard_kernels()
    grid = make_grid(8)
    rng = np.random.default_rng(14)
    for _ in range(5):
        k = jc.random_family(rng, grid, 3)
        comps = [np.abs(np.asarray(k.comps[0]))] + [
            np.abs(k.comps[n]) for n in range(1, 4)
        ]
        R = SymmetricGridFamily(grid, comps, check_symmetry=False)
        out = jc.density_generator(R, ker, 0.5)
        assert abs(jc.lp_integral(out)) <= 1e-10


def test_generator_adjointness():
    ker = standard_kernels()
    grid = make_grid(8)
    rng = np.random.default_rng(15)
    for _ in range(5):
        F = jc.random_family(rng, grid, 3, decay=0.7)
        R = jc.random_family(rng, grid, 3, decay=0.7)
        LF = jc.observable_generator(F, ker, 0.5)
        LR = jc.density_generator(R, ker, 0.5)

        def mult(A, B):
            comps = [np.asarray(float(A.comps[0]) * float(B.comps[0]))] + [
                A.comps[n] * B.comps[n] for n in range(1, 4)
            ]
            return SymmetricGridFamily(grid, comps, check_symmetry=False)

        lhs = jc.lp_integral(mult(LF, R))
        rhs = jc.lp_integral(mult(F, LR))
        assert abs(lhs - rhs) <= 1e-10 * max(abs(lhs), abs(rhs), 1.0)


# ------------------------------------------------------------- integration


def test_integrate_fp_frozen_for_zero_kernels():
    ker = standard_kernels(kappa1=0.0, kappa2=0.0)
    grid = make_grid()
    R0 = jc.poisson_density(grid, 1.0, BOX, 3)
    Rt, info = jc.integrate_fp(R0, ker, LocalSpec(BOX, 3, 0.5), 0.05, 0.01)
    for n in range(4):
        assert np.array_equal(np.asarray(Rt.comps[n]), np.asarray(R0.comps[n]))
    assert info["mass"][-1] == info["mass"][0]


def test_integrate_fp_flat_kernel_pair_decay():
    # flat coalescence intensity, no jumps: the two-particle occupation
    # solves a scalar linear decay with the discrete tapered rate
    grid = make_grid(12)
    sigma = 0.5
    c1 = lambda x, y, z: np.ones(
        np.broadcast(
            np.sum(np.asarray(x), axis=-1),
            np.sum(np.asarray(y), axis=-1),
            np.sum(np.asarray(z), axis=-1),
        ).shape
    )
    zero = lambda r: np.zeros(np.asarray(np.sum(np.asarray(r), axis=-1)).shape)
    ker = jc.custom_kernels(c1=c1, c2=zero, phi=zero, integration_box=(-0.5, 1.5))

    w = grid.cell_volume
    r = w * float(np.sum(jc.gaussian_taper(grid.points, sigma)))

    n_cells = grid.n_cells
    R2 = np.zeros((n_cells, n_cells))
    i, j = 4, 7
    R2[i, j] = R2[j, i] = 1.0 / w**2
    R0 = SymmetricGridFamily(
        grid, [np.asarray(0.0), np.zeros(n_cells), R2], check_symmetry=False
    )
    assert jc.lp_integral(R0) == pytest.approx(1.0, rel=1e-14)

    t_end = 0.3
    Rt, _ = jc.integrate_fp(R0, ker, LocalSpec((-0.5, 1.5), 2, sigma), t_end, 1e-3)
    marg = jc.count_marginal(Rt)
    assert marg[2] == pytest.approx(math.exp(-r * t_end), abs=1e-4)
    assert marg[1] == pytest.approx(1.0 - math.exp(-r * t_end), abs=1e-4)
    assert marg[0] == pytest.approx(0.0, abs=1e-12)


def test_integrate_fp_mass_and_positivity():
    ker = standard_kernels()
    grid = make_grid()
    R0 = jc.poisson_density(grid, 1.0, BOX, 3)
    Rt, info = jc.integrate_fp(R0, ker, LocalSpec(BOX, 3, 0.5), 0.1, 1e-3)
    masses = np.asarray(info["mass"])
    assert np.max(np.abs(masses - masses[0])) <= 1e-12
    assert min(info["min_value"]) >= -1e-8
    assert info["target_leakage"] >= 0.0
    assert jc.lp_integral(Rt) <= 1.0 + 1e-12


def test_integrate_fp_cap_exactness():
    # nothing ever raises the particle count, so an initially empty top
    # order stays identically zero
    ker = standard_kernels()
    grid = make_grid()
    R0 = jc.poisson_density(grid, 1.0, BOX, 2)
    padded = SymmetricGridFamily(
        grid,
        [np.asarray(float(R0.comps[0])), R0.comps[1], R0.comps[2], np.zeros((grid.n_cells,) * 3)],
        check_symmetry=False,
    )
    Rt, _ = jc.integrate_fp(padded, ker, LocalSpec(BOX, 3, 0.5), 0.05, 1e-3)
    assert Rt.n_max == 3
    assert np.all(np.asarray(Rt.comps[3]) == 0.0)


def test_integrate_fp_snapshots_and_box_guard():
    ker = standard_kernels()
    grid = make_grid()
    R0 = jc.poisson_density(grid, 1.0, BOX, 2)
    Rt, info = jc.integrate_fp(
        R0, ker, LocalSpec(BOX, 2, 0.5), 0.02, 1e-3, snapshot_times=(0.01,)
    )
    assert set(info["snapshots"].keys()) == {0.01}
    with pytest.raises(ValueError):
        jc.integrate_fp(R0, ker, LocalSpec((-1.0, 1.0), 2, 0.5), 0.01, 1e-3)


# ------------------------------------------------------------- consistency


def test_consistency_check_at_time_zero():
    ker = standard_kernels()
    grid = make_grid(8)
    R0 = jc.poisson_density(grid, 1.0, BOX, 2)
    rep = jc.consistency_check(R0, ker, LocalSpec(BOX, 2, 0.5), 0.0, 1e-3)
    assert rep["max_rel"] == 0.0


def test_consistency_check_zero_kernels():
    ker = standard_kernels(kappa1=0.0, kappa2=0.0)
    grid = make_grid(8)
    R0 = jc.poisson_density(grid, 1.0, BOX, 2)
    rep = jc.consistency_check(R0, ker, LocalSpec(BOX, 2, 0.5), 0.02, 1e-3)
    assert rep["max_rel"] == 0.0


def test_consistency_check_two_routes_agree():
    ker = standard_kernels()
    grid = make_grid(8)
    R0 = jc.poisson_density(grid, 1.0, BOX, 2)
    rep = jc.consistency_check(R0, ker, LocalSpec(BOX, 2, 0.5), 0.02, 1e-3)
    assert rep["max_rel"] <= 1e-3
    assert len(rep["per_order"]) == 3
    assert abs(rep["mass_drift"]) <= 1e-10
    assert rep["min_value"] >= -1e-8


# ------------------------------------------------------- volume projections


def test_project_density_identity_and_mass():
    grid = make_grid()
    R = jc.poisson_density(grid, 0.9, BOX, 3)
    P = jc.project_density(R, BOX)
    assert P.grid.m == 6
    assert jc.lp_integral(P) == pytest.approx(jc.lp_integral(R), rel=1e-12)

    Q = jc.project_density(R, (1.0 / 6.0, 5.0 / 6.0))
    assert jc.lp_integral(Q) == pytest.approx(jc.lp_integral(R), rel=1e-12)
    for comp in Q.comps[1:]:
        assert np.all(np.asarray(comp) >= -1e-15)


def test_restrict_correlation_matches_values():
    grid = make_grid()
    k = jc.density_to_correlation(jc.poisson_density(grid, 0.9, BOX, 3))
    rk = jc.restrict_correlation(k, BOX)
    inside = np.where(np.all((grid.points >= 0.0) & (grid.points < 1.0), axis=-1))[0]
    np.testing.assert_allclose(
        np.asarray(rk.comps[1]), np.asarray(k.comps[1])[inside], rtol=0, atol=0
    )
