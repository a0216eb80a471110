"""Correlation evolution: generators, time stepping, time-ordered series."""

import math

import numpy as np
import pytest
from scipy import integrate

import jumpcoal as jc
from jumpcoal import (
    BlowUpError,
    DysonSpec,
    GridSpec,
    HorizonExceededError,
    ScaleParams,
    SymmetricGridFamily,
    TruncationError,
)


def standard_kernels(**over):
    base = dict(kappa1=1.0, s1=0.3, s2=0.2, kappa2=1.0, s3=0.3, amp=1.0, s4=0.3)
    base.update(over)
    return jc.gaussian_kernels(**base)


def make_grid():
    return GridSpec(-0.5, 1.5, 8)


def poisson_start(grid, rho=1.0, cap=3):
    return jc.density_to_correlation(jc.poisson_density(grid, rho, (0.0, 1.0), cap))


def discrete_pair_loss(idx, grid, ker, sigma):
    # independent rebuild of the grid pair-loss rate: midpoint sum of the
    # tapered coalescence intensity over target cells, summed over pairs
    pts = grid.points
    w = grid.cell_volume
    total = 0.0
    sel = [pts[i] for i in idx]
    for a in range(len(sel)):
        for b in range(a + 1, len(sel)):
            vals = ker.c1(sel[a][None, :], sel[b][None, :], pts)
            taper = jc.gaussian_taper(pts, sigma)
            total += w * float(np.sum(np.asarray(vals) * np.asarray(taper)))
    return total


# ---------------------------------------------------------------- pair loss


def test_pair_loss_small_configurations():
    ker = standard_kernels()
    assert jc.total_coalescence_rate(np.zeros((0, 1)), ker, 0.0) == 0.0
    assert jc.total_coalescence_rate(np.array([[0.3]]), ker, 0.0) == 0.0
    assert jc.total_coalescence_rate(np.array([[0.3]]), ker, 1.0) == 0.0


def test_pair_loss_bound():
    ker = standard_kernels()
    c = jc.kernel_constants(ker)
    rng = np.random.default_rng(17)
    for _ in range(200):
        n = int(rng.integers(0, 7))
        pts = rng.uniform(-1.0, 2.0, size=(n, 1))
        val = jc.total_coalescence_rate(pts, ker, 0.0)
        assert val <= c.c1_max * n * (n - 1) / 2.0 + 1e-12
        assert val >= 0.0


def test_pair_loss_two_particle_quadrature():
    ker = standard_kernels()
    x, y = np.array([0.15]), np.array([0.55])
    got = jc.total_coalescence_rate(np.array([x, y]), ker, 1.0)

    def integrand(z):
        zz = np.array([z])
        return float(ker.c1(x, y, zz)) * math.exp(-1.0 * z * z)

    want, _ = integrate.quad(integrand, -8.0, 8.0, limit=200)
    assert got == pytest.approx(want, rel=1e-8)


def test_pair_loss_sums_pairs():
    ker = standard_kernels()
    pts = np.array([[0.1], [0.4], [0.9]])
    want = sum(
        jc.coalescence_rate(pts[i], pts[j], ker, 0.5)
        for i in range(3)
        for j in range(i + 1, 3)
    )
    assert jc.total_coalescence_rate(pts, ker, 0.5) == pytest.approx(want, rel=1e-14)


# ------------------------------------------------------- repulsion clusters


def test_cluster_expansion_no_potential():
    ker = standard_kernels(amp=0.0)
    grid = make_grid()
    k = poisson_start(grid)
    for eta in ((), (3,), (2, 6)):
        val, tail = jc.cluster_expansion(k, ker, y_index=5, eta=eta, m_cluster=1)
        assert val == pytest.approx(k.value_at(eta), rel=1e-14)
        assert tail == 0.0


def test_cluster_expansion_depth_zero():
    ker = standard_kernels(amp=2.0)
    grid = make_grid()
    k = poisson_start(grid)
    for eta in ((), (4,), (1, 7)):
        val, _ = jc.cluster_expansion(k, ker, y_index=6, eta=eta, m_cluster=0)
        assert val == k.value_at(eta)


def test_cluster_expansion_poisson_closed_form():
    # for an exponential family the cluster series sums to an explicit
    # exponential; the truncated series must sit within the reported tail
    grid = GridSpec(-0.5, 1.5, 12)
    rho = 0.8
    ker = standard_kernels()
    k = jc.exponential_vector(grid, np.full(grid.n_cells, rho), 6)
    pts = grid.points
    w = grid.cell_volume
    y = pts[7]
    damp = np.exp(-np.array([float(ker.phi(y - p)) for p in pts])) - 1.0
    x = rho * w * damp.sum()
    for eta in ((), (3,)):
        val, tail = jc.cluster_expansion(k, ker, y_index=7, eta=eta, m_cluster=3)
        closed = k.value_at(eta) * math.exp(x)
        series_tail = abs(x) ** 4 / math.factorial(4) * math.exp(abs(x))
        assert abs(val - closed) <= tail + series_tail + 1e-12
        assert tail >= 0.0


def test_cluster_expansion_infeasible_depth():
    ker = standard_kernels()
    grid = make_grid()
    k = poisson_start(grid, cap=2)
    with pytest.raises(TruncationError):
        jc.cluster_expansion(k, ker, y_index=2, eta=(1, 5), m_cluster=2)


# ------------------------------------------------------------- generators


def test_correlation_generator_empty_component_zero():
    ker = standard_kernels()
    grid = make_grid()
    rng = np.random.default_rng(23)
    for _ in range(10):
        k = jc.random_family(rng, grid, 3)
        out = jc.correlation_generator(k, ker, sigma=0.5)
        assert float(out.comps[0]) == 0.0


def test_correlation_generator_kills_empty_indicator():
    ker = standard_kernels()
    grid = make_grid()
    k = SymmetricGridFamily(
        grid,
        [np.asarray(1.0)] + [np.zeros((grid.n_cells,) * n) for n in range(1, 4)],
        check_symmetry=False,
    )
    out = jc.correlation_generator(k, ker, sigma=0.0)
    for n in range(4):
        assert np.all(np.asarray(out.comps[n]) == 0.0)


def test_free_jump_poisson_fixed_point():
    # with no coalescence and no repulsion the jump gain and loss cancel
    # exactly on an exponential family with constant intensity
    ker = standard_kernels(kappa1=0.0, amp=0.0)
    grid = make_grid()
    rho = 1.3
    k = jc.exponential_vector(grid, np.full(grid.n_cells, rho), 3)
    out = jc.correlation_generator(k, ker, sigma=0.0)
    for n in range(4):
        assert float(np.max(np.abs(np.asarray(out.comps[n])))) <= 1e-10


def test_quasi_observable_generator_kills_empty_indicator():
    ker = standard_kernels()
    grid = make_grid()
    G = SymmetricGridFamily(grid, [np.asarray(1.0)])
    out = jc.quasi_observable_generator(G, ker, sigma=0.5)
    for comp in out.comps:
        assert np.all(np.asarray(comp) == 0.0)


def test_quasi_observable_generator_singleton_quadrature():
    # with jumps off and data on one-point configurations the generator is a
    # single coalescence integral per pair, compared against adaptive
    # quadrature of the continuum expression at matched midpoint resolution
    ker = standard_kernels(kappa2=0.0)
    grid = GridSpec(-1.0, 2.0, 192)
    pts = grid.points[:, 0]
    g1 = np.exp(-((pts - 0.5) ** 2) / 0.02) * ((pts > 0.05) & (pts < 0.95))
    G = SymmetricGridFamily(
        grid,
        [np.asarray(0.0), g1, np.zeros((grid.n_cells, grid.n_cells))],
        check_symmetry=False,
    )
    out = jc.quasi_observable_generator(G, ker, sigma=0.0)
    assert float(out.comps[0]) == 0.0
    assert np.max(np.abs(out.comps[1])) <= 1e-12

    prof = lambda z: math.exp(-((z - 0.5) ** 2) / 0.02) * (0.05 < z < 0.95)
    i, j = 95, 101  # midpoints near the box center
    x, y = pts[i], pts[j]

    def integrand(z):
        c1 = float(ker.c1(np.array([x]), np.array([y]), np.array([z])))
        return c1 * (prof(z) - prof(x) - prof(y))

    want, _ = integrate.quad(integrand, -1.0, 2.0, limit=400)
    got = float(out.comps[2][i, j])
    assert got == pytest.approx(want, abs=5e-3 * max(1.0, abs(want)))

    # orders above the pair level stay empty because the data is singleton
    if out.n_max >= 3:
        assert np.max(np.abs(out.comps[3])) == 0.0


def test_generator_duality():
    grid = make_grid()
    ker = standard_kernels()
    rng = np.random.default_rng(33)
    for sigma in (0.0, 0.5):
        for _ in range(5):
            G = jc.random_family(rng, grid, 3, decay=0.7)
            k = jc.random_family(rng, grid, 3, decay=0.7)
            lhs = jc.pairing(jc.quasi_observable_generator(G, ker, sigma=sigma), k)
            rhs = jc.pairing(G, jc.correlation_generator(k, ker, sigma=sigma))
            assert abs(lhs - rhs) <= 1e-10 * max(abs(lhs), abs(rhs), 1.0)


# ------------------------------------------------------------ time stepping


def test_rk4_frozen_for_zero_kernels():
    ker = standard_kernels(kappa1=0.0, kappa2=0.0)
    grid = make_grid()
    k0 = poisson_start(grid)
    kt, _ = jc.rk4_evolve(k0, ker, 0.5, t_end=0.05, dt=0.01)
    for n in range(k0.n_max + 1):
        assert np.array_equal(np.asarray(kt.comps[n]), np.asarray(k0.comps[n]))


def test_rk4_preserves_empty_component():
    ker = standard_kernels()
    grid = make_grid()
    k0 = poisson_start(grid)
    kt, _ = jc.rk4_evolve(k0, ker, 0.5, t_end=0.02, dt=0.002)
    assert float(kt.comps[0]) == float(k0.comps[0])


def test_rk4_self_convergence_order():
    ker = standard_kernels()
    grid = make_grid()
    k0 = poisson_start(grid)
    t = 0.02

    def run(dt):
        kt, _ = jc.rk4_evolve(k0, ker, 0.5, t_end=t, dt=dt)
        return kt

    ref = run(t / 64.0)

    def err(kt):
        return max(
            float(np.max(np.abs(np.asarray(kt.comps[n]) - np.asarray(ref.comps[n]))))
            for n in range(kt.n_max + 1)
        )

    e1 = err(run(t / 4.0))
    e2 = err(run(t / 8.0))
    order = math.log2(e1 / e2)
    assert order >= 3.8


def test_rk4_snapshots():
    ker = standard_kernels()
    grid = make_grid()
    k0 = poisson_start(grid)
    kt, snaps = jc.rk4_evolve(
        k0, ker, 0.5, t_end=0.02, dt=0.002, snapshot_times=(0.01, 0.02)
    )
    assert set(snaps.keys()) == {0.01, 0.02}
    for n in range(k0.n_max + 1):
        np.testing.assert_array_equal(snaps[0.02].comps[n], kt.comps[n])


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_rk4_blowup_detection():
    # the overflow on the way to the failure detection is the point here
    ker = standard_kernels(kappa1=80.0, s1=0.05)
    grid = make_grid()
    rng = np.random.default_rng(44)
    k0 = jc.random_family(rng, grid, 3)
    with pytest.raises(BlowUpError):
        jc.rk4_evolve(k0, ker, 0.0, t_end=400.0, dt=4.0)


# ------------------------------------------------------------ Dyson series


def test_dyson_depth_zero_is_loss_semigroup():
    ker = standard_kernels()
    grid = make_grid()
    k0 = poisson_start(grid)
    sigma, t = 0.5, 0.01
    spec = DysonSpec(ScaleParams(0.0, 1.0, 2.0), n_terms=0, quad_order=4)
    got = jc.dyson_evolve(k0, ker, sigma, spec, t)

    for n in range(k0.n_max + 1):
        arr = np.asarray(k0.comps[n])
        out = np.asarray(got.comps[n])
        if n == 0:
            assert float(out) == pytest.approx(float(arr), rel=1e-14)
            continue
        for idx in np.ndindex(*arr.shape):
            psi = discrete_pair_loss(idx, grid, ker, sigma)
            want = math.exp(-psi * t) * arr[idx]
            assert out[idx] == pytest.approx(want, rel=1e-12, abs=1e-300)


def test_dyson_frozen_for_zero_kernels():
    ker = standard_kernels(kappa1=0.0, kappa2=0.0)
    grid = make_grid()
    k0 = poisson_start(grid)
    spec = DysonSpec(ScaleParams(0.0, 1.0, 2.0), n_terms=2, quad_order=4)
    got = jc.dyson_evolve(k0, ker, 0.5, spec, 0.01)
    for n in range(k0.n_max + 1):
        np.testing.assert_allclose(got.comps[n], k0.comps[n], rtol=0.0, atol=1e-15)


def test_dyson_term_norms_below_bounds():
    ker = standard_kernels()
    const = jc.kernel_constants(ker)
    scale = ScaleParams(0.0, 1.0, 2.0)
    T = scale.horizon(const)
    t = 0.25 * T
    grid = make_grid()
    k0 = poisson_start(grid)
    spec = DysonSpec(scale, n_terms=3, quad_order=6)
    _, terms = jc.dyson_evolve(k0, ker, 0.5, spec, t, return_terms=True)
    k0_norm = jc.weighted_sup_norm(k0, scale.alpha0)
    for n, term in enumerate(terms):
        if n == 0:
            continue
        bound = jc.truncation_bound(n, t, scale, const) * k0_norm
        norm = jc.weighted_sup_norm(term, scale.alpha_star)
        assert norm <= bound * (1.0 + 1e-9)


def test_dyson_matches_rk4():
    ker = standard_kernels()
    const = jc.kernel_constants(ker)
    scale = ScaleParams(0.0, 1.0, 2.0)
    T = scale.horizon(const)
    t = 0.25 * T
    grid = make_grid()
    k0 = poisson_start(grid)
    spec = DysonSpec(scale, n_terms=3, quad_order=8)
    kd = jc.dyson_evolve(k0, ker, 0.5, spec, t)
    kr, _ = jc.rk4_evolve(k0, ker, 0.5, t_end=t, dt=t / 64.0)
    diff = max(
        float(np.max(np.abs(np.asarray(kd.comps[n]) - np.asarray(kr.comps[n]))))
        for n in range(k0.n_max + 1)
    )
    tail, ok = jc.series_tail_bound(3, t, scale, const)
    assert ok
    assert diff <= tail * jc.weighted_sup_norm(k0, scale.alpha0) + 1e-4


def test_dyson_horizon_guard():
    ker = standard_kernels()
    const = jc.kernel_constants(ker)
    scale = ScaleParams(0.0, 1.0, 2.0)
    T = scale.horizon(const)
    grid = make_grid()
    k0 = poisson_start(grid)
    spec = DysonSpec(scale, n_terms=1, quad_order=4)
    with pytest.raises(HorizonExceededError):
        jc.dyson_evolve(k0, ker, 0.5, spec, T * 1.01)
    # inside the guaranteed window the call succeeds
    jc.dyson_evolve(k0, ker, 0.5, spec, 0.8 * T / scale.q)


def test_dyson_dual_depth_zero_and_frozen():
    grid = make_grid()
    rng = np.random.default_rng(55)
    G0 = jc.random_family(rng, grid, 2)
    scale = ScaleParams(0.0, 1.0, 2.0)

    ker = standard_kernels(kappa1=0.0, kappa2=0.0)
    spec = DysonSpec(scale, n_terms=2, quad_order=4)
    got = jc.dyson_evolve_dual(G0, ker, 0.5, spec, 0.01)
    for n in range(G0.n_max + 1):
        np.testing.assert_allclose(got.comps[n], G0.comps[n], rtol=0.0, atol=1e-15)

    ker = standard_kernels()
    spec0 = DysonSpec(scale, n_terms=0, quad_order=4)
    got = jc.dyson_evolve_dual(G0, ker, 0.5, spec0, 0.01)
    for n in range(1, G0.n_max + 1):
        arr = np.asarray(G0.comps[n])
        out = np.asarray(got.comps[n])
        for idx in np.ndindex(*arr.shape):
            psi = discrete_pair_loss(idx, grid, ker, 0.5)
            assert out[idx] == pytest.approx(
                math.exp(-psi * 0.01) * arr[idx], rel=1e-12, abs=1e-300
            )


def test_dyson_dual_duality():
    grid = GridSpec(-0.5, 1.5, 6)
    ker = standard_kernels()
    scale = ScaleParams(0.0, 1.0, 2.0)
    spec = DysonSpec(scale, n_terms=2, quad_order=6)
    t = 0.01
    rng = np.random.default_rng(56)
    k0 = poisson_start(grid)
    G0 = jc.random_family(rng, grid, 3, decay=0.7)
    lhs = jc.pairing(jc.dyson_evolve_dual(G0, ker, 0.5, spec, t), k0)
    rhs = jc.pairing(G0, jc.dyson_evolve(k0, ker, 0.5, spec, t))
    assert abs(lhs - rhs) <= 1e-8 * max(abs(lhs), abs(rhs), 1.0)


# ------------------------------------------------------------------ bounds


def test_truncation_bound_values():
    ker = standard_kernels()
    const = jc.kernel_constants(ker)
    scale = ScaleParams(0.0, 1.0, 2.0)
    assert jc.truncation_bound(2, 0.0, scale, const) == 0.0

    T = scale.horizon(const)
    t = T / (2.0 * scale.q)  # places q t / T exactly at one half
    got = jc.truncation_bound(1, t, scale, const)
    assert got == pytest.approx(0.5 / math.e, rel=1e-14)


def test_series_tail_convergence_flag():
    ker = standard_kernels()
    const = jc.kernel_constants(ker)
    scale = ScaleParams(0.0, 1.0, 2.0)
    T = scale.horizon(const)

    tail_small, ok_small = jc.series_tail_bound(3, 0.5 * T / scale.q, scale, const)
    assert ok_small and 0.0 < tail_small < 1.0

    tail_big, ok_big = jc.series_tail_bound(3, 1.2 * T / scale.q, scale, const)
    assert not ok_big

    # deeper truncation shrinks the tail inside the summable window
    t = 0.5 * T / scale.q
    tails = [jc.series_tail_bound(n, t, scale, const)[0] for n in (0, 1, 2, 3)]
    assert all(b < a for a, b in zip(tails, tails[1:]))


def test_operator_bounds_trivial_and_random():
    ker = standard_kernels()
    grid = make_grid()
    empty = SymmetricGridFamily(grid, [np.asarray(1.0)])
    rep = jc.verify_operator_bounds(empty, 0.0, 1.0, ker)
    assert rep["loss_part_ok"] and rep["interaction_part_ok"]
    assert rep["loss_part_norm"] == 0.0

    rng = np.random.default_rng(66)
    for _ in range(5):
        k = jc.random_family(rng, grid, 3, decay=0.7)
        rep = jc.verify_operator_bounds(k, 0.0, 1.0, ker, sigma=0.5)
        assert rep["loss_part_ok"]
        assert rep["interaction_part_ok"]
        assert rep["loss_part_norm"] <= rep["loss_part_bound"]


def test_operator_bound_hand_value():
    # unit coalescence sup, unit scale gap, unit-norm input: the reported
    # loss bound reduces to the closed coefficient 2/e^2
    s1 = 1.0 / math.sqrt(2.0 * math.pi)
    ker = standard_kernels(kappa1=1.0, s1=s1)
    const = jc.kernel_constants(ker)
    assert const.c1_max == pytest.approx(1.0, rel=1e-14)
    grid = make_grid()
    empty = SymmetricGridFamily(grid, [np.asarray(1.0)])
    rep = jc.verify_operator_bounds(empty, 0.0, 1.0, ker)
    assert rep["input_norm"] == 1.0
    assert rep["loss_part_bound"] == pytest.approx(2.0 / math.e**2, rel=1e-12)
