"""Kernel family, integral constants, growth rate, and horizon."""

import math

import numpy as np
import pytest
from scipy import integrate, optimize

import jumpcoal as jc
from jumpcoal import InvalidScaleError, KernelIntegrationError


STANDARD = dict(kappa1=1.0, s1=0.3, s2=0.2, kappa2=1.0, s3=0.3, amp=1.0, s4=0.3)


def standard_kernels():
    return jc.gaussian_kernels(**STANDARD)


def test_gaussian_constants_closed_forms():
    ker = jc.gaussian_kernels(kappa1=1.0, s1=0.5, s2=0.5)
    c = jc.kernel_constants(ker)
    assert c.c1_int == 1.0

    ker = standard_kernels()
    c = jc.kernel_constants(ker)
    assert c.c1_int == pytest.approx(STANDARD["kappa1"], rel=1e-15)
    assert c.c2_int == pytest.approx(STANDARD["kappa2"], rel=1e-15)
    assert c.phi_sup == pytest.approx(STANDARD["amp"], rel=1e-15)
    assert c.phi_int == pytest.approx(
        STANDARD["amp"] * math.sqrt(2.0 * math.pi * STANDARD["s4"] ** 2), rel=1e-14
    )
    assert c.c1_max == pytest.approx(
        STANDARD["kappa1"] / math.sqrt(2.0 * math.pi * STANDARD["s1"] ** 2), rel=1e-14
    )
    for v in (c.c1_int, c.c1_max, c.c2_int, c.phi_int, c.phi_sup):
        assert np.isfinite(v) and v >= 0.0


def test_zero_amplitude_potential():
    c = jc.kernel_constants(jc.gaussian_kernels(amp=0.0))
    assert c.phi_int == 0.0
    assert c.phi_sup == 0.0


def test_c1_max_grid_oracle():
    # Independent oracle: integrate c1 over the target coordinate z by
    # quadrature for each separation r and take the maximum over an r grid
    # that includes the coincidence point r = 0.
    ker = jc.gaussian_kernels(kappa1=2.0, s1=0.5, s2=0.2)
    c = jc.kernel_constants(ker)
    expected = 2.0 / math.sqrt(2.0 * math.pi * 0.25)
    assert c.c1_max == pytest.approx(expected, rel=1e-14)
    assert c.c1_max == pytest.approx(1.595769, abs=5e-6)

    seps = np.linspace(-1.5, 1.5, 41)
    best = 0.0
    for r in seps:
        x, y = np.array([0.0]), np.array([r])
        val, _ = integrate.quad(
            lambda z: float(ker.c1(x, y, np.array([z]))), -6.0, 6.0, limit=200
        )
        best = max(best, val)
    assert best == pytest.approx(c.c1_max, rel=1e-6)


def test_growth_rate_substitution():
    c = jc.KernelConstants(c1_int=1.0, c1_max=1.0, c2_int=1.0, phi_int=0.0, phi_sup=0.0)
    assert jc.scale_growth_rate(0.0, c) == 3.5

    c = jc.KernelConstants(c1_int=2.0, c1_max=1.0, c2_int=0.0, phi_int=0.7, phi_sup=1.0)
    for theta in (-1.0, 0.0, 0.4, 2.0):
        assert jc.scale_growth_rate(theta, c) == pytest.approx(
            1.5 * 2.0 * math.exp(theta), rel=1e-15
        )

    c = jc.KernelConstants(
        c1_int=2.0, c1_max=1.0, c2_int=0.5, phi_int=math.log(2.0), phi_sup=1.0
    )
    assert jc.scale_growth_rate(0.0, c) == pytest.approx(5.0, rel=1e-14)


def test_growth_rate_monotone_and_positive():
    c = jc.kernel_constants(standard_kernels())
    thetas = np.linspace(-2.0, 2.0, 41)
    vals = np.array([jc.scale_growth_rate(t, c) for t in thetas])
    assert np.all(vals > 0.0)
    assert np.all(np.diff(vals) > 0.0)


def test_horizon_ratio_example():
    c = jc.KernelConstants(c1_int=1.0, c1_max=1.0, c2_int=1.0, phi_int=0.0, phi_sup=0.0)
    # growth rate at the upper scale point 0 is 3.5, so a unit scale gap
    # gives a guaranteed time of 1/3.5
    assert jc.horizon(0.0, -1.0, c) == pytest.approx(1.0 / 3.5, rel=1e-15)
    assert jc.horizon(0.0, -1.0, c) == pytest.approx(0.285714, abs=1e-6)


def test_horizon_shrinks_with_scale_gap():
    c = jc.kernel_constants(standard_kernels())
    eps = np.array([1.0, 0.3, 0.1, 0.03, 0.01, 0.003])
    ts = np.array([jc.horizon(e, 0.0, c) for e in eps])
    assert np.all(ts > 0.0)
    assert np.all(np.diff(ts) < 0.0)
    assert ts[-1] < 1e-3


def test_horizon_rejects_empty_scale_gap():
    c = jc.kernel_constants(standard_kernels())
    with pytest.raises(InvalidScaleError):
        jc.horizon(0.0, 0.0, c)
    with pytest.raises(InvalidScaleError):
        jc.horizon(-0.5, 0.0, c)


def test_horizon_interior_maximum():
    # For a fixed lower scale point the guaranteed time first grows with the
    # gap and then collapses because the growth rate explodes; the maximum
    # found by a coarse scan must be confirmed by a golden-section refinement
    # and must sit strictly inside the scan range.
    c = jc.kernel_constants(standard_kernels())
    alphas = np.linspace(1e-3, 6.0, 2000)
    ts = np.array([jc.horizon(a, 0.0, c) for a in alphas])
    i = int(np.argmax(ts))
    assert 0 < i < len(alphas) - 1
    assert ts[0] < ts[i] and ts[-1] < ts[i]

    res = optimize.minimize_scalar(
        lambda a: -jc.horizon(a, 0.0, c),
        bracket=(alphas[i - 1], alphas[i], alphas[i + 1]),
        method="golden",
    )
    t_star = -res.fun
    assert alphas[0] < res.x < alphas[-1]
    assert t_star >= ts[i] - 1e-12
    assert abs(t_star - ts[i]) <= 1e-5 * t_star


def test_c1_symmetry_translation_nonneg():
    rng = np.random.default_rng(7)
    for d in (1, 2):
        ker = jc.gaussian_kernels(d=d, **STANDARD)
        for _ in range(50):
            x, y, z, u = rng.normal(size=(4, d))
            v = float(ker.c1(x, y, z))
            assert v >= 0.0
            assert float(ker.c1(y, x, z)) == pytest.approx(v, rel=1e-12, abs=1e-300)
            assert float(ker.c1(x + u, y + u, z + u)) == pytest.approx(
                v, rel=1e-10, abs=1e-300
            )
            assert float(ker.c2(z - x)) >= 0.0
            assert float(ker.phi(z - x)) >= 0.0


def test_pair_integral_bounded_by_sup():
    ker = standard_kernels()
    c = jc.kernel_constants(ker)
    rng = np.random.default_rng(11)
    pts = rng.uniform(-2.0, 2.0, size=(1000, 2, 1))
    for x, y in pts:
        assert jc.coalescence_rate(x, y, ker, sigma=0.0) <= c.c1_max * (1.0 + 1e-12)


def test_constants_quadrature_agreement():
    closed = jc.kernel_constants(standard_kernels(), method="closed")
    quad = jc.kernel_constants(standard_kernels(), method="quadrature")
    for field in ("c1_int", "c1_max", "c2_int", "phi_int", "phi_sup"):
        a, b = getattr(closed, field), getattr(quad, field)
        assert abs(a - b) <= 1e-8 * max(abs(a), abs(b), 1.0)


def test_quadrature_failure_names_constant():
    bad = jc.custom_kernels(
        c1=lambda x, y, z: 1.0
        / np.maximum(np.abs(np.sum(z - (x + y) / 2.0, axis=-1)), 1e-300),
        c2=lambda r: np.exp(-np.sum(r * r, axis=-1)),
        phi=lambda r: np.zeros(np.asarray(r, dtype=float).shape[:-1]),
        integration_box=(-2.0, 2.0),
    )
    with pytest.raises(KernelIntegrationError, match="c1_int"):
        jc.kernel_constants(bad)


def test_taper_range():
    xs = np.linspace(-3.0, 3.0, 25).reshape(-1, 1)
    assert np.all(jc.gaussian_taper(xs, 0.0) == 1.0)
    vals = jc.gaussian_taper(xs, 0.7)
    assert np.all(vals > 0.0) and np.all(vals <= 1.0)
    assert float(jc.gaussian_taper(np.array([0.0]), 0.7)) == 1.0


def test_scale_partition_points():
    sp = jc.ScaleParams(0.0, 1.0, q=2.0)
    pts = np.asarray(sp.partition_points(2))
    assert pts.shape == (6,)
    expected = np.array([0.0, 1.0 / 6.0, 5.0 / 12.0, 7.0 / 12.0, 5.0 / 6.0, 1.0])
    np.testing.assert_allclose(pts, expected, rtol=0.0, atol=1e-12)
    assert np.all(np.diff(pts) > 0.0)
    assert pts[0] == 0.0 and pts[-1] == 1.0


def test_pair_integral_diagnostics_coincide():
    diag = jc.pair_integral_diagnostics(standard_kernels())
    vals = np.array([diag["args_12"], diag["args_13"], diag["args_23"]])
    np.testing.assert_allclose(vals, STANDARD["kappa1"], rtol=1e-8)


def test_coalescence_rate_closed_form_no_taper():
    ker = standard_kernels()
    rng = np.random.default_rng(3)
    for _ in range(20):
        x, y = rng.normal(size=(2, 1))
        r = float(np.sum(x - y))
        expected = (
            STANDARD["kappa1"]
            * math.exp(-0.5 * (r / STANDARD["s1"]) ** 2)
            / math.sqrt(2.0 * math.pi * STANDARD["s1"] ** 2)
        )
        assert jc.coalescence_rate(x, y, ker, sigma=0.0) == pytest.approx(
            expected, rel=1e-12
        )


def test_coalescence_rate_taper_quadrature_oracle():
    ker = jc.gaussian_kernels(kappa1=1.0, s1=0.3, s2=0.5)
    x, y = np.array([0.2]), np.array([0.9])
    got = jc.coalescence_rate(x, y, ker, sigma=1.0)

    def integrand(z):
        zz = np.array([z])
        return float(ker.c1(x, y, zz)) * float(jc.gaussian_taper(zz, 1.0))

    want, _ = integrate.quad(integrand, -8.0, 8.0, limit=200)
    assert got == pytest.approx(want, rel=1e-8)
