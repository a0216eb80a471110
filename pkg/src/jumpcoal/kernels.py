"""Model kernels, their integral constants, and the time-horizon calculators.

The model is a pair of mechanisms acting on finite point configurations in
R^d: two particles at x and y coalesce into one at z with intensity density
c1(x, y; z), and a single particle at x hops to y with kernel c2(x - y),
damped by the repulsion factor prod_u exp(-phi(y - u)) over the remaining
particles. A Gaussian taper exp(-sigma |target|^2) optionally localizes the
target positions of both mechanisms.

The built-in family keeps every integral in closed form:

    c1(x, y; z) = kappa1 * g(x - y; s1) * g(z - (x + y)/2; s2)
    c2(r)       = kappa2 * g(r; s3)
    phi(r)      = amp * exp(-|r|^2 / (2 s4^2))

with g(r; s) the normalized Gaussian density of scale s. Custom kernels are
supported through plain callables plus an integration box for quadrature.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
from numpy.typing import NDArray

from .errors import InvalidScaleError, KernelIntegrationError, UnsupportedSamplingError

__all__ = [
    "GaussianParams",
    "KernelSet",
    "KernelConstants",
    "ScaleParams",
    "gaussian_kernels",
    "custom_kernels",
    "gaussian_density",
    "gaussian_taper",
    "kernel_constants",
    "pair_integral_diagnostics",
    "scale_growth_rate",
    "horizon",
    "coalescence_rate",
    "coalescence_target_law",
    "jump_weight_integral",
    "total_coalescence_rate",
]

_QUAD_TOL = 1e-10


def _vec(x, d: int) -> NDArray[np.float64]:
    """Coerce a point or batch of points to an array with last axis d."""
    a = np.asarray(x, dtype=float)
    if a.ndim == 0:
        if d != 1:
            raise ValueError(f"scalar position given for dimension d={d}")
        return a.reshape(1)
    if a.shape[-1] != d:
        if d == 1:
            return a[..., None].reshape(a.shape + (1,))
        raise ValueError(f"position has last axis {a.shape[-1]}, expected {d}")
    return a


def gaussian_density(r, s: float, d: int = 1):
    """Normalized Gaussian density of scale s evaluated at displacement r."""
    r = _vec(r, d)
    sq = np.sum(r * r, axis=-1)
    return (2.0 * math.pi * s * s) ** (-0.5 * d) * np.exp(-sq / (2.0 * s * s))


def gaussian_taper(x, sigma: float, d: int = 1):
    """Localization weight exp(-sigma |x|^2); identically 1 for sigma = 0."""
    x = _vec(x, d)
    sq = np.sum(x * x, axis=-1)
    return np.exp(-sigma * sq)


@dataclass(frozen=True)
class GaussianParams:
    """Parameters of the built-in kernel family.

    kappa1, s1, s2 set the coalescence intensity (total rate, pair-distance
    scale, child-placement scale); kappa2, s3 the jump kernel; amp, s4 the
    repulsion bump height and range.
    """

    kappa1: float = 1.0
    s1: float = 0.3
    s2: float = 0.2
    kappa2: float = 1.0
    s3: float = 0.3
    amp: float = 1.0
    s4: float = 0.3

    def __post_init__(self):
        for name in ("s1", "s2", "s3", "s4"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        for name in ("kappa1", "kappa2", "amp"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")


@dataclass(frozen=True)
class KernelSet:
    """The model triple (c1, c2, phi) with its dimension and family tag.

    Immutable and hashable; shared freely across threads. For the custom
    family the callables must accept arrays of shape (..., d) per position
    argument and return shape (...,); ``integration_box`` (lo, hi) is then
    required for any quadrature.
    """

    d: int = 1
    family: str = "gaussian"
    params: Optional[GaussianParams] = None
    c1_fn: Optional[Callable] = None
    c2_fn: Optional[Callable] = None
    phi_fn: Optional[Callable] = None
    integration_box: Optional[tuple] = None

    @property
    def is_gaussian(self) -> bool:
        return self.family == "gaussian"

    def c1(self, x, y, z):
        """Coalescence intensity density c1(x, y; z)."""
        if self.is_gaussian:
            p = self.params
            x, y, z = _vec(x, self.d), _vec(y, self.d), _vec(z, self.d)
            mid = 0.5 * (x + y)
            return p.kappa1 * gaussian_density(x - y, p.s1, self.d) * gaussian_density(
                z - mid, p.s2, self.d
            )
        return np.asarray(self.c1_fn(_vec(x, self.d), _vec(y, self.d), _vec(z, self.d)), dtype=float)

    def c2(self, r):
        """Jump kernel evaluated at displacement r."""
        if self.is_gaussian:
            return self.params.kappa2 * gaussian_density(r, self.params.s3, self.d)
        return np.asarray(self.c2_fn(_vec(r, self.d)), dtype=float)

    def phi(self, r):
        """Repulsion potential evaluated at displacement r."""
        if self.is_gaussian:
            p = self.params
            r = _vec(r, self.d)
            sq = np.sum(r * r, axis=-1)
            return p.amp * np.exp(-sq / (2.0 * p.s4 * p.s4))
        return np.asarray(self.phi_fn(_vec(r, self.d)), dtype=float)


def gaussian_kernels(
    d: int = 1,
    kappa1: float = 1.0,
    s1: float = 0.3,
    s2: float = 0.2,
    kappa2: float = 1.0,
    s3: float = 0.3,
    amp: float = 1.0,
    s4: float = 0.3,
) -> KernelSet:
    """Build a KernelSet of the built-in family."""
    return KernelSet(d=d, family="gaussian", params=GaussianParams(kappa1, s1, s2, kappa2, s3, amp, s4))


def custom_kernels(c1, c2, phi, integration_box, d: int = 1) -> KernelSet:
    """Build a KernelSet from user callables plus a quadrature box (lo, hi)."""
    lo, hi = float(integration_box[0]), float(integration_box[1])
    if hi <= lo:
        raise ValueError("integration_box must satisfy lo < hi")
    return KernelSet(d=d, family="custom", c1_fn=c1, c2_fn=c2, phi_fn=phi, integration_box=(lo, hi))


@dataclass(frozen=True)
class KernelConstants:
    """The five integral constants gating every bound in the package.

    c1_int: total coalescence intensity, integrated over two arguments.
    c1_max: sup over (x, y) of the z-integral of c1.
    c2_int: total jump rate per particle.
    phi_int: integral of the repulsion potential.
    phi_sup: sup of the repulsion potential.
    """

    c1_int: float
    c1_max: float
    c2_int: float
    phi_int: float
    phi_sup: float

    def __post_init__(self):
        for name in ("c1_int", "c1_max", "c2_int", "phi_int", "phi_sup"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0:
                raise KernelIntegrationError(f"constant {name} is not finite and nonnegative: {v}")


def _quad_1d(f, lo, hi, name, abs_floor=0.0, points=None):
    from scipy import integrate

    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        try:
            val, err = integrate.quad(
                f, lo, hi, limit=400, epsabs=1e-12, epsrel=1e-11, points=points
            )
        except Exception as exc:
            raise KernelIntegrationError(f"quadrature for {name} failed: {exc}") from exc
    if caught or not math.isfinite(val) or err > max(_QUAD_TOL, 1e-6 * abs(val), abs_floor):
        raise KernelIntegrationError(
            f"quadrature for {name} did not converge (value={val!r}, error estimate={err!r})"
        )
    return val


def _c1_pair_integral(kernels: KernelSet, pair: tuple, box) -> float:
    """Integrate c1(x1, x2; x3) over the two arguments named by ``pair``.

    The remaining argument is pinned at the origin; by translation
    invariance the result does not depend on the pin.
    """
    from scipy import integrate

    lo, hi = box
    free = ({0, 1, 2} - set(pair)).pop()

    def integrand(a, b):
        args = [0.0, 0.0, 0.0]
        args[pair[0]] = a
        args[pair[1]] = b
        args[free] = 0.0
        return float(kernels.c1(args[0], args[1], args[2]))

    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        try:
            val, err = integrate.dblquad(integrand, lo, hi, lo, hi, epsabs=1e-11, epsrel=1e-11)
        except Exception as exc:
            raise KernelIntegrationError(f"quadrature for c1_int failed: {exc}") from exc
    if caught or not math.isfinite(val) or err > max(_QUAD_TOL, 1e-6 * abs(val)):
        raise KernelIntegrationError(
            f"quadrature for c1_int did not converge (value={val!r}, error estimate={err!r})"
        )
    return val


def _grid_sup(f, lo, hi, n=4001):
    xs = np.linspace(lo, hi, n)
    vals = np.asarray(f(xs), dtype=float)
    return float(np.max(vals))


def kernel_constants(kernels: KernelSet, method: str = "auto") -> KernelConstants:
    """Compute the five kernel constants.

    method 'auto' uses closed forms for the built-in family and adaptive
    quadrature otherwise; 'quadrature' forces the numeric path (handy as an
    independent cross-check). Quadrature is implemented for d = 1 and
    requires ``integration_box`` on custom kernel sets.
    """
    if method not in ("auto", "closed", "quadrature"):
        raise ValueError(f"unknown method {method!r}")
    if method in ("auto", "closed") and kernels.is_gaussian:
        p = kernels.params
        d = kernels.d
        return KernelConstants(
            c1_int=p.kappa1,
            c1_max=p.kappa1 * (2.0 * math.pi * p.s1 * p.s1) ** (-0.5 * d),
            c2_int=p.kappa2,
            phi_int=p.amp * (2.0 * math.pi * p.s4 * p.s4) ** (0.5 * d),
            phi_sup=p.amp,
        )
    if method == "closed":
        raise KernelIntegrationError("closed-form constants are only available for the gaussian family")

    if kernels.d != 1:
        raise KernelIntegrationError(
            "quadrature constants are implemented for d=1 only; "
            "use the gaussian family for higher dimensions"
        )
    if kernels.is_gaussian:
        p = kernels.params
        box = (-10.0 * max(p.s1, p.s2, p.s3, p.s4), 10.0 * max(p.s1, p.s2, p.s3, p.s4))
    else:
        if kernels.integration_box is None:
            raise KernelIntegrationError("custom kernels need integration_box for quadrature")
        box = kernels.integration_box
    lo, hi = box

    c1_int = _c1_pair_integral(kernels, (0, 1), box)
    c2_int = _quad_1d(lambda r: float(kernels.c2(r)), lo, hi, "c2_int")
    phi_int = _quad_1d(lambda r: float(kernels.phi(r)), lo, hi, "phi_int")
    phi_sup = _grid_sup(lambda r: kernels.phi(r), lo, hi)

    # sup over pairs of the z-integral; by translation invariance this is a
    # function of x - y, scanned over the box with x pinned at 0. The pair
    # midpoint is passed as a subdivision hint since mass concentrates there.
    def z_integral(ydiff):
        return _quad_1d(
            lambda z: float(kernels.c1(0.0, ydiff, z)),
            lo,
            hi,
            "c1_max",
            abs_floor=1e-8,
            points=[0.5 * ydiff] if lo < 0.5 * ydiff < hi else None,
        )

    diffs = np.linspace(lo, hi, 201)
    vals = [z_integral(t) for t in diffs]
    best = int(np.argmax(vals))
    window = diffs[max(0, best - 1)], diffs[min(len(diffs) - 1, best + 1)]
    from scipy import optimize

    res = optimize.minimize_scalar(lambda t: -z_integral(t), bounds=window, method="bounded")
    c1_max = max(max(vals), -float(res.fun))

    return KernelConstants(c1_int=c1_int, c1_max=c1_max, c2_int=c2_int, phi_int=phi_int, phi_sup=phi_sup)


def pair_integral_diagnostics(kernels: KernelSet, box=None) -> dict:
    """Integrals of c1 over each of the three argument pairs.

    For the built-in family all three agree (analytically equal to kappa1).
    For custom kernels the values are reported so disagreement is visible
    rather than silently averaged.
    """
    if kernels.is_gaussian and box is None:
        p = kernels.params
        s = 10.0 * max(p.s1, p.s2)
        box = (-s, s)
    if box is None:
        box = kernels.integration_box
    if box is None:
        raise KernelIntegrationError("pair diagnostics need an integration box")
    return {
        "args_12": _c1_pair_integral(kernels, (0, 1), box),
        "args_13": _c1_pair_integral(kernels, (0, 2), box),
        "args_23": _c1_pair_integral(kernels, (1, 2), box),
    }


def scale_growth_rate(theta: float, c: KernelConstants) -> float:
    """Growth rate of the weighted-space norms at scale theta.

    Strictly positive and strictly increasing in theta; the horizon of the
    time-ordered construction is its reciprocal scaled by the gap.
    """
    return 1.5 * c.c1_int * math.exp(theta) + 2.0 * math.exp(c.phi_int * math.exp(theta)) * c.c2_int


def horizon(alpha_star: float, alpha0: float, c: KernelConstants) -> float:
    """Guaranteed existence time for the scale jump alpha0 -> alpha_star."""
    if not alpha_star > alpha0:
        raise InvalidScaleError(f"alpha_star={alpha_star} must exceed alpha0={alpha0}")
    rate = scale_growth_rate(alpha_star, c)
    if rate == 0.0:
        return math.inf
    return (alpha_star - alpha0) / rate


@dataclass(frozen=True)
class ScaleParams:
    """Scale interval and inflation factor for the time-ordered series."""

    alpha0: float = 0.0
    alpha_star: float = 1.0
    q: float = 2.0

    def __post_init__(self):
        if not self.alpha_star > self.alpha0:
            raise InvalidScaleError(
                f"alpha_star={self.alpha_star} must exceed alpha0={self.alpha0}"
            )
        if not self.q > 1.0:
            raise InvalidScaleError(f"inflation factor q={self.q} must exceed 1")

    def horizon(self, c: KernelConstants) -> float:
        return horizon(self.alpha_star, self.alpha0, c)

    def partition_points(self, n: int) -> NDArray[np.float64]:
        """The 2n+2 interleaved scale points used by the depth-n series term.

        Index l runs from 0 to 2n+1, with the even and odd points advancing
        at the two different speeds; the last point equals alpha_star. For
        n = 0 the partition degenerates to the endpoints.
        """
        if n < 0:
            raise ValueError("partition depth must be nonnegative")
        width = self.alpha_star - self.alpha0
        if n == 0:
            return np.array([self.alpha0, self.alpha_star])
        pts = np.empty(2 * n + 2)
        for k in range(n + 1):
            slow = (k / (n + 1)) * (self.q - 1.0) / self.q
            fast = (k / n) / self.q
            pts[2 * k] = self.alpha0 + (slow + fast) * width
            slow1 = ((k + 1) / (n + 1)) * (self.q - 1.0) / self.q
            pts[2 * k + 1] = self.alpha0 + (slow1 + fast) * width
        return pts


def _taper_reduced(sigma: float, s: float, d: int):
    """Per-dimension reduction factors for a taper-weighted Gaussian integral.

    Integrating exp(-sigma |z|^2) g(z - m; s) over z gives
    a^{-d/2} exp(-sigma |m|^2 / a) with a = 1 + 2 sigma s^2; the same a also
    yields the tilted product law (mean m/a, variance s^2/a per coordinate).
    """
    a = 1.0 + 2.0 * sigma * s * s
    return a, a ** (-0.5 * d)


def coalescence_rate(x, y, kernels: KernelSet, sigma: float = 0.0):
    """Taper-weighted total intensity for the pair (x, y) to coalesce.

    This is the z-integral of taper(z) c1(x, y; z): closed form for the
    built-in family, adaptive quadrature (d = 1) for custom kernels.
    Broadcasts over leading axes of x and y for the built-in family.
    """
    if kernels.is_gaussian:
        p = kernels.params
        d = kernels.d
        x, y = _vec(x, d), _vec(y, d)
        base = p.kappa1 * gaussian_density(x - y, p.s1, d)
        if sigma == 0.0:
            return base
        a, amp = _taper_reduced(sigma, p.s2, d)
        mid = 0.5 * (x + y)
        msq = np.sum(mid * mid, axis=-1)
        return base * amp * np.exp(-sigma * msq / a)
    if kernels.d != 1:
        raise KernelIntegrationError("custom pair rates are implemented for d=1 only")
    if kernels.integration_box is None:
        raise KernelIntegrationError("custom kernels need integration_box for pair rates")
    lo, hi = kernels.integration_box
    xf, yf = float(np.asarray(x).reshape(-1)[0]), float(np.asarray(y).reshape(-1)[0])
    return _quad_1d(
        lambda z: float(gaussian_taper(z, sigma)) * float(kernels.c1(xf, yf, z)),
        lo,
        hi,
        "pair rate",
    )


def coalescence_target_law(x, y, kernels: KernelSet, sigma: float = 0.0):
    """Gaussian law (mean vector, per-coordinate std) of the merge target.

    The taper tilts the child-placement Gaussian toward the origin; the
    resulting law is again Gaussian with shrunk mean and variance.
    """
    if not kernels.is_gaussian:
        raise UnsupportedSamplingError("target sampling requires the gaussian family")
    p = kernels.params
    d = kernels.d
    x, y = _vec(x, d), _vec(y, d)
    mid = 0.5 * (x + y)
    a, _ = _taper_reduced(sigma, p.s2, d)
    return mid / a, p.s2 / math.sqrt(a)


def jump_weight_integral(x, kernels: KernelSet, sigma: float = 0.0) -> float:
    """Integral over targets y of taper(y) c2(x - y), with no repulsion.

    Used as the free-jump loss rate and as a quadrature cross-check anchor.
    """
    if kernels.is_gaussian:
        p = kernels.params
        d = kernels.d
        xv = _vec(x, d)
        if sigma == 0.0:
            return float(p.kappa2) if xv.ndim == 1 else np.full(xv.shape[:-1], p.kappa2)
        a, amp = _taper_reduced(sigma, p.s3, d)
        xsq = np.sum(xv * xv, axis=-1)
        out = p.kappa2 * amp * np.exp(-sigma * xsq / a)
        return float(out) if np.ndim(out) == 0 else out
    if kernels.d != 1:
        raise KernelIntegrationError("custom jump integrals are implemented for d=1 only")
    lo, hi = kernels.integration_box
    xf = float(np.asarray(x).reshape(-1)[0])
    return _quad_1d(
        lambda yy: float(gaussian_taper(yy, sigma)) * float(kernels.c2(xf - yy)),
        lo,
        hi,
        "jump weight",
    )


def total_coalescence_rate(points, kernels: KernelSet, sigma: float = 0.0) -> float:
    """Sum of taper-weighted pair rates over all unordered pairs of points.

    Zero for fewer than two points; bounded by c1_max * n(n-1)/2.
    """
    pts = _vec(points, kernels.d)
    pts = pts.reshape(-1, kernels.d)
    n = pts.shape[0]
    if n < 2:
        return 0.0
    iu, ju = np.triu_indices(n, k=1)
    if kernels.is_gaussian:
        rates = coalescence_rate(pts[iu], pts[ju], kernels, sigma)
        return float(np.sum(rates))
    return float(sum(coalescence_rate(pts[i], pts[j], kernels, sigma) for i, j in zip(iu, ju)))
