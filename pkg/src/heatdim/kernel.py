"""Heat kernel of d/dt - d^2/dx^2 on the circle [-1, 1) and its integrals.

Two representations of the kernel are provided, the sum of Gaussian
images and the cosine (theta) series; they agree by Poisson summation
and :func:`heat_kernel` picks whichever converges faster for the given
time.  Every second-moment quantity of the additive solution reduces to
the function

    F(tau, d) = sum_{n >= 1} cos(pi n d) exp(-pi^2 n^2 tau) / (2 pi^2 n^2),

which :func:`theta_tail` evaluates to near machine precision for all
``tau >= 0``: directly for large ``tau`` and, for small ``tau``, through
the closed form of ``F(0, d)`` minus the time integral of the kernel
written with images.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate
from scipy.special import erfc

from .errors import BoundViolation, QuadratureFailure, TruncationFailure
from .torus import torus_dist

PI2 = math.pi**2
# below this time the image sums converge faster than the cosine series
REGIME_SPLIT = 1.0 / PI2


@dataclass(frozen=True)
class SeriesTruncation:
    abs_tol: float = 1e-13
    max_terms: int = 100_000


@dataclass(frozen=True)
class SeriesInfo:
    terms_used: int
    tail_bound: float


DEFAULT_TRUNC = SeriesTruncation()


def _trunc(trunc):
    return DEFAULT_TRUNC if trunc is None else trunc


def _grow_until(bound, start: int, trunc: SeriesTruncation, what: str) -> tuple[int, float]:
    k = min(max(1, start), trunc.max_terms)
    b = bound(k)
    while b > trunc.abs_tol:
        if k >= trunc.max_terms:
            raise TruncationFailure(f"{what}: tail bound {b:.3e} > {trunc.abs_tol:.1e} after {k} terms")
        k = min(trunc.max_terms, k + max(1, k // 4))
        b = bound(k)
    return k, b


def _image_terms(r_max: float, trunc: SeriesTruncation, scale: float) -> tuple[int, float]:
    """Images ``|m| <= K`` with a geometric majorant of the rest below tol.

    ``scale`` multiplies ``exp(-(2K-1)^2 / (4 r))``, the size of the
    first omitted image term.
    """

    def bound(k):
        x = 2 * k + 1
        ratio = math.exp(-(x + 1) / r_max)
        return 2.0 * scale * math.exp(-(x * x) / (4.0 * r_max)) / (1.0 - ratio)

    start = int(math.sqrt(r_max * 4.0 * 40.0) / 2.0)
    return _grow_until(bound, start, trunc, "image sum")


def kernel_image_sum(r, a, b, trunc: SeriesTruncation | None = None, full_output: bool = False):
    """``G_r(a, b)`` as a sum of Gaussian images ``phi_r(a - b + 2n)``."""
    trunc = _trunc(trunc)
    r = np.asarray(r, dtype=float)
    if np.any(r <= 0):
        raise ValueError("kernel time must be positive")
    d = torus_dist(a, b)
    r_max = float(np.max(r))
    k, tail = _image_terms(r_max, trunc, 1.0 / math.sqrt(4.0 * math.pi * float(np.min(r))))
    m = np.arange(-k, k + 1, dtype=float)
    x = np.expand_dims(d, -1) + 2.0 * m
    rr = np.expand_dims(r, -1)
    val = np.sum(np.exp(-(x * x) / (4.0 * rr)), axis=-1) / np.sqrt(4.0 * math.pi * r)
    val = val if np.ndim(val) else float(val)
    return (val, SeriesInfo(2 * k + 1, tail)) if full_output else val


def _cosine_terms(c_min: float, trunc: SeriesTruncation, weight_power: int) -> tuple[int, float]:
    """Number of terms ``N`` such that ``sum_{n>N} exp(-c n^2) / n^p`` is below tol."""

    def bound(n):
        m = n + 1
        head = math.exp(-c_min * m * m)
        integral = math.sqrt(math.pi) / (2.0 * math.sqrt(c_min)) * erfc(m * math.sqrt(c_min))
        return (head + integral) / m**weight_power

    start = int(math.sqrt(max(1.0, 30.0 / c_min)))
    return _grow_until(bound, start, trunc, "cosine series")


def kernel_fourier(r, a, b, trunc: SeriesTruncation | None = None, full_output: bool = False):
    """``G_r(a, b) = 1/2 + sum_{n>=1} cos(pi n (a - b)) exp(-pi^2 n^2 r)``."""
    trunc = _trunc(trunc)
    r = np.asarray(r, dtype=float)
    if np.any(r <= 0):
        raise ValueError("kernel time must be positive")
    d = torus_dist(a, b)
    n_terms, tail = _cosine_terms(PI2 * float(np.min(r)), trunc, 0)
    n = np.arange(1, n_terms + 1, dtype=float)
    dd = np.expand_dims(d, -1)
    rr = np.expand_dims(r, -1)
    val = 0.5 + np.sum(np.cos(math.pi * n * dd) * np.exp(-PI2 * n * n * rr), axis=-1)
    val = val if np.ndim(val) else float(val)
    return (val, SeriesInfo(n_terms, tail)) if full_output else val


def heat_kernel(r, a, b, trunc: SeriesTruncation | None = None):
    """Kernel with the representation chosen by ``r`` versus ``1/pi^2``."""
    r = np.asarray(r, dtype=float)
    a, b = np.broadcast_arrays(np.asarray(a, dtype=float), np.asarray(b, dtype=float))
    r, a, b = np.broadcast_arrays(r, a, b)
    out = np.empty(r.shape)
    small = r < REGIME_SPLIT
    if np.any(small):
        out[small] = kernel_image_sum(r[small], a[small], b[small], trunc)
    if np.any(~small):
        out[~small] = kernel_fourier(r[~small], a[~small], b[~small], trunc)
    return out if out.ndim else float(out)


def _integrated_image(tau, x):
    """``int_0^tau exp(-x^2/(4s)) / sqrt(4 pi s) ds`` in closed form."""
    ax = np.abs(x)
    return np.sqrt(tau / math.pi) * np.exp(-(x * x) / (4.0 * tau)) - 0.5 * ax * erfc(ax / (2.0 * np.sqrt(tau)))


def theta_tail(tau, d, trunc: SeriesTruncation | None = None):
    """``F(tau, d) = sum_{n>=1} cos(pi n d) exp(-pi^2 n^2 tau) / (2 pi^2 n^2)``.

    ``d`` is a circle distance in ``[0, 1]`` (any real is reduced first).
    """
    trunc = _trunc(trunc)
    tau, d = np.broadcast_arrays(np.asarray(tau, dtype=float), torus_dist(d, 0.0))
    if np.any(tau < 0):
        raise ValueError("tau must be nonnegative")
    out = np.empty(tau.shape)
    big = tau >= REGIME_SPLIT
    if np.any(big):
        tb, db = tau[big], d[big]
        n_terms, _ = _cosine_terms(PI2 * float(np.min(tb)), trunc, 2)
        n = np.arange(1, n_terms + 1, dtype=float)
        terms = np.cos(math.pi * n * db[:, None]) * np.exp(-PI2 * n * n * tb[:, None]) / (2.0 * PI2 * n * n)
        out[big] = terms.sum(axis=-1)
    small = ~big
    if np.any(small):
        ts, ds = tau[small], d[small]
        # sum_{n>=1} cos(n theta)/n^2 = pi^2/6 - pi theta/2 + theta^2/4 on [0, 2 pi]
        at_zero = 1.0 / 12.0 - ds / 4.0 + ds * ds / 8.0
        pos = ts > 0
        integ = np.zeros_like(ts)
        if np.any(pos):
            tp = ts[pos]
            k, _ = _image_terms(float(np.max(tp)), trunc, math.sqrt(float(np.max(tp)) / math.pi))
            m = np.arange(-k, k + 1, dtype=float)
            x = ds[pos][:, None] + 2.0 * m
            integ[pos] = _integrated_image(tp[:, None], x).sum(axis=-1)
        # d/dtau F = -(G_tau(d) - 1/2) / 2
        out[small] = at_zero - 0.5 * (integ - 0.5 * ts)
    return out if out.ndim else float(out)


def _truncated_sum(tau, d, n_modes: int):
    n = np.arange(1, n_modes + 1, dtype=float)
    tau, d = np.broadcast_arrays(np.asarray(tau, dtype=float), torus_dist(d, 0.0))
    terms = np.cos(math.pi * n * d[..., None]) * np.exp(-PI2 * n * n * tau[..., None]) / (2.0 * PI2 * n * n)
    out = terms.sum(axis=-1)
    return out if out.ndim else float(out)


def _F(tau, d, trunc, n_modes):
    return theta_tail(tau, d, trunc) if n_modes is None else _truncated_sum(tau, d, n_modes)


def variance_of_H(t, trunc: SeriesTruncation | None = None, n_modes: int | None = None):
    """Variance of one coordinate of the additive solution at time ``t``.

    Equals ``t/2 + sum_{n>=1} (1 - exp(-2 pi^2 n^2 t)) / (2 pi^2 n^2)``;
    with ``n_modes`` the sum stops at that frequency (the law of the
    truncated spectral sampler).
    """
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("t must be nonnegative")
    val = 0.5 * t + _F(0.0 * t, 0.0, trunc, n_modes) - _F(2.0 * t, 0.0, trunc, n_modes)
    return val if np.ndim(val) else float(val)


def covariance_of_H(t, x, s, y, trunc: SeriesTruncation | None = None, n_modes: int | None = None):
    """``Cov(H_1(t, x), H_1(s, y))`` for the additive solution."""
    t = np.asarray(t, dtype=float)
    s = np.asarray(s, dtype=float)
    if np.any(t < 0) or np.any(s < 0):
        raise ValueError("times must be nonnegative")
    d = torus_dist(x, y)
    val = 0.5 * np.minimum(t, s) + _F(np.abs(t - s), d, trunc, n_modes) - _F(t + s, d, trunc, n_modes)
    return val if np.ndim(val) else float(val)


def spatial_increment_energy(t, x, z, trunc: SeriesTruncation | None = None, n_modes: int | None = None):
    """``int_0^t int [G_s(x,y) - G_s(z,y)]^2 dy ds = E|H_1(t,x) - H_1(t,z)|^2``."""
    t = np.asarray(t, dtype=float)
    if np.any(t <= 0):
        raise ValueError("t must be positive")
    d = torus_dist(x, z)
    zero = np.zeros_like(t)
    val = 2.0 * (_F(zero, 0.0, trunc, n_modes) - _F(zero, d, trunc, n_modes)) - 2.0 * (
        _F(2.0 * t, 0.0, trunc, n_modes) - _F(2.0 * t, d, trunc, n_modes)
    )
    val = np.maximum(val, 0.0)
    return val if np.ndim(val) else float(val)


def temporal_increment_energy(r, t, trunc: SeriesTruncation | None = None, n_modes: int | None = None):
    """``int_0^r int [G_{t-s}(x,y) - G_{r-s}(x,y)]^2 dy ds`` for ``0 < r <= t``."""
    r = np.asarray(r, dtype=float)
    t = np.asarray(t, dtype=float)
    if np.any(r <= 0) or np.any(t < r):
        raise ValueError("need 0 < r <= t")
    tau = t - r

    def f(arg):
        return _F(arg, 0.0, trunc, n_modes)

    val = f(0.0 * tau) - 2.0 * f(tau) + f(2.0 * tau) - f(2.0 * r) + 2.0 * f(2.0 * r + tau) - f(2.0 * r + 2.0 * tau)
    val = np.maximum(val, 0.0)
    return val if np.ndim(val) else float(val)


def temporal_increment_variance(r, t, trunc: SeriesTruncation | None = None, n_modes: int | None = None):
    """``E|H_1(t,x) - H_1(r,x)|^2``: the energy above plus the fresh noise on ``(r, t]``."""
    return temporal_increment_energy(r, t, trunc, n_modes) + variance_of_H(np.asarray(t) - np.asarray(r), trunc, n_modes)


@dataclass(frozen=True)
class KernelSupRow:
    t: float
    sup: float
    lower: float
    upper: float
    attained_at_zero: bool


def kernel_sup_bounds_check(t_grid, n_dist: int = 257, trunc: SeriesTruncation | None = None) -> list[KernelSupRow]:
    """Check ``max(t^-1/2, 1)/4 <= sup G_t <= 2 max(t^-1/2, 1)`` on ``t_grid``.

    The supremum is located on a distance grid; it must sit at distance 0.

    Raises
    ------
    BoundViolation
        For the first ``t`` where a bound fails or the maximum is off-diagonal.
    """
    dists = np.linspace(0.0, 1.0, n_dist)
    rows = []
    for t in np.asarray(t_grid, dtype=float):
        vals = heat_kernel(np.full_like(dists, t), dists, 0.0, trunc)
        scale = max(t**-0.5, 1.0)
        sup = float(vals.max())
        at_zero = bool(np.all(np.diff(vals) <= 1e-14 * sup))
        row = KernelSupRow(float(t), sup, 0.25 * scale, 2.0 * scale, at_zero)
        if not (row.lower <= sup <= row.upper) or not at_zero:
            raise BoundViolation(f"sup bound fails at t={t:g}: sup={sup:.6g}, bounds [{row.lower:.4g}, {row.upper:.4g}]")
        rows.append(row)
    return rows


def _quad(f, a, b, **kw):
    val, err, *rest = integrate.quad(f, a, b, full_output=1, **kw)
    # a 4-tuple means QUADPACK flagged a problem; accept it only if the error is still small
    tol = max(kw.get("epsabs", 1.49e-8), kw.get("epsrel", 1.49e-8) * abs(val))
    if len(rest) >= 2 and err > 100.0 * tol:
        raise QuadratureFailure(f"{rest[1]} (error estimate {err:.2e})")
    return val, err


def variance_of_H_quadrature(t: float, epsabs: float = 1e-12, epsrel: float = 1e-12) -> float:
    """``int_0^t G_{2s}(0,0) ds`` by adaptive quadrature of the image sum.

    Substituting ``s = w^2`` removes the ``s^{-1/2}`` singularity.
    """
    if t < 0:
        raise ValueError("t must be nonnegative")
    if t == 0:
        return 0.0
    tol = SeriesTruncation(abs_tol=1e-15)

    def integrand(w):
        return 0.0 if w == 0.0 else 2.0 * w * kernel_image_sum(2.0 * w * w, 0.0, 0.0, tol)

    # at w=0 the integrand tends to 2/sqrt(8 pi)
    def safe(w):
        return 2.0 / math.sqrt(8.0 * math.pi) if w == 0.0 else integrand(w)

    val, _ = _quad(safe, 0.0, math.sqrt(t), epsabs=epsabs, epsrel=epsrel, limit=400)
    return val


def parabolic_weight_integral(t: float, q: float, epsabs: float = 1e-10, epsrel: float = 1e-8) -> float:
    """``int_0^t ds int dy G_s(0,y)^2 ((t-s)^{q/2} + dist(y,0)^q)`` by nested quadrature."""
    if t <= 0:
        raise ValueError("t must be positive")
    if not (0.0 < q <= 1.0):
        raise ValueError("q must lie in (0, 1]")

    # int_T G_s(0,y)^2 dy = G_{2s}(0,0); s = w^2
    def time_part(w):
        if w == 0.0:
            return 2.0 / math.sqrt(8.0 * math.pi) * t ** (q / 2.0)
        return 2.0 * w * heat_kernel(2.0 * w * w, 0.0, 0.0) * max(t - w * w, 0.0) ** (q / 2.0)

    first, _ = _quad(time_part, 0.0, math.sqrt(t), epsabs=epsabs, epsrel=epsrel, limit=400)

    def inner(w):
        if w == 0.0:
            return 0.0
        s = w * w
        width = min(1.0, 12.0 * w)

        def g(y):
            return heat_kernel(s, y, 0.0) ** 2 * y**q

        near, _ = _quad(g, 0.0, width, epsabs=epsabs, epsrel=epsrel, limit=200)
        far = 0.0
        if width < 1.0:
            far, _ = _quad(g, width, 1.0, epsabs=epsabs, epsrel=epsrel, limit=200)
        return 2.0 * w * 2.0 * (near + far)

    second, _ = _quad(inner, 0.0, math.sqrt(t), epsabs=epsabs, epsrel=epsrel, limit=400)
    return first + second


def covariance_decay_constant(t_grid, d_grid) -> float:
    """Largest ``Cov(H(t,x), H(t,z)) / (max(sqrt t, t) exp(-d^2/(8t)))`` on a grid."""
    t, d = np.meshgrid(np.asarray(t_grid, dtype=float), np.asarray(d_grid, dtype=float), indexing="ij")
    cov = covariance_of_H(t, 0.0, t, d)
    envelope = np.maximum(np.sqrt(t), t) * np.exp(-(d * d) / (8.0 * t))
    return float(np.max(cov / envelope))
