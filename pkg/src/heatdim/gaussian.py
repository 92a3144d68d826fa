"""Exact-in-law sampling of the additive solution H and its conditional variances.

In the orthonormal basis ``1/sqrt(2), cos(pi n x), sin(pi n x)`` of
L^2 on the circle, each coordinate of H is

    H(t, x) = A_0(t)/sqrt(2) + sum_n [A_n(t) cos(pi n x) + B_n(t) sin(pi n x)],

where ``A_0`` is a standard Brownian motion and ``A_n``, ``B_n`` are
independent Ornstein-Uhlenbeck processes with rate ``pi^2 n^2`` started
at zero.  Keeping the first ``n_modes`` frequencies gives a field whose
law at any finite set of points is known exactly, so transitions are
sampled without time-discretisation error.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy import fft as sfft
from scipy import signal
from scipy.stats import norm

from . import rng as rngmod
from .errors import DegenerateGramWarning
from .kernel import PI2, SeriesTruncation, covariance_of_H, variance_of_H
from .torus import SpaceTimePoint, torus_dist, wrap

SQRT_HALF = math.sqrt(0.5)


def default_n_modes(times) -> int:
    """``max(64, ceil(8 / sqrt(t_min)))`` over the positive sampled times."""
    t = np.asarray(times, dtype=float)
    t = t[t > 0]
    if t.size == 0:
        return 64
    return max(64, math.ceil(8.0 / math.sqrt(float(t.min()))))


def truncation_tail_bound(n_modes: int) -> float:
    """Upper bound ``1/(2 pi^2 N)`` on the variance dropped by truncating at N."""
    return 1.0 / (2.0 * PI2 * n_modes)


def mode_decay(n_modes: int, dt: float) -> np.ndarray:
    n = np.arange(n_modes + 1, dtype=float)
    return np.exp(-PI2 * n * n * dt)


def mode_step_variance(n_modes: int, dt: float) -> np.ndarray:
    """Variance added to each mode over ``dt``: ``dt`` for n=0, OU variance otherwise."""
    n = np.arange(n_modes + 1, dtype=float)
    var = np.empty(n_modes + 1)
    var[0] = dt
    lam = PI2 * n[1:] ** 2
    var[1:] = -np.expm1(-2.0 * lam * dt) / (2.0 * lam)
    return var


@dataclass
class SpectralState:
    """Mode coefficients of H for ``p`` independent coordinates.

    ``cos_coeffs`` has shape ``(..., p, n_modes + 1)`` and ``sin_coeffs``
    ``(..., p, n_modes)``; leading axes index replicas.
    """

    n_modes: int
    p: int
    t: float = 0.0
    cos_coeffs: np.ndarray | None = None
    sin_coeffs: np.ndarray | None = None
    rng: np.random.Generator | None = field(default=None, repr=False)
    batch_shape: tuple[int, ...] = ()

    def __post_init__(self):
        if self.cos_coeffs is None:
            self.cos_coeffs = np.zeros(self.batch_shape + (self.p, self.n_modes + 1))
        if self.sin_coeffs is None:
            self.sin_coeffs = np.zeros(self.batch_shape + (self.p, self.n_modes))
        self.batch_shape = self.cos_coeffs.shape[:-2]

    @classmethod
    def zero(cls, n_modes: int, p: int, seed: int = 0, replica: int = 0, batch_shape=()):
        return cls(n_modes, p, rng=rngmod.stream(seed, rngmod.ROLE_FIELD, replica), batch_shape=tuple(batch_shape))


def evolve(state: SpectralState, dt: float, noise: np.ndarray | None = None) -> SpectralState:
    """Advance every mode by the exact OU (Brownian for n=0) transition over ``dt``.

    ``noise`` optionally supplies the standard normals, shaped
    ``batch + (p, 2 n_modes + 1)`` in the order ``A_0..A_N, B_1..B_N``;
    otherwise they are drawn from ``state.rng``.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    n = state.n_modes
    shape = state.batch_shape + (state.p, 2 * n + 1)
    if noise is None:
        if state.rng is None:
            raise ValueError("state has no generator and no noise was supplied")
        noise = state.rng.standard_normal(shape)
    decay = mode_decay(n, dt)
    std = np.sqrt(mode_step_variance(n, dt))
    cos = decay * state.cos_coeffs + std * noise[..., : n + 1]
    sin = decay[1:] * state.sin_coeffs + std[1:] * noise[..., n + 1 :]
    return replace(state, t=state.t + dt, cos_coeffs=cos, sin_coeffs=sin)


def _uniform_grid_size(sites: np.ndarray) -> int | None:
    """``J`` if ``sites`` is exactly ``-1 + 2 j / J``, else None."""
    m = sites.size
    if m < 2:
        return None
    ref = -1.0 + 2.0 * np.arange(m) / m
    return m if np.allclose(sites, ref, rtol=0.0, atol=1e-12) else None


def uniform_sites(n_sites: int) -> np.ndarray:
    return -1.0 + 2.0 * np.arange(n_sites) / n_sites


def render_uniform(cos_coeffs: np.ndarray, sin_coeffs: np.ndarray, n_sites: int, dtype=np.float64) -> np.ndarray:
    """Field values at ``-1 + 2j/J`` for ``j < J`` via one inverse real FFT.

    Frequencies at or above ``J/2`` are folded onto the grid's aliases,
    so the result is exact for any ``n_modes``.  Returns ``batch + (J, p)``.
    """
    n_modes = cos_coeffs.shape[-1] - 1
    half = n_sites // 2
    ctype = np.complex64 if np.dtype(dtype) == np.float32 else np.complex128
    spec = np.zeros(cos_coeffs.shape[:-1] + (half + 1,), dtype=np.complex128)
    if n_modes <= half:
        spec[..., 0] = cos_coeffs[..., 0] * SQRT_HALF
        spec.real[..., 1 : n_modes + 1] = 0.5 * cos_coeffs[..., 1:]
        spec.imag[..., 1 : n_modes + 1] = -0.5 * sin_coeffs
        if n_modes == half and n_sites % 2 == 0:
            spec[..., half] *= 2.0
        spec[..., 1::2] *= -1.0  # grid starts at x=-1
    else:
        sign = np.where(np.arange(n_modes + 1) % 2 == 0, 1.0, -1.0)
        c = np.empty(cos_coeffs.shape, dtype=np.complex128)
        c[..., 0] = cos_coeffs[..., 0] * SQRT_HALF
        c[..., 1:] = cos_coeffs[..., 1:] - 1j * sin_coeffs
        c *= sign
        k = np.arange(n_modes + 1) % n_sites
        flip = k > half
        k_eff = np.where(flip, n_sites - k, k)
        vals = np.where(flip, np.conj(c), c)
        weight = np.where((k_eff == 0) | ((n_sites % 2 == 0) & (k_eff == half)), 1.0, 0.5)
        # accumulate aliases; only the real parts of the DC and Nyquist bins matter
        flat = spec.reshape(-1, half + 1)
        src = (vals * weight).reshape(-1, n_modes + 1)
        for row in range(flat.shape[0]):
            np.add.at(flat[row], k_eff, src[row])
    if n_sites % 2 == 0:
        spec[..., half] = spec[..., half].real
    spec[..., 0] = spec[..., 0].real
    spec *= n_sites
    vals = sfft.irfft(spec.astype(ctype, copy=False), n=n_sites, axis=-1)
    return np.moveaxis(vals.astype(dtype, copy=False), -1, -2)


def render_points(cos_coeffs: np.ndarray, sin_coeffs: np.ndarray, sites, chunk: int = 4096) -> np.ndarray:
    """Field values at arbitrary sites by direct summation over modes."""
    x = np.asarray(sites, dtype=float)
    n_modes = cos_coeffs.shape[-1] - 1
    out = np.broadcast_to(cos_coeffs[..., None, :, 0] * SQRT_HALF, cos_coeffs.shape[:-2] + (x.size, cos_coeffs.shape[-2])).copy()
    for start in range(1, n_modes + 1, chunk):
        stop = min(n_modes + 1, start + chunk)
        phase = math.pi * np.outer(x, np.arange(start, stop, dtype=float))
        out += np.cos(phase) @ np.swapaxes(cos_coeffs[..., start:stop], -1, -2)
        out += np.sin(phase) @ np.swapaxes(sin_coeffs[..., start - 1 : stop - 1], -1, -2)
    return out


def render(state: SpectralState, sites) -> np.ndarray:
    """``H_i(t, x)`` at ``sites``; shape ``batch + (n_sites, p)``.

    Uniform grids starting at -1 use an FFT, other site sets a direct sum.
    """
    x = wrap(np.atleast_1d(np.asarray(sites, dtype=float)))
    j = _uniform_grid_size(x)
    if j is not None and j > 8:
        return render_uniform(state.cos_coeffs, state.sin_coeffs, j)
    return render_points(state.cos_coeffs, state.sin_coeffs, x)


@dataclass
class FieldSample:
    times: np.ndarray
    sites: np.ndarray
    values: np.ndarray  # (time, site, p)
    seed: int
    n_modes: int
    replica: int = 0

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.sites = np.asarray(self.sites, dtype=float)
        self.values = np.asarray(self.values)
        expected = (self.times.size, self.sites.size)
        if self.values.ndim != 3 or self.values.shape[:2] != expected:
            raise ValueError(f"values shape {self.values.shape} does not match {expected} x p")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("FieldSample values must be finite")

    @property
    def p(self) -> int:
        return self.values.shape[-1]


def _check_times(times) -> np.ndarray:
    t = np.asarray(times, dtype=float)
    if t.ndim != 1 or t.size == 0:
        raise ValueError("times must be a nonempty 1-d sequence")
    if t[0] < 0 or np.any(np.diff(t) < 0):
        raise ValueError("times must be sorted ascending and start at or after 0")
    return t


def _sample(times, sites, p, n_modes, seed, replicas) -> np.ndarray:
    t = _check_times(times)
    x = wrap(np.atleast_1d(np.asarray(sites, dtype=float)))
    noise = np.stack(
        [rngmod.stream(seed, rngmod.ROLE_FIELD, r).standard_normal((t.size, p, 2 * n_modes + 1)) for r in replicas]
    )
    state = SpectralState(n_modes, p, batch_shape=(len(replicas),))
    out = np.empty((len(replicas), t.size, x.size, p))
    prev = 0.0
    for k, tk in enumerate(t):
        if tk > prev:
            state = evolve(state, tk - prev, noise[:, k])
            prev = tk
        out[:, k] = render(state, x)
    return out


def sample_grid(times, sites, p: int, n_modes: int | None = None, seed: int = 0, replica: int = 0) -> FieldSample:
    """Joint exact sample of the ``n_modes``-truncated H on ``times x sites``.

    Deterministic given ``(seed, replica)``.
    """
    n_modes = default_n_modes(times) if n_modes is None else int(n_modes)
    values = _sample(times, sites, p, n_modes, seed, [replica])[0]
    return FieldSample(np.asarray(times, dtype=float), wrap(np.atleast_1d(np.asarray(sites, dtype=float))), values, seed, n_modes, replica)


def sample_ensemble(times, sites, p: int, n_modes: int, seed: int, n_replicas: int, first_replica: int = 0,
                    batch: int = 2048) -> np.ndarray:
    """Replicas ``first_replica ..`` of :func:`sample_grid`, stacked as ``(R, time, site, p)``.

    Replica ``r`` is bit-identical to ``sample_grid(..., replica=r).values``.
    """
    chunks = []
    for start in range(first_replica, first_replica + n_replicas, batch):
        stop = min(first_replica + n_replicas, start + batch)
        chunks.append(_sample(times, sites, p, n_modes, seed, list(range(start, stop))))
    return np.concatenate(chunks, axis=0)


def sample_time_series(times, x: float, p: int, n_modes: int, seed: int, replica: int = 0,
                       mode_chunk: int = 16, dtype=np.float64) -> np.ndarray:
    """Exact sample of ``t -> H(t, x)`` on a long, equally spaced time grid.

    At a fixed site ``A_n cos + B_n sin`` is itself an OU process with
    the law of ``A_n``, so one recursion per mode suffices; modes are
    processed in chunks with a linear filter to bound memory.  ``times``
    must be ``t_0 < t_0 + dt < ...`` with constant ``dt``.  Returns
    ``(len(times), p)``.
    """
    t = _check_times(times)
    if t.size > 1:
        steps = np.diff(t)
        dt = float(steps.mean())
        if not np.allclose(steps, dt, rtol=1e-9, atol=0.0):
            raise ValueError("sample_time_series needs equally spaced times")
    else:
        dt = 1.0
    t0 = float(t[0])
    del x  # the law at a single site does not depend on it
    out = np.zeros((t.size, p))
    var0 = np.concatenate([[t0], mode_step_variance(n_modes, t0)[1:]]) if t0 > 0 else np.zeros(n_modes + 1)
    decay = mode_decay(n_modes, dt)
    step_std = np.sqrt(mode_step_variance(n_modes, dt))
    weight = np.ones(n_modes + 1)
    weight[0] = SQRT_HALF
    for i in range(p):
        for c, start in enumerate(range(0, n_modes + 1, mode_chunk)):
            stop = min(n_modes + 1, start + mode_chunk)
            g = rngmod.stream(seed, rngmod.ROLE_FIELD, replica, i, c)
            z = g.standard_normal((stop - start, t.size))
            acc = np.zeros(t.size)
            for row, n in enumerate(range(start, stop)):
                x0 = math.sqrt(var0[n]) * z[row, 0]
                if t.size > 1:
                    drive = step_std[n] * z[row, 1:]
                    y, _ = signal.lfilter([1.0], [1.0, -decay[n]], drive, zi=[decay[n] * x0])
                    acc[1:] += weight[n] * y
                acc[0] += weight[n] * x0
            out[:, i] += acc
    return out.astype(dtype, copy=False)


@dataclass
class ConditioningProblem:
    target: SpaceTimePoint
    conditioners: Sequence[SpaceTimePoint] = ()

    def arrays(self):
        ts = np.array([c.t for c in self.conditioners], dtype=float)
        xs = np.array([c.x.coord for c in self.conditioners], dtype=float)
        return self.target.t, self.target.x.coord, ts, xs


@dataclass(frozen=True)
class ConditionalVariance:
    value: float
    degenerate: bool
    n_clipped: int


def conditional_variance_arrays(t, x, ts, xs, trunc: SeriesTruncation | None = None,
                                n_modes: int | None = None, clip: float = 1e-12) -> ConditionalVariance:
    """``Var(H_1(t,x) | H_1(ts_j, xs_j))`` via an eigenvalue-clipped pseudo-inverse.

    Conditioners are sorted before assembly so the result does not depend
    on their order.  Eigenvalues of the Gram matrix below ``clip * trace``
    are dropped and the result is flagged degenerate.
    """
    if t <= 0:
        raise ValueError("target time must be positive")
    ts = np.asarray(ts, dtype=float).ravel()
    xs = wrap(np.asarray(xs, dtype=float).ravel())
    v0 = float(variance_of_H(t, trunc, n_modes))
    if ts.size == 0:
        return ConditionalVariance(v0, False, 0)
    order = np.lexsort((xs, ts))
    ts, xs = ts[order], xs[order]
    gram = covariance_of_H(ts[:, None], xs[:, None], ts[None, :], xs[None, :], trunc, n_modes)
    gram = 0.5 * (gram + gram.T)
    cross = np.atleast_1d(covariance_of_H(t, x, ts, xs, trunc, n_modes))
    w, vecs = np.linalg.eigh(gram)
    keep = w > clip * max(float(np.trace(gram)), np.finfo(float).tiny)
    proj = vecs[:, keep].T @ cross
    value = v0 - float(np.sum(proj * proj / w[keep]))
    n_clipped = int(np.sum(~keep))
    return ConditionalVariance(max(value, 0.0), n_clipped > 0, n_clipped)


def conditional_variance(problem: ConditioningProblem, trunc: SeriesTruncation | None = None,
                         n_modes: int | None = None, full_output: bool = False):
    """Conditional variance of the target given the conditioners.

    With ``full_output`` the :class:`ConditionalVariance` record (value and
    degeneracy flag) is returned instead of the float.  A degenerate Gram
    matrix also emits :class:`DegenerateGramWarning`.
    """
    res = conditional_variance_arrays(*problem.arrays(), trunc=trunc, n_modes=n_modes)
    if res.degenerate:
        warnings.warn(f"{res.n_clipped} Gram eigenvalue(s) clipped", DegenerateGramWarning, stacklevel=2)
    return res if full_output else res.value


def slnd_distance(t, x, ts, xs) -> float:
    """``min(sqrt t, min_j (|t - t_j|^{1/2} + dist(x, x_j)))``."""
    ts = np.asarray(ts, dtype=float)
    base = math.sqrt(t)
    if ts.size == 0:
        return base
    d = np.sqrt(np.abs(t - ts)) + torus_dist(x, np.asarray(xs, dtype=float))
    return float(min(base, np.min(d)))


@dataclass
class SLNDReport:
    ratios: np.ndarray
    m: np.ndarray
    target_times: np.ndarray
    n_skipped: int
    n_degenerate: int
    n_modes: int | None

    @property
    def min_ratio(self) -> float:
        return float(self.ratios.min())

    @property
    def max_ratio(self) -> float:
        return float(self.ratios.max())


def random_configurations(T: float, m_max: int, n_configs: int, seed: int):
    """Random targets and conditioner sets with times in ``[T/10, T]``."""
    g = rngmod.stream(seed, rngmod.ROLE_CONFIGS)
    configs = []
    for _ in range(n_configs):
        m = int(g.integers(0, m_max + 1))
        t = g.uniform(T / 10.0, T)
        x = g.uniform(-1.0, 1.0)
        ts = g.uniform(T / 10.0, T, size=m)
        xs = g.uniform(-1.0, 1.0, size=m)
        configs.append((t, x, ts, xs))
    return configs


def slnd_ratio_scan(T: float = 1.0, m_max: int = 8, n_configs: int = 200, seed: int = 0,
                    n_modes: int | None = None, configs=None) -> SLNDReport:
    """Ratio of conditional variance to the SLND distance over random configurations.

    Configurations with a conditioner exactly at the target are skipped.
    """
    if configs is None:
        configs = random_configurations(T, m_max, n_configs, seed)
    ratios, ms, targets = [], [], []
    skipped = degenerate = 0
    for t, x, ts, xs in configs:
        dist = slnd_distance(t, x, ts, xs)
        if dist == 0.0:
            skipped += 1
            continue
        cv = conditional_variance_arrays(t, x, ts, xs, n_modes=n_modes)
        degenerate += cv.degenerate
        ratios.append(cv.value / dist)
        ms.append(len(ts))
        targets.append(t)
    return SLNDReport(np.array(ratios), np.array(ms), np.array(targets), skipped, degenerate, n_modes)


@dataclass
class SmallBallReport:
    probability: float
    std_error: float
    bound: float
    conditional_variances: np.ndarray
    n_mc: int

    @property
    def passed(self) -> bool:
        return self.probability <= self.bound + 3.0 * self.std_error


def successive_conditional_variances(times, xs, trunc: SeriesTruncation | None = None) -> np.ndarray:
    """``Var(H_1(s_i) | H_1(s_1), ..., H_1(s_{i-1}))`` for each ``i`` in the given order."""
    t = np.asarray(times, dtype=float)
    x = np.asarray(xs, dtype=float)
    return np.array([conditional_variance_arrays(t[i], x[i], t[:i], x[:i], trunc).value for i in range(t.size)])


def small_ball_product_check(times, xs, eps: float, n_mc: int = 200_000, seed: int = 0,
                             chunk: int = 50_000) -> SmallBallReport:
    """Monte Carlo ``P{max_i |H_1(s_i)| <= eps}`` against the successive-conditioning bound.

    The bound is ``prod_i 2 eps / sqrt(2 pi condvar_i)``; points are taken
    in the order given, which should satisfy the greedy nearest-predecessor
    property.  Sampling uses the exact covariance.
    """
    from .torus import check_greedy_order

    t = np.asarray(times, dtype=float)
    x = wrap(np.asarray(xs, dtype=float))
    if not check_greedy_order(t, x, np.arange(t.size)):
        raise ValueError("points must be greedy-ordered (see torus.greedy_order)")
    cov = covariance_of_H(t[:, None], x[:, None], t[None, :], x[None, :])
    cov = 0.5 * (cov + cov.T)
    w, vecs = np.linalg.eigh(cov)
    root = vecs * np.sqrt(np.clip(w, 0.0, None))
    g = rngmod.stream(seed, rngmod.ROLE_MC)
    hits = 0
    for start in range(0, n_mc, chunk):
        m = min(chunk, n_mc - start)
        z = g.standard_normal((m, t.size)) @ root.T
        hits += int(np.sum(np.max(np.abs(z), axis=1) <= eps))
    prob = hits / n_mc
    se = math.sqrt(max(prob * (1.0 - prob), 1.0 / n_mc) / n_mc)
    condvars = successive_conditional_variances(t, x)
    bound = float(np.prod(2.0 * eps / np.sqrt(2.0 * math.pi * condvars)))
    return SmallBallReport(prob, se, bound, condvars, n_mc)


def exact_small_ball_single(t: float, eps: float) -> float:
    """``P{|H_1(t,x)| <= eps}`` from the Gaussian CDF."""
    sd = math.sqrt(variance_of_H(t))
    return float(norm.cdf(eps / sd) - norm.cdf(-eps / sd))
