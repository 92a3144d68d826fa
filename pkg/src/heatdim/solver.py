"""Semi-implicit spectral solver for du = u_xx dt + b(u) dt + sigma(u) dW on the circle.

One step of size ``dt`` on the uniform grid ``x_j = -1 + j h`` (``h = 2/J``) is

    u_hat <- exp(-pi^2 k^2 dt) * (u_hat + FFT(dt b(u) + sigma(u) dW)),

with ``dW`` i.i.d. ``N(0, dt/h)`` per site and coordinate, a discretisation
of space-time white noise.  The heat part is integrated exactly, so the
scheme is stable for any step; steps may be nonuniform (see
:func:`geometric_time_grid` and :func:`graded_time_grid`).

Also here: the radial truncation of the drift, the paper's
singular-value function ``lambda`` (squared smallest singular value), the
regularised diffusion ``sigma_{r,N}``, and the experiments comparing the
solution with its Gaussian linearisation.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from scipy import fft as sfft
from scipy import stats
from scipy.special import gammaln

from . import rng as rngmod
from .errors import BlowUp, EmptyBoundary, EmptyBoundaryWarning, ViolationFound
from .kernel import PI2, variance_of_H

Array = np.ndarray


# --------------------------------------------------------------------------- coefficients


@dataclass
class Coefficients:
    """Drift ``b: R^p -> R^p`` and diffusion ``sigma: R^p -> R^{p x p}``.

    Evaluators act on arrays of shape ``(..., p)`` and must be reentrant.
    When ``scalar_diffusion`` is set, ``sigma(v) = s(v) I`` and the solver
    skips the matrix product.  Lipschitz constants are declared by the
    caller (operator norm for ``sigma``); ``sup_*`` are ``inf`` when
    unbounded.
    """

    p: int
    drift: Callable[[Array], Array]
    diffusion: Callable[[Array], Array]
    lip_drift: float
    lip_diffusion: float
    sup_drift: float = math.inf
    sup_diffusion: float = math.inf
    scalar_diffusion: Callable[[Array], Array] | None = None
    name: str = ""

    def sigma_times(self, v: Array, dw: Array) -> Array:
        if self.scalar_diffusion is not None:
            return self.scalar_diffusion(v)[..., None] * dw
        return np.einsum("...ij,...j->...i", self.diffusion(v), dw)


def _scalar_identity(p, fn, **kw):
    def diffusion(v):
        s = fn(v)
        return s[..., None, None] * np.eye(p)

    return diffusion, fn


def make_coefficients(p: int, drift: str = "zero", diffusion: str = "identity", *,
                      drift_rate: float = 1.0, diffusion_scale: float = 1.0,
                      diffusion_amplitude: float = 0.5) -> Coefficients:
    """Named coefficient fixtures.

    drift: ``zero``, ``linear`` (``-rate v``), ``saturating`` (``-v/(1+|v|)``).
    diffusion: ``zero``, ``identity``, ``constant`` (``scale I``),
    ``sine`` (``(1 + amplitude sin v_1) I``), ``diag-v1`` (``diag(v_1, 1, ..)``).
    """
    if drift == "zero":
        b, lip_b, sup_b = (lambda v: np.zeros_like(v)), 0.0, 0.0
    elif drift == "linear":
        b, lip_b, sup_b = (lambda v: -drift_rate * v), abs(drift_rate), math.inf
    elif drift == "saturating":
        def b(v):
            return -v / (1.0 + np.linalg.norm(v, axis=-1, keepdims=True))

        lip_b, sup_b = 1.0, 1.0
    else:
        raise ValueError(f"unknown drift fixture {drift!r}")

    if diffusion == "zero":
        sig, scal = _scalar_identity(p, lambda v: np.zeros(v.shape[:-1]))
        lip_s, sup_s = 0.0, 0.0
    elif diffusion in ("identity", "constant"):
        c = 1.0 if diffusion == "identity" else float(diffusion_scale)
        sig, scal = _scalar_identity(p, lambda v: np.full(v.shape[:-1], c))
        lip_s, sup_s = 0.0, abs(c)
    elif diffusion == "sine":
        a = float(diffusion_amplitude)
        sig, scal = _scalar_identity(p, lambda v: 1.0 + a * np.sin(v[..., 0]))
        lip_s, sup_s = abs(a), 1.0 + abs(a)
    elif diffusion == "diag-v1":
        def sig(v):
            out = np.zeros(v.shape + (p,))
            idx = np.arange(p)
            out[..., idx, idx] = 1.0
            out[..., 0, 0] = v[..., 0]
            return out

        scal, lip_s, sup_s = None, 1.0, math.inf
    else:
        raise ValueError(f"unknown diffusion fixture {diffusion!r}")
    return Coefficients(p, b, sig, lip_b, lip_s, sup_b, sup_s, scal, name=f"{drift}/{diffusion}")


def _random_pairs(p: int, n_pairs: int, seed: int, scale: float, center=None):
    g = rngmod.stream(seed, rngmod.ROLE_PROBE)
    v = g.uniform(-scale, scale, size=(n_pairs, p))
    if center is not None:
        v += np.asarray(center, dtype=float)
    step = g.standard_normal((n_pairs, p)) * 10.0 ** g.uniform(-4.0, 0.0, size=(n_pairs, 1))
    return v, v + step


def operator_norm(m: Array) -> Array:
    return np.linalg.norm(m, ord=2, axis=(-2, -1))


@dataclass(frozen=True)
class LipschitzReport:
    max_ratio: float
    declared: float
    n_pairs: int

    @property
    def passed(self) -> bool:
        return self.max_ratio <= self.declared * (1.0 + 1e-6) + 1e-15


def lipschitz_quotients(fn: Callable[[Array], Array], p: int, n_pairs: int = 2000, seed: int = 0,
                        scale: float = 3.0, matrix: bool = False, center=None) -> float:
    v, w = _random_pairs(p, n_pairs, seed, scale, center)
    diff = fn(v) - fn(w)
    num = operator_norm(diff) if matrix else np.linalg.norm(diff, axis=-1)
    return float(np.max(num / np.linalg.norm(v - w, axis=-1)))


def validate_lipschitz(coeffs: Coefficients, n_pairs: int = 2000, seed: int = 0, scale: float = 3.0,
                       slack: float = 1.01) -> tuple[float, float]:
    """Sampled difference quotients of ``b`` and ``sigma`` against the declared constants.

    Raises
    ------
    ViolationFound
        If a quotient exceeds ``declared * slack``.
    """
    qb = lipschitz_quotients(coeffs.drift, coeffs.p, n_pairs, seed, scale)
    qs = lipschitz_quotients(coeffs.diffusion, coeffs.p, n_pairs, seed + 1, scale, matrix=True)
    if qb > coeffs.lip_drift * slack + 1e-12:
        raise ViolationFound(f"drift quotient {qb:.4g} exceeds declared {coeffs.lip_drift:.4g}")
    if qs > coeffs.lip_diffusion * slack + 1e-12:
        raise ViolationFound(f"diffusion quotient {qs:.4g} exceeds declared {coeffs.lip_diffusion:.4g}")
    return qb, qs


# --------------------------------------------------------------------------- truncations


def retract(v: Array, radius: float) -> Array:
    """Radial retraction onto the closed ball of the given radius."""
    norm = np.linalg.norm(v, axis=-1, keepdims=True)
    scale = np.where(norm > radius, radius / np.where(norm > 0, norm, 1.0), 1.0)
    return v * scale


def _sampled_sup(fn, p: int, radius: float, seed: int, n: int = 4096, matrix: bool = False) -> float:
    g = rngmod.stream(seed, rngmod.ROLE_PROBE, 1)
    dirs = g.standard_normal((n, p))
    dirs /= np.linalg.norm(dirs, axis=-1, keepdims=True)
    radii = radius * np.concatenate([np.ones(n // 2), g.uniform(0, 1, n - n // 2) ** (1.0 / p)])
    vals = fn(dirs * radii[:, None])
    norms = operator_norm(vals) if matrix else np.linalg.norm(vals, axis=-1)
    return float(norms.max())


def truncate_drift(coeffs: Coefficients, N: float, seed: int = 0) -> Coefficients:
    """Replace ``b`` by ``b_N(v) = b(v N/|v|)`` outside the ball of radius ``N``.

    ``sup_drift`` becomes the sup of ``|b|`` over the ball, estimated by
    sampling (a lower estimate) and capped by any known bound.
    """
    if N <= 0:
        raise ValueError("N must be positive")
    base = coeffs.drift

    def b_N(v):
        return base(retract(v, N))

    sup = min(coeffs.sup_drift, _sampled_sup(base, coeffs.p, N, seed))
    return replace(coeffs, drift=b_N, sup_drift=sup, name=f"{coeffs.name}|b_N={N:g}")


def smallest_singular_value(sigma_eval: Callable[[Array], Array], v: Array) -> Array:
    """``lambda(v) = inf_{|x|=1} |sigma(v) x|^2``, the squared smallest singular value."""
    s = np.linalg.svd(sigma_eval(np.asarray(v, dtype=float)), compute_uv=False)
    lam = s[..., -1] ** 2
    return lam if np.ndim(lam) else float(lam)


def sqrt_lambda_lipschitz_check(sigma_eval: Callable[[Array], Array], lip: float, p: int,
                                n_pairs: int = 2000, seed: int = 0, scale: float = 3.0,
                                center=None, raise_on_fail: bool = True) -> LipschitzReport:
    """Check ``|sqrt(lambda(v)) - sqrt(lambda(w))| <= lip |v - w|`` on random pairs."""

    def root(v):
        return np.sqrt(smallest_singular_value(sigma_eval, v))[..., None]

    q = lipschitz_quotients(root, p, n_pairs, seed, scale, center=center)
    rep = LipschitzReport(q, lip, n_pairs)
    if raise_on_fail and not rep.passed:
        raise ViolationFound(f"sqrt(lambda) quotient {q:.6g} exceeds lip(sigma) = {lip:.6g}")
    return rep


@dataclass
class RegularizedSigma:
    """``sigma_{r,N}``: ``sigma + d_r I`` inside the level set ``{lambda <= r}``, retracted outside ``B(0, N)``.

    ``d_r(v)`` is the distance from ``v`` to the boundary ``{lambda = r}``,
    approximated by the nearest boundary crossing along a fixed set of
    probe directions (an upper estimate that is exact when a probe points
    along the shortest segment).
    """

    sigma: Callable[[Array], Array]
    p: int
    r: float
    N: float
    directions: Array
    bisection_tol: float = 1e-10
    boundary_empty: bool = False
    validation_inf_lambda: float = math.nan

    def lam(self, v):
        return smallest_singular_value(self.sigma, v)

    def d_r(self, v) -> Array:
        v = np.asarray(v, dtype=float)
        flat = v.reshape(-1, self.p)
        out = np.zeros(flat.shape[0])
        if self.boundary_empty:
            return out.reshape(v.shape[:-1])
        inside = self.lam(flat) <= self.r
        if np.any(inside):
            out[inside] = self._probe(flat[inside])
        return out.reshape(v.shape[:-1])

    def _probe(self, v: Array) -> Array:
        dirs = self.directions
        pts = v[:, None, :]
        limit = 4.0 * (self.N + np.linalg.norm(v, axis=-1).max() + 1.0)
        lo = np.zeros((v.shape[0], dirs.shape[0]))
        hi = np.full_like(lo, np.inf)
        step = self.bisection_tol
        while step <= limit:
            crossed = self.lam(pts + step * dirs[None]) > self.r
            newly = crossed & np.isinf(hi)
            hi[newly] = step
            lo[~crossed & np.isinf(hi)] = step
            if np.all(np.isfinite(hi).any(axis=1)) and np.all(np.isfinite(hi) | (lo >= hi.min(axis=1, keepdims=True))):
                break
            step *= 2.0
        found = np.isfinite(hi)
        if not np.all(found.any(axis=1)):
            raise EmptyBoundary("no boundary crossing found along any probe direction")
        hi_f = np.where(found, hi, 0.0)
        lo_f = np.where(found, lo, 0.0)
        while np.max(hi_f - lo_f) > self.bisection_tol:
            mid = 0.5 * (lo_f + hi_f)
            crossed = self.lam(pts + mid[..., None] * dirs[None]) > self.r
            hi_f = np.where(crossed, mid, hi_f)
            lo_f = np.where(crossed, lo_f, mid)
        dist = np.where(found, hi_f, np.inf)
        return dist.min(axis=1)

    def sigma_r(self, v) -> Array:
        v = np.asarray(v, dtype=float)
        return self.sigma(v) + self.d_r(v)[..., None, None] * np.eye(self.p)

    def __call__(self, v) -> Array:
        return self.sigma_r(retract(np.asarray(v, dtype=float), self.N))


def regularize_sigma(sigma_eval: Callable[[Array], Array], p: int, r: float, N: float,
                     n_directions: int = 64, n_validation: int = 2000, seed: int = 0,
                     on_empty: str = "fallback") -> RegularizedSigma:
    """Build ``sigma_{r,N}`` and validate ``inf_{|v| <= N} lambda(v; N, r) > 0`` on samples.

    If no validation sample falls in ``{lambda <= r}`` the level set is
    treated as empty: with ``on_empty="fallback"`` an
    :class:`EmptyBoundaryWarning` is issued and ``sigma_N`` is returned,
    otherwise :class:`EmptyBoundary` is raised.  If every sample lies in
    the level set and no probe leaves it, :class:`EmptyBoundary` is raised.
    """
    if r <= 0 or N <= 0:
        raise ValueError("r and N must be positive")
    g = rngmod.stream(seed, rngmod.ROLE_PROBE, 2)
    axes = np.concatenate([np.eye(p), -np.eye(p)])
    rand = g.standard_normal((max(0, n_directions - 2 * p), p))
    rand /= np.linalg.norm(rand, axis=-1, keepdims=True)
    dirs = np.concatenate([axes, rand])
    reg = RegularizedSigma(sigma_eval, p, float(r), float(N), dirs)

    samples = g.standard_normal((n_validation, p))
    samples /= np.linalg.norm(samples, axis=-1, keepdims=True)
    samples *= N * g.uniform(0, 1, (n_validation, 1)) ** (1.0 / p)
    # make sure the level set is probed near the axes as well
    line = np.zeros((201, p))
    line[:, 0] = np.linspace(-N, N, 201)
    samples = np.concatenate([samples, line])
    lam = reg.lam(samples)
    if not np.any(lam <= r):
        if on_empty != "fallback":
            raise EmptyBoundary(f"lambda > {r:g} on all validation samples; regularisation unnecessary")
        warnings.warn("level set {lambda <= r} is empty on samples; using sigma_N", EmptyBoundaryWarning, stacklevel=2)
        reg.boundary_empty = True
    reg.validation_inf_lambda = float(np.min(smallest_singular_value(reg, samples)))
    return reg


# --------------------------------------------------------------------------- time grids


def uniform_time_grid(t_end: float, dt: float) -> Array:
    n = max(1, math.ceil(t_end / dt - 1e-9))
    grid = np.arange(n + 1) * dt
    grid[-1] = t_end
    return np.unique(np.clip(grid, 0.0, t_end))


def geometric_time_grid(t_end: float, dt_min: float, growth: float) -> Array:
    """Steps of ``dt_min`` up to ``dt_min/growth``, then ``dt = growth * t``."""
    pts = [0.0]
    t = 0.0
    while t < t_end:
        dt = max(dt_min, growth * t)
        t = min(t_end, t + dt)
        pts.append(t)
    return np.array(pts)


def graded_time_grid(t_end: float, dt_min: float, dt_max: float, grading: float) -> Array:
    """Steps ``clip(grading * (t_end - t), dt_min, dt_max)``, refining toward ``t_end``."""
    pts = [0.0]
    t = 0.0
    while t_end - t > 1e-15 * t_end:
        dt = min(dt_max, max(dt_min, grading * (t_end - t)))
        t = min(t_end, t + dt)
        pts.append(t)
    return np.array(pts)


# --------------------------------------------------------------------------- solver


InitialData = Callable[[Array], Array]


def constant_initial_data(value, p: int) -> InitialData:
    c = np.broadcast_to(np.asarray(value, dtype=float), (p,))
    return lambda x: np.broadcast_to(c, np.shape(x) + (p,)).copy()


def zero_initial_data(p: int) -> InitialData:
    return constant_initial_data(0.0, p)


@dataclass
class SolverConfig:
    p: int
    n_sites: int
    dt: float
    t_end: float
    initial_data: InitialData | None = None
    seed: int = 0
    n_modes: int | None = None
    scheme: str = "semi-implicit-spectral"
    time_grid: Sequence[float] | None = None
    record_times: Sequence[float] | None = None
    track_lambda: bool = False

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.n_sites < 4 or self.n_sites % 2:
            raise ValueError("n_sites must be even and at least 4")
        if self.t_end <= 0:
            raise ValueError("t_end must be positive")
        if self.scheme != "semi-implicit-spectral":
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.n_modes is None:
            self.n_modes = self.n_sites // 2

    @property
    def h(self) -> float:
        return 2.0 / self.n_sites

    @property
    def sites(self) -> Array:
        return -1.0 + self.h * np.arange(self.n_sites)

    def step_times(self) -> Array:
        grid = uniform_time_grid(self.t_end, self.dt) if self.time_grid is None else np.asarray(self.time_grid, dtype=float)
        if grid[0] != 0.0 or np.any(np.diff(grid) <= 0) or abs(grid[-1] - self.t_end) > 1e-12 * self.t_end:
            raise ValueError("time grid must start at 0, increase strictly and end at t_end")
        if self.record_times is not None:
            rec = np.asarray(self.record_times, dtype=float)
            if np.any(rec < 0) or np.any(rec > self.t_end * (1 + 1e-12)):
                raise ValueError("record times must lie in [0, t_end]")
            grid = np.union1d(grid, np.clip(rec, 0.0, self.t_end))
        return grid

    def initial_values(self) -> Array:
        init = self.initial_data or zero_initial_data(self.p)
        u0 = np.asarray(init(self.sites), dtype=float)
        if u0.shape != (self.n_sites, self.p) or not np.all(np.isfinite(u0)):
            raise ValueError("initial data must be finite with shape (n_sites, p)")
        return u0


@dataclass
class Trajectory:
    """Recorded solution plus per-step diagnostics.

    ``values`` has shape ``(replica, time, site, p)``; ``sup_norm`` and
    ``min_lambda`` have shape ``(replica, step)`` and cover every step
    including the initial state.
    """

    times: Array
    sites: Array
    values: Array
    step_times: Array
    sup_norm: Array
    min_lambda: Array | None
    blowup: Array
    companion: Array | None = None
    seed: int = 0
    n_modes: int = 0

    def sample(self, replica: int = 0):
        from .gaussian import FieldSample

        return FieldSample(self.times, self.sites, self.values[replica], self.seed, self.n_modes, replica)

    def stopping_index(self, r: float | None = None, N: float | None = None) -> Array:
        """First step index where ``sup |u| >= N`` or ``min lambda(u) <= r``; -1 if never."""
        fire = np.zeros_like(self.sup_norm, dtype=bool)
        if N is not None:
            fire |= self.sup_norm >= N
        if r is not None:
            if self.min_lambda is None:
                raise ValueError("trajectory was run without track_lambda")
            fire |= self.min_lambda <= r
        first = np.argmax(fire, axis=1)
        return np.where(fire.any(axis=1), first, -1)

    def stopping_time(self, r: float | None = None, N: float | None = None) -> Array:
        idx = self.stopping_index(r, N)
        return np.where(idx >= 0, self.step_times[np.maximum(idx, 0)], np.inf)


def heat_multiplier(n_sites: int, dt: float) -> Array:
    k = np.arange(n_sites // 2 + 1, dtype=float)
    return np.exp(-PI2 * k * k * dt)


def heat_semigroup(values: Array, t: float) -> Array:
    """Exact grid heat semigroup applied along the site axis (-2) of ``(..., J, p)``."""
    n_sites = values.shape[-2]
    spec = sfft.rfft(values, axis=-2)
    spec *= heat_multiplier(n_sites, t)[:, None]
    return sfft.irfft(spec, n=n_sites, axis=-2)


class _NoiseStreams:
    """Per-replica standard normals, drawn in blocks of steps."""

    def __init__(self, seed: int, replicas: Sequence[int], shape: tuple[int, ...], block: int = 32):
        self.gens = [rngmod.stream(seed, rngmod.ROLE_SOLVER, r) for r in replicas]
        self.shape = shape
        self.block = block
        self.buffer = None
        self.pos = block

    def next(self) -> Array:
        if self.pos >= self.block:
            self.buffer = np.stack([g.standard_normal((self.block,) + self.shape) for g in self.gens], axis=1)
            self.pos = 0
        out = self.buffer[self.pos]
        self.pos += 1
        return out


def _integrate(config: SolverConfig, coeffs: Coefficients, replicas: Sequence[int], noise=None,
               companion: bool = False) -> Trajectory:
    if coeffs.p != config.p:
        raise ValueError("coefficient and config dimensions differ")
    J, p = config.n_sites, config.p
    grid = config.step_times()
    rec_times = grid if config.record_times is None else np.clip(np.asarray(config.record_times, dtype=float), 0, config.t_end)
    rec_idx = np.searchsorted(grid, rec_times - 1e-12 * config.t_end)
    R = len(replicas)
    u = np.broadcast_to(config.initial_values(), (R, J, p)).copy()
    u_hat = sfft.rfft(u, axis=1)
    h_hat = np.zeros_like(u_hat) if companion else None
    values = np.empty((R, rec_idx.size, J, p))
    comp = np.zeros((R, rec_idx.size, J, p)) if companion else None
    n_steps = grid.size - 1
    sup_norm = np.full((R, n_steps + 1), np.nan)
    min_lam = np.full((R, n_steps + 1), np.nan) if config.track_lambda else None
    blowup = np.zeros(R, dtype=bool)
    streams = _NoiseStreams(config.seed, replicas, (J, p)) if noise is None else None
    k2 = PI2 * np.arange(J // 2 + 1, dtype=float) ** 2
    inv_h = 1.0 / config.h

    def diagnostics(m, u_now):
        sup_norm[:, m] = np.max(np.linalg.norm(u_now, axis=-1), axis=-1)
        if min_lam is not None:
            min_lam[:, m] = np.min(smallest_singular_value(coeffs.diffusion, u_now), axis=-1)

    def record(m, u_now):
        for slot in np.nonzero(rec_idx == m)[0]:
            values[:, slot] = u_now
            if companion:
                comp[:, slot] = sfft.irfft(h_hat, n=J, axis=1)

    diagnostics(0, u)
    record(0, u)
    for m in range(n_steps):
        dt = grid[m + 1] - grid[m]
        z = streams.next() if noise is None else np.asarray(noise[m], dtype=float).reshape(R, J, p)
        dw = z * math.sqrt(dt * inv_h)
        forcing = dt * coeffs.drift(u) + coeffs.sigma_times(u, dw)
        decay = np.exp(-k2 * dt)[:, None]
        u_hat = decay * (u_hat + sfft.rfft(forcing, axis=1))
        u = sfft.irfft(u_hat, n=J, axis=1)
        if companion:
            h_hat = decay * (h_hat + sfft.rfft(dw, axis=1))
        bad = ~np.all(np.isfinite(u), axis=(1, 2))
        if np.any(bad):
            blowup |= bad
            u[bad] = np.nan
            u_hat[bad] = np.nan
            if np.all(blowup):
                diagnostics(m + 1, u)
                record(m + 1, u)
                break
        diagnostics(m + 1, u)
        record(m + 1, u)
    return Trajectory(rec_times, config.sites, values, grid, sup_norm, min_lam, blowup, comp,
                      config.seed, config.n_modes)


def solve(config: SolverConfig, coeffs: Coefficients, noise=None, replica: int = 0,
          raise_on_blowup: bool = False) -> Trajectory:
    """Run one replica; ``noise`` may supply the standard normals as ``(steps, J, p)``."""
    traj = _integrate(config, coeffs, [replica], None if noise is None else np.asarray(noise)[:, None])
    if raise_on_blowup and traj.blowup.any():
        raise BlowUp("non-finite values in trajectory")
    return traj


def solve_ensemble(config: SolverConfig, coeffs: Coefficients, n_replicas: int, first_replica: int = 0,
                   companion: bool = False, batch: int = 64) -> Trajectory:
    """Replicas ``first_replica ..`` run in batches; replica ``r`` matches ``solve(..., replica=r)``.

    With ``companion`` the additive field driven by the same increments
    (``sigma = I``, ``b = 0``, zero start) is recorded alongside.
    """
    parts = []
    for start in range(first_replica, first_replica + n_replicas, batch):
        stop = min(first_replica + n_replicas, start + batch)
        parts.append(_integrate(config, coeffs, list(range(start, stop)), companion=companion))
    first = parts[0]
    cat = lambda name: np.concatenate([getattr(t, name) for t in parts], axis=0)  # noqa: E731
    return replace(
        first,
        values=cat("values"),
        sup_norm=cat("sup_norm"),
        min_lambda=None if first.min_lambda is None else cat("min_lambda"),
        blowup=cat("blowup"),
        companion=cat("companion") if companion else None,
    )


# --------------------------------------------------------------------------- experiments


def _loglog_slope(x, y):
    fit = stats.linregress(np.log(x), np.log(y))
    return float(fit.slope), float(fit.stderr)


@dataclass
class LinearizationReport:
    t_grid: Array
    errors: Array  # (replica, t): sup_x |u - G_t u0 - sigma(u0) H|
    point_errors: Array  # (replica, t) at the first grid site
    slope: float
    slope_stderr: float
    moment_slopes: dict[int, float]
    magnitude: float


def linearization_error_scan(coeffs: Coefficients, u0_eval: InitialData | None, t_grid, n_replicas: int,
                             seed: int = 0, n_sites: int = 1024, dt_min: float | None = None,
                             growth: float = 0.02, moments: Sequence[int] = (2, 4),
                             batch: int = 50) -> LinearizationReport:
    """Compare ``u`` with ``G_t u0 + sigma(u0) H`` under shared noise.

    ``H`` is the additive grid field driven by the same increments, so
    both share every Brownian mode.  The log-log slope of the mean sup
    error against ``t`` is reported, with the slopes of the ``k``-th
    moment norms ``(E err^k)^{1/k}``.
    """
    t_grid = np.sort(np.asarray(t_grid, dtype=float))
    dt_min = t_grid[0] / 50.0 if dt_min is None else dt_min
    grid = geometric_time_grid(float(t_grid[-1]), dt_min, growth)
    config = SolverConfig(coeffs.p, n_sites, dt_min, float(t_grid[-1]), u0_eval, seed,
                          time_grid=grid, record_times=t_grid)
    traj = solve_ensemble(config, coeffs, n_replicas, companion=True, batch=batch)
    u0 = config.initial_values()
    sig0 = coeffs.diffusion(u0)  # (J, p, p)
    errs = np.empty((n_replicas, t_grid.size))
    point = np.empty_like(errs)
    for i, t in enumerate(t_grid):
        lin = heat_semigroup(u0, t)[None] + np.einsum("jab,rjb->rja", sig0, traj.companion[:, i])
        diff = np.linalg.norm(traj.values[:, i] - lin, axis=-1)
        errs[:, i] = diff.max(axis=-1)
        point[:, i] = diff[:, 0]
    mean = errs.mean(axis=0)
    if np.all(mean > 0):
        slope, se = _loglog_slope(t_grid, mean)
        mslopes = {k: _loglog_slope(t_grid, np.mean(errs**k, axis=0) ** (1.0 / k))[0] for k in moments}
    else:
        slope, se, mslopes = math.nan, math.nan, {k: math.nan for k in moments}
    return LinearizationReport(t_grid, errs, point, slope, se, mslopes, float(mean.max()))


@dataclass
class IncrementReport:
    separations: Array
    spatial_moments: Array
    spatial_slope: float
    lags: Array
    temporal_moments: Array
    temporal_slope: float


def increment_moment_scan(values: Array, times, sites, min_sep: float | None = None, max_sep: float = 0.25,
                          n_seps: int = 8, site_index: int | None = None) -> IncrementReport:
    """Second moments of spatial and temporal increments and their log-log slopes.

    ``values`` is ``(replica, time, site, p)`` on a uniform site grid.
    Spatial increments use the last recorded time and separations between
    ``min_sep`` (default 8 grid cells) and ``max_sep``; temporal increments
    pair the last time with each earlier one.  Averages run over replicas
    and, unless ``site_index`` is given, over all base sites (the law is
    translation invariant).
    """
    values = np.asarray(values)
    times = np.asarray(times, dtype=float)
    J = values.shape[2]
    h = 2.0 / J
    min_sep = 8.0 * h if min_sep is None else min_sep
    shifts = np.unique(np.round(np.geomspace(min_sep / h, max_sep / h, n_seps)).astype(int))
    last = values[:, -1]
    sp = []
    for s in shifts:
        inc = np.sum((np.roll(last, -s, axis=1) - last) ** 2, axis=-1)
        sp.append(inc[:, site_index].mean() if site_index is not None else inc.mean())
    sp = np.array(sp)
    seps = shifts * h
    lags = times[-1] - times[:-1]
    tm = []
    for k in range(times.size - 1):
        inc = np.sum((values[:, -1] - values[:, k]) ** 2, axis=-1)
        tm.append(inc[:, site_index].mean() if site_index is not None else inc.mean())
    tm = np.array(tm)
    s_slope = _loglog_slope(seps, sp)[0] if np.all(sp > 0) else math.nan
    t_slope = _loglog_slope(lags, tm)[0] if lags.size > 1 and np.all(tm > 0) else math.nan
    return IncrementReport(seps, sp, s_slope, lags, tm, t_slope)


@dataclass(frozen=True)
class BDGReport:
    k: int
    empirical: float
    std_error: float
    bound: float

    @property
    def passed(self) -> bool:
        return self.empirical <= self.bound + 3.0 * self.std_error


def bdg_bound(k: int, p: int, t: float, sup_sigma: float) -> float:
    """``(4 k p int_0^t int G^2 M(sigma)^2)^{k/2}`` with ``int int G^2 = Var H_1(t)``."""
    return (4.0 * k * p * variance_of_H(t) * sup_sigma**2) ** (k / 2.0)


def bdg_bound_check(samples: Array, k: int, t: float, sup_sigma: float) -> BDGReport:
    """Empirical ``E|X|^k`` of convolution samples ``(R, p)`` against the BDG bound."""
    samples = np.asarray(samples, dtype=float)
    if k < 2 or k % 2:
        raise ValueError("k must be an even integer >= 2")
    norms = np.linalg.norm(samples, axis=-1) ** k
    emp = float(norms.mean())
    se = float(norms.std(ddof=1) / math.sqrt(norms.size))
    return BDGReport(k, emp, se, bdg_bound(k, samples.shape[-1], t, sup_sigma))


def gaussian_norm_moment(k: float, p: int, var: float) -> float:
    """``E|X|^k`` for ``X ~ N(0, var I_p)``."""
    return float(math.exp((k / 2.0) * math.log(2.0 * var) + gammaln((p + k) / 2.0) - gammaln(p / 2.0)))
