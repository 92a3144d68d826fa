"""Circle arithmetic, the parabolic metric and dyadic lattices.

The circle is represented by the half-open interval ``[-1, 1)`` with
addition modulo 2, so its circumference is 2.  Functions accept plain
floats or numpy arrays; :class:`TorusPoint` and :class:`SpaceTimePoint`
are thin value types for callers that prefer them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import CapExceeded, DuplicatePoints

DEFAULT_LATTICE_CAP = 2**24


def wrap(x):
    """Reduce ``x`` modulo 2 into ``[-1, 1)``."""
    y = np.mod(np.asarray(x, dtype=float) + 1.0, 2.0) - 1.0
    # mod can round up to exactly 2.0 for tiny negative inputs
    y = np.where(y >= 1.0, -1.0, y)
    return y if y.ndim else float(y)


@dataclass(frozen=True)
class TorusPoint:
    coord: float

    def __post_init__(self):
        object.__setattr__(self, "coord", wrap(float(self.coord)))

    def __add__(self, other):
        return TorusPoint(self.coord + _coord(other))

    def __sub__(self, other):
        return TorusPoint(self.coord - _coord(other))

    def __float__(self):
        return self.coord


@dataclass(frozen=True)
class SpaceTimePoint:
    t: float
    x: TorusPoint

    def __post_init__(self):
        if self.t < 0:
            raise ValueError(f"time must be nonnegative, got {self.t}")
        if not isinstance(self.x, TorusPoint):
            object.__setattr__(self, "x", TorusPoint(self.x))


def _coord(a):
    return a.coord if isinstance(a, TorusPoint) else a


def torus_dist(a, b):
    """Arc-length distance on the circle of circumference 2, in ``[0, 1]``."""
    return np.abs(wrap(np.asarray(_coord(a), dtype=float) - np.asarray(_coord(b), dtype=float)))


def parabolic_dist_arrays(t1, x1, t2, x2):
    """Vectorised ``|t1 - t2|**(1/4) + dist(x1, x2)**(1/2)``."""
    dt = np.abs(np.asarray(t1, dtype=float) - np.asarray(t2, dtype=float))
    return dt**0.25 + np.sqrt(torus_dist(x1, x2))


def parabolic_dist(a: SpaceTimePoint, b: SpaceTimePoint) -> float:
    return float(parabolic_dist_arrays(a.t, a.x.coord, b.t, b.x.coord))


@dataclass(frozen=True)
class AnisotropicMetric:
    """``d(s, s') = sum_j |s_j - s'_j|**alpha_j``; torus axes use the arc distance."""

    exponents: tuple[float, ...]
    torus_axes: tuple[bool, ...] = field(default=())

    def __post_init__(self):
        exps = tuple(float(a) for a in self.exponents)
        if not exps or any(not (0.0 < a <= 1.0) for a in exps):
            raise ValueError(f"exponents must lie in (0, 1], got {exps}")
        axes = tuple(self.torus_axes) or (False,) * len(exps)
        if len(axes) != len(exps):
            raise ValueError("torus_axes must match exponents in length")
        object.__setattr__(self, "exponents", exps)
        object.__setattr__(self, "torus_axes", axes)

    @classmethod
    def parabolic(cls) -> "AnisotropicMetric":
        """The (time, space) metric with exponents (1/4, 1/2)."""
        return cls((0.25, 0.5), (False, True))

    def distance(self, s, s2):
        s = np.asarray(s, dtype=float)
        s2 = np.asarray(s2, dtype=float)
        total = 0.0
        for j, (a, on_torus) in enumerate(zip(self.exponents, self.torus_axes)):
            diff = torus_dist(s[..., j], s2[..., j]) if on_torus else np.abs(s[..., j] - s2[..., j])
            total = total + diff**a
        return total


def lattice_spacing(n: int, delta: float, alpha: float) -> float:
    return 2.0 ** (-n * (1.0 + delta) / alpha)


def _axis_points(spacing: float, lo: float, hi: float, half_open: bool) -> np.ndarray:
    # integer range first so that dyadic spacings give exact points
    j_lo = math.ceil(lo / spacing - 1e-9)
    j_hi = math.floor(hi / spacing + 1e-9)
    if half_open and j_hi * spacing >= hi - 1e-12 * max(1.0, abs(hi)):
        j_hi -= 1
    if j_hi < j_lo:
        return np.empty(0)
    return np.arange(j_lo, j_hi + 1, dtype=float) * spacing


def _axis_count(spacing: float, lo: float, hi: float, half_open: bool) -> int:
    j_lo = math.ceil(lo / spacing - 1e-9)
    j_hi = math.floor(hi / spacing + 1e-9)
    if half_open and j_hi * spacing >= hi - 1e-12 * max(1.0, abs(hi)):
        j_hi -= 1
    return max(0, j_hi - j_lo + 1)


def spatial_lattice(n: int, delta: float, alpha: float, cap: int = DEFAULT_LATTICE_CAP) -> np.ndarray:
    """Multiples of ``2**(-n(1+delta)/alpha)`` lying in ``[-1, 1)``.

    The endpoints -1 and 1 coincide on the circle and are counted once.

    Raises
    ------
    CapExceeded
        If the lattice would have more than ``cap`` points.
    """
    if n < 0:
        raise ValueError("n must be nonnegative")
    if not (0.0 < alpha <= 1.0):
        raise ValueError("alpha must lie in (0, 1]")
    spacing = lattice_spacing(n, delta, alpha)
    if spacing <= 0.0 or not math.isfinite(1.0 / spacing):
        raise CapExceeded(f"spacing 2^-{n * (1 + delta) / alpha:g} is not representable")
    count = _axis_count(spacing, -1.0, 1.0, half_open=True)
    if count > cap:
        raise CapExceeded(f"lattice has {count} points, cap is {cap}")
    return _axis_points(spacing, -1.0, 1.0, half_open=True)


def product_lattice(
    n: int,
    delta: float,
    metric: AnisotropicMetric | Sequence[float],
    box: Sequence[tuple[float, float] | None],
    cap: int = DEFAULT_LATTICE_CAP,
) -> np.ndarray:
    """Cartesian product of per-axis dyadic lattices intersected with ``box``.

    ``box`` holds one entry per axis: a closed interval ``(lo, hi)`` or
    ``None`` for the whole circle ``[-1, 1)``.  Returns an ``(m, N)`` array.
    """
    exps = metric.exponents if isinstance(metric, AnisotropicMetric) else tuple(metric)
    if len(box) != len(exps):
        raise ValueError("box must have one entry per metric axis")
    axes_args = []
    total = 1
    for a, rng in zip(exps, box):
        spacing = lattice_spacing(n, delta, a)
        lo, hi, half_open = (-1.0, 1.0, True) if rng is None else (float(rng[0]), float(rng[1]), False)
        if hi < lo:
            raise ValueError(f"empty interval {rng}")
        total *= _axis_count(spacing, lo, hi, half_open)
        axes_args.append((spacing, lo, hi, half_open))
    if total > cap:
        raise CapExceeded(f"lattice has {total} points, cap is {cap}")
    axes = [_axis_points(*args) for args in axes_args]
    if total == 0:
        return np.empty((0, len(exps)))
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1)


def greedy_order(times, xs=None) -> np.ndarray:
    """Order space-time points so each is closest to its predecessor.

    Returns a permutation ``perm`` such that, writing ``s_i`` for the
    point ``perm[i]``, ``rho(s_i, s_{i-1}) <= rho(s_i, s_j)`` for all
    ``j < i``.  The last point is the lowest input index; each earlier
    point is the nearest remaining neighbour of the one after it, ties
    broken by lowest index.

    ``times`` may instead be a sequence of :class:`SpaceTimePoint`, in
    which case ``xs`` is omitted.
    """
    if xs is None:
        pts = list(times)
        t = np.array([p.t for p in pts], dtype=float)
        x = np.array([p.x.coord for p in pts], dtype=float)
    else:
        t = np.asarray(times, dtype=float)
        x = wrap(np.asarray(xs, dtype=float))
    n = t.size
    if n == 0:
        return np.empty(0, dtype=int)
    dist = parabolic_dist_arrays(t[:, None], x[:, None], t[None, :], x[None, :])
    if n > 1 and np.any(dist[np.triu_indices(n, 1)] == 0.0):
        raise DuplicatePoints("greedy_order requires distinct points")
    remaining = np.ones(n, dtype=bool)
    current = 0
    remaining[current] = False
    peeled = [current]
    for _ in range(n - 1):
        d = np.where(remaining, dist[current], np.inf)
        current = int(np.argmin(d))  # argmin returns the lowest index on ties
        remaining[current] = False
        peeled.append(current)
    return np.array(peeled[::-1], dtype=int)


def check_greedy_order(times, xs, perm, rtol: float = 1e-12) -> bool:
    """Brute-force check of the nearest-predecessor property, up to ``rtol`` rounding."""
    t = np.asarray(times, dtype=float)[perm]
    x = wrap(np.asarray(xs, dtype=float))[perm]
    for i in range(1, t.size):
        d_all = parabolic_dist_arrays(t[i], x[i], t[:i], x[:i])
        if np.any(d_all[-1] > d_all * (1.0 + rtol)):
            return False
    return True
