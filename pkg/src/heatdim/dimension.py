"""Box-counting dimension, Cantor test sets and lattice hit counts.

Hausdorff dimension is not computable from samples, so every estimate
here is a box-counting slope: the least-squares slope of
``log_base N(j)`` against ``j``, where ``N(j)`` counts the half-open grid
cells of side ``base**-j`` that contain a point.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import stats

from . import rng as rngmod
from .errors import LatticeMismatch, WindowTooNarrow
from .gaussian import mode_step_variance, render_uniform, sample_grid, sample_time_series
from .torus import AnisotropicMetric, lattice_spacing, spatial_lattice

Array = np.ndarray


# --------------------------------------------------------------------------- point clouds


@dataclass
class PointCloud:
    points: Array
    tag: str = ""

    def __post_init__(self):
        pts = np.asarray(self.points)
        if pts.ndim == 1:
            pts = pts[:, None]
        if pts.ndim != 2 or pts.shape[0] == 0:
            raise ValueError("a point cloud needs a nonempty (M, p) array")
        if not np.all(np.isfinite(pts)):
            raise ValueError("point cloud has non-finite coordinates")
        self.points = pts

    @property
    def p(self) -> int:
        return self.points.shape[1]

    def __len__(self) -> int:
        return self.points.shape[0]


def _points(cloud) -> Array:
    return cloud.points if isinstance(cloud, PointCloud) else PointCloud(cloud).points


@dataclass(frozen=True)
class CantorSpec:
    """Symmetric Cantor set keeping two end pieces of relative length ``ratio``.

    The generated points are the midpoints of the ``2**depth`` surviving
    intervals, so every level-``k`` interval (``k <= depth``) holds exactly
    ``2**(depth - k)`` of them and none sits on a cell boundary.
    """

    depth: int
    ratio: float = 1.0 / 3.0
    lo: float = 0.0
    hi: float = 1.0

    def __post_init__(self):
        if self.depth < 0:
            raise ValueError("depth must be nonnegative")
        if not (0.0 < self.ratio < 0.5):
            raise ValueError("ratio must lie in (0, 1/2)")
        if not self.hi > self.lo:
            raise ValueError("empty base interval")

    @property
    def dimension(self) -> float:
        return math.log(2.0) / math.log(1.0 / self.ratio)

    def left_ends(self) -> Array:
        left = np.zeros(1)
        length = 1.0
        for _ in range(self.depth):
            length *= self.ratio
            left = np.concatenate([left, left + (1.0 / self.ratio - 1.0) * length]).reshape(2, -1).T.ravel()
        return left

    def points(self) -> Array:
        width = self.hi - self.lo
        left = np.sort(self.left_ends())
        return self.lo + width * (left + 0.5 * self.ratio**self.depth)


# --------------------------------------------------------------------------- box counting


def cell_indices(points: Array, j: int, base: float = 2.0) -> Array:
    return np.floor(points * float(base) ** j).astype(np.int64)


def _count_rows(idx: Array) -> int:
    if idx.shape[1] == 1:
        return int(np.unique(idx[:, 0]).size)
    idx = np.ascontiguousarray(idx - idx.min(axis=0))
    span = idx.max(axis=0).astype(float) + 1.0
    if np.prod(span) < 2.0**62:
        strides = np.concatenate([np.cumprod(span[::-1])[::-1][1:], [1.0]]).astype(np.int64)
        return int(np.unique(idx @ strides).size)
    return int(np.unique(idx, axis=0).shape[0])


def box_count(cloud, j: int, base: float = 2.0) -> int:
    """Occupied half-open cells ``prod [k_i, k_i + 1) base**-j``."""
    if j < 0:
        raise ValueError("j must be nonnegative")
    return _count_rows(cell_indices(_points(cloud), j, base))


def anisotropic_box_count(points, j: int, metric: AnisotropicMetric | Sequence[float]) -> int:
    """Occupied cells of side ``2**(-j / alpha_i)`` along axis ``i``.

    For the parabolic exponents ``(1/4, 1/2)`` these are the
    ``2**-4j x 2**-2j`` boxes comparable to ``rho``-balls of radius ``2**-j``.
    """
    pts = _points(points)
    exps = metric.exponents if isinstance(metric, AnisotropicMetric) else tuple(metric)
    if len(exps) != pts.shape[1]:
        raise ValueError("metric and points differ in dimension")
    scale = np.array([2.0 ** (j / a) for a in exps])
    return _count_rows(np.floor(pts * scale).astype(np.int64))


@dataclass
class DimensionEstimate:
    slope: float
    ci_half_width: float
    scales: tuple[int, int]
    counts: Array
    base: float = 2.0
    stderr: float = math.nan
    note: str = ""

    def contains(self, target: float) -> bool:
        return abs(self.slope - target) <= self.ci_half_width

    def as_dict(self) -> dict:
        return {
            "slope": self.slope,
            "ci_half_width": self.ci_half_width,
            "j_min": self.scales[0],
            "j_max": self.scales[1],
            "counts": [int(c) for c in self.counts],
            "base": self.base,
            "note": self.note,
        }


def _fit(js: Array, counts: Array, base: float, level: float = 0.95):
    fit = stats.linregress(js, np.log(counts) / math.log(base))
    df = js.size - 2
    half = float(stats.t.ppf(0.5 + level / 2.0, df) * fit.stderr) if df > 0 else math.inf
    return float(fit.slope), half, float(fit.stderr)


def dim_estimate(cloud, j_min: int, j_max: int, base: float = 2.0, counter: Callable | None = None) -> DimensionEstimate:
    """Box-counting slope over ``j_min..j_max`` with a 95% t-interval half-width.

    Raises
    ------
    WindowTooNarrow
        If ``j_max - j_min < 3``.
    """
    if j_max - j_min < 3:
        raise WindowTooNarrow(f"window [{j_min}, {j_max}] spans fewer than 3 octaves")
    pts = _points(cloud)
    counter = counter or (lambda j: box_count(pts, j, base))
    js = np.arange(j_min, j_max + 1)
    counts = np.array([counter(int(j)) for j in js])
    slope, half, se = _fit(js, counts, base)
    return DimensionEstimate(slope, half, (int(j_min), int(j_max)), counts, base, se)


def auto_window(cloud, base: float = 2.0, skip: int = 2, saturation: float = 0.1, j_cap: int = 40) -> tuple[int, int]:
    """Window skipping ``skip`` octaves below the set diameter and stopping before
    counts exceed ``saturation`` times the sample size."""
    pts = _points(cloud)
    diam = float(np.max(pts.max(axis=0) - pts.min(axis=0)))
    j0 = 0 if diam <= 0 else max(0, math.floor(-math.log(diam) / math.log(base)))
    j_min = j0 + skip
    limit = saturation * pts.shape[0]
    j_max = j_min - 1
    for j in range(j_min, j_cap + 1):
        if box_count(pts, j, base) > limit:
            break
        j_max = j
    return j_min, j_max


def dim_estimate_auto(cloud, base: float = 2.0, skip: int = 2, saturation: float = 0.1) -> DimensionEstimate:
    """:func:`dim_estimate` over :func:`auto_window`."""
    j_min, j_max = auto_window(cloud, base, skip, saturation)
    return dim_estimate(cloud, j_min, j_max, base)


def dim_estimate_fallback(cloud, base: float = 2.0) -> DimensionEstimate:
    """Automatic window; when it spans fewer than 3 octaves fit the 4 finest unsaturated scales.

    The fallback is recorded in ``note``.
    """
    try:
        return dim_estimate_auto(cloud, base)
    except WindowTooNarrow:
        j_min, j_max = auto_window(cloud, base)
        est = dim_estimate(cloud, max(0, j_max - 3), max(3, j_max), base)
        est.note = f"auto window [{j_min}, {j_max}] too narrow; fell back to [{est.scales[0]}, {est.scales[1]}]"
        return est


@dataclass(frozen=True)
class HolderImageReport:
    source: DimensionEstimate
    image: DimensionEstimate
    alpha: float

    @property
    def bound(self) -> float:
        return self.source.slope / self.alpha + self.source.ci_half_width / self.alpha + self.image.ci_half_width

    @property
    def passed(self) -> bool:
        return self.image.slope <= self.bound


def lipschitz_image_upper_check(source, f: Callable[[Array], Array], alpha: float,
                                window: tuple[int, int] | None = None,
                                image_window: tuple[int, int] | None = None) -> HolderImageReport:
    """Check that the image of an ``alpha``-Holder map has slope at most ``dim/alpha``."""
    if not (0.0 < alpha <= 1.0):
        raise ValueError("alpha must lie in (0, 1]")
    src = _points(source)
    img = np.asarray(f(src), dtype=float)
    if img.ndim == 1:
        img = img[:, None]
    est_src = dim_estimate(src, *window) if window else dim_estimate_auto(src)
    est_img = dim_estimate(img, *image_window) if image_window else dim_estimate_auto(img)
    return HolderImageReport(est_src, est_img, float(alpha))


# --------------------------------------------------------------------------- field on a dyadic lattice


def fixed_time_field(t: float, n_sites: int, p: int, seed: int, replica: int = 0,
                     n_modes: int | None = None, dtype=np.float32) -> Array:
    """``H(t, -1 + 2j/J)`` for ``j < J``, one coordinate at a time.

    Draws the same normals as :func:`sample_grid` with ``times=[t]`` (same
    stream, same order), so the values agree with it up to ``dtype``
    rounding while peak memory stays a few arrays of ``J`` doubles.
    """
    n_modes = n_sites // 2 if n_modes is None else int(n_modes)
    g = rngmod.stream(seed, rngmod.ROLE_FIELD, replica)
    out = np.empty((n_sites, p), dtype=dtype)
    # from the zero state one exact step is just the step standard deviation times the noise
    std = np.sqrt(mode_step_variance(n_modes, t))
    for i in range(p):
        noise = g.standard_normal(2 * n_modes + 1)
        cos = (std * noise[: n_modes + 1])[None]
        sin = (std[1:] * noise[n_modes + 1 :])[None]
        del noise
        out[:, i] = render_uniform(cos, sin, n_sites, dtype=dtype)[:, 0]
    return out


def _lattice_size(n: int, delta: float) -> int:
    return round(2.0 / lattice_spacing(n, delta, 0.5))


def count_lattice_hits(values: Array, sites: Array, n: int, delta: float, nu, radius: float) -> int:
    """``N_n^delta(t, B(nu, r))``: lattice sites whose field value lies in the closed ball.

    ``values`` is ``(S, p)`` at ``sites``, which must be exactly the spatial
    lattice ``F_n^delta`` (spacing ``2**(-2 n (1 + delta))``).

    Raises
    ------
    LatticeMismatch
        If ``sites`` is not that lattice.
    """
    lattice = spatial_lattice(n, delta, 0.5, cap=max(2**24, np.size(sites) + 1))
    sites = np.asarray(sites, dtype=float)
    if sites.shape != lattice.shape or not np.allclose(sites, lattice, rtol=0.0, atol=1e-12):
        raise LatticeMismatch(f"sites do not match F_{n}^{delta:g}")
    return _ball_count(values, nu, radius)


def _ball_count(values: Array, nu, radius: float, chunk: int = 1 << 22) -> int:
    nu = np.asarray(nu, dtype=float)
    if not math.isfinite(radius):
        return int(values.shape[0])
    r2 = float(radius) ** 2
    total = 0
    for start in range(0, values.shape[0], chunk):
        block = values[start : start + chunk].astype(np.float64) - nu
        total += int(np.count_nonzero(np.einsum("ij,ij->i", block, block) <= r2))
    return total


def _coord_bounds(values: Array) -> tuple[Array, Array]:
    """Per-coordinate minima and maxima; column-wise, which beats an axis-0 reduce on narrow rows."""
    cols = range(values.shape[1])
    return np.array([values[:, i].min() for i in cols]), np.array([values[:, i].max() for i in cols])


def block_count_upper_bound(values: Array, radius: float, chunk: int = 1 << 22, bounds=None) -> tuple[int, Array]:
    """Upper bound on ``max_nu #{v in values : |v - nu| <= radius}``.

    With cells of side ``2 radius``, every closed ball of that radius lies
    in one ``2 x .. x 2`` block of cells, so the largest block total
    bounds every ball count.  Returns the bound and the anchor cell.
    ``bounds`` may pass precomputed coordinate minima and maxima.
    """
    side = 2.0 * radius
    keys_list = []
    if bounds is None:
        bounds = _coord_bounds(values)
    lo = np.floor(np.asarray(bounds[0], dtype=np.float64) / side).astype(np.int64) - 1
    hi = np.floor(np.asarray(bounds[1], dtype=np.float64) / side).astype(np.int64) + 2
    span = hi - lo + 1
    if np.prod(span.astype(float)) >= 2.0**62:
        raise ValueError("cell key space too large")
    strides = np.concatenate([np.cumprod(span[::-1])[::-1][1:], [1]]).astype(np.int64)
    for start in range(0, values.shape[0], chunk):
        block = values[start : start + chunk]
        key = np.zeros(block.shape[0], dtype=np.int64)
        for i in range(block.shape[1]):
            key += (np.floor(block[:, i] / side).astype(np.int64) - lo[i]) * strides[i]
        keys_list.append(np.unique(key, return_counts=True))
    keys = np.concatenate([k for k, _ in keys_list])
    cnts = np.concatenate([c for _, c in keys_list])
    keys, inv = np.unique(keys, return_inverse=True)
    cnts = np.bincount(inv, weights=cnts).astype(np.int64)
    p = values.shape[1]
    offsets = np.array(np.meshgrid(*[[0, 1]] * p, indexing="ij")).reshape(p, -1).T @ strides
    anchors = np.concatenate([keys - o for o in offsets])
    weights = np.tile(cnts, offsets.size)
    a_keys, a_inv = np.unique(anchors, return_inverse=True)
    sums = np.bincount(a_inv, weights=weights)
    best = int(np.argmax(sums))
    key = int(a_keys[best])
    anchor = np.empty(p, dtype=np.int64)
    for i in range(p):
        anchor[i], key = divmod(key, int(strides[i]))
    return int(sums[best]), (anchor + lo) * side


def _box_filter(values: Array, lo, hi) -> Array:
    """Rows of ``values`` inside the closed box ``[lo, hi]``, narrowing one axis at a time."""
    idx = np.arange(values.shape[0])
    for i in range(values.shape[1]):
        col = values[idx, i] if idx.size < values.shape[0] else values[:, i]
        idx = idx[(col >= lo[i]) & (col <= hi[i])]
    return values[idx]


@dataclass
class CountingRow:
    n: int
    t: float
    replica: int
    lattice_size: int
    bound: float
    block_upper: int
    max_exact: int
    n_centers: int

    @property
    def passed(self) -> bool:
        return max(self.block_upper, self.max_exact) <= self.bound


@dataclass
class CountingReport:
    p: int
    delta: float
    rows: list[CountingRow]
    vacuous: dict[int, bool] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.rows)

    def profile(self) -> dict[int, int]:
        out: dict[int, int] = {}
        for r in self.rows:
            out[r.n] = max(out.get(r.n, 0), r.block_upper)
        return out


def dn_center(nu: Array, n: int, p: int) -> Array:
    """Nearest point of the mesh ``2**(-2n) / sqrt(p) * Z^p``."""
    step = 2.0 ** (-2 * n) / math.sqrt(p)
    return np.round(np.asarray(nu, dtype=float) / step) * step


def counting_growth_experiment(p: int = 4, n_range: Sequence[int] = (4, 5, 6, 7, 8), delta: float = 0.5,
                               times: Sequence[float] = (0.5,), n_seeds: int = 1, seed: int = 0,
                               n_centers: int = 8, field_fn: Callable | None = None) -> CountingReport:
    """Largest lattice hit counts ``N_n^delta(t, B(nu, 2**-n))`` against ``2**(2 n p delta)``.

    For each replica and time the field is generated once on the finest
    lattice; coarser lattices are sub-lattices when ``2 n (1 + delta)`` is
    an integer.  Per ``n``, the maximum over ``nu`` is bounded above by the
    block count of :func:`block_count_upper_bound`, and evaluated exactly at
    ``n_centers`` adversarial centres (field values inside the heaviest
    block) together with their nearest ``D(n)`` mesh points.

    ``field_fn(t, n_sites, p, replica)`` overrides the additive field.
    """
    n_range = sorted(int(n) for n in n_range)
    sizes = {n: _lattice_size(n, delta) for n in n_range}
    finest = sizes[n_range[-1]]
    for n in n_range:
        if finest % sizes[n]:
            raise LatticeMismatch(f"F_{n} is not a sub-lattice of F_{n_range[-1]}")
    rows = []
    vacuous = {n: 2.0 ** (2 * n * p * delta) >= sizes[n] for n in n_range}
    for rep in range(n_seeds):
        for t in times:
            if field_fn is None:
                vals = fixed_time_field(t, finest, p, seed, rep)
            else:
                vals = np.asarray(field_fn(t, finest, p, rep))
            g = rngmod.stream(seed, rngmod.ROLE_PROBE, rep, int(round(t * 1e6)))
            bounds = _coord_bounds(vals)
            for n in n_range:
                sub = vals[:: finest // sizes[n]]
                radius = 2.0 ** (-n)
                upper, anchor = block_count_upper_bound(sub, radius, bounds=bounds)
                cand = _box_filter(sub, anchor, anchor + 4.0 * radius)
                cand = cand if cand.shape[0] else sub
                picks = cand[g.integers(0, cand.shape[0], size=n_centers)]
                centers = np.concatenate([picks, dn_center(picks, n, p)])
                # every ball around these centres lies in the enlarged box
                margin = radius + 2.0 ** (-2 * n)
                lo_box, hi_box = centers.min(axis=0) - margin, centers.max(axis=0) + margin
                near = _box_filter(sub, lo_box, hi_box)
                exact = max(_ball_count(near, c, radius) for c in centers)
                rows.append(CountingRow(n, float(t), rep, sizes[n], 2.0 ** (2 * n * p * delta), upper, exact,
                                        centers.shape[0]))
            del vals
    return CountingReport(p, delta, rows, vacuous)


# --------------------------------------------------------------------------- image dimension experiments

KINDS = ("fixed-time-spatial", "fixed-space-temporal", "space-time")
MIN_P = {"fixed-time-spatial": 2, "fixed-space-temporal": 4, "space-time": 6}


@dataclass
class ImageDimensionResult:
    kind: str
    estimate: DimensionEstimate
    target: float
    p: int
    n_points: int
    outside_hypothesis: bool = False


def _set_sites(set_spec, n_sites: int) -> tuple[Array, float]:
    """Sites and target dimension for ``'torus'``, ``(lo, hi)`` or a CantorSpec."""
    if isinstance(set_spec, CantorSpec):
        return set_spec.points(), set_spec.dimension
    if set_spec in (None, "torus"):
        return -1.0 + 2.0 * np.arange(n_sites) / n_sites, 1.0
    lo, hi = map(float, set_spec)
    return np.linspace(lo, hi, n_sites), 1.0


def image_dimension_experiment(kind: str, set_spec, p: int, *, t: float = 0.5, x: float = 0.0,
                               n_points: int = 2**18, seed: int = 0, replica: int = 0,
                               n_modes: int | None = None, values: Array | None = None,
                               window: tuple[int, int] | None = None,
                               fallback: bool = False) -> ImageDimensionResult:
    """Box-counting slope of the image of a set under the additive field.

    ``fixed-time-spatial``: ``H(t, F)`` with target ``2 dim F``.
    ``fixed-space-temporal``: ``H(B, x)`` for ``B = set_spec = (S, T)``, target ``4 dim B``.
    ``space-time``: ``H(B x F)`` on a ``sqrt(n)^4 x sqrt(n)^2``-balanced grid
    over ``set_spec = ((S, T), (a, b))``, target ``dim_rho = 6``.
    ``values`` may supply precomputed image points (e.g. from the solver).
    With ``fallback`` a too-narrow automatic window falls back as in
    :func:`dim_estimate_fallback` instead of raising.  Runs with ``p`` below the theorem's requirement are flagged, not refused.
    """
    if kind not in KINDS:
        raise ValueError(f"kind must be one of {KINDS}")
    flag = p < MIN_P[kind]
    if kind == "fixed-time-spatial":
        sites, dim = _set_sites(set_spec, n_points)
        target = 2.0 * dim
        if values is None:
            if isinstance(set_spec, CantorSpec) or set_spec not in (None, "torus"):
                values = sample_grid([t], sites, p, n_modes or max(1024, n_points // 2), seed, replica).values[0]
            else:
                values = fixed_time_field(t, n_points, p, seed, replica, n_modes, dtype=np.float64)
    elif kind == "fixed-space-temporal":
        lo, hi = map(float, set_spec)
        target = 4.0
        if values is None:
            times = np.linspace(lo, hi, n_points)
            values = sample_time_series(times, x, p, n_modes or 4096, seed, replica)
    else:
        (s_lo, s_hi), (x_lo, x_hi) = set_spec
        target = 6.0
        if values is None:
            n_t = max(4, int(round(n_points ** (2.0 / 3.0))))
            n_x = max(4, n_points // n_t)
            times = np.linspace(float(s_lo), float(s_hi), n_t)
            xs = np.linspace(float(x_lo), float(x_hi), n_x)
            values = sample_grid(times, xs, p, n_modes or 1024, seed, replica).values.reshape(-1, p)
    cloud = PointCloud(np.asarray(values, dtype=float), tag=kind)
    if window:
        est = dim_estimate(cloud, *window)
    else:
        est = dim_estimate_fallback(cloud) if fallback else dim_estimate_auto(cloud)
    if flag:
        note = f"p={p} is outside the theorem hypothesis (needs p >= {MIN_P[kind]})"
        est.note = f"{est.note}; {note}" if est.note else note
    return ImageDimensionResult(kind, est, target, p, len(cloud), flag)
