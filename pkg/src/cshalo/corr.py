"""Back-to-back and collinear pair correlation functions.

Raw histograms count ordered pairs of distinct events inside a shot, binned
in ``dk = k_i + k_j`` (BB) or ``dk = k_j - k_i`` (CL). The normalization
histogram repeats the same accumulation for pairs taken from different
shots, which removes single-particle density structure. Normalized
``g2 = raw / (norm * same_slots / cross_slots)``.
"""

from __future__ import annotations

import logging
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import uniform_filter
from scipy.optimize import least_squares
from scipy.special import erf

from ._kernels import pair_histogram
from .kvio import write_kv
from .pairgen import Dataset

log = logging.getLogger(__name__)

KINDS = ("BB", "CL")


@dataclass(frozen=True)
class BinGrid:
    """Per-axis bin width and requested half-range; bins are centred on zero.

    The half-range is rounded up to ``(m + 0.5) * width`` so each axis holds
    an odd number ``2m + 1`` of bins.
    """

    width: tuple
    half_range: tuple

    def __post_init__(self):
        object.__setattr__(self, "width", tuple(float(w) for w in self.width))
        object.__setattr__(self, "half_range", tuple(float(h) for h in self.half_range))
        if len(self.width) != 3 or len(self.half_range) != 3:
            raise ValueError("BinGrid needs three widths and three half-ranges")
        if min(self.width) <= 0 or min(self.half_range) <= 0:
            raise ValueError("bin widths and half-ranges must be positive")

    @classmethod
    def cl_default(cls) -> "BinGrid":
        return cls((0.009, 0.009, 0.0005), (0.13, 0.13, 0.0095))

    @classmethod
    def bb_default(cls) -> "BinGrid":
        return cls((0.05, 0.05, 0.005), (0.725, 0.725, 0.0725))

    @classmethod
    def default(cls, kind: str) -> "BinGrid":
        return cls.cl_default() if _kind(kind) == "CL" else cls.bb_default()

    @property
    def m(self) -> tuple:
        return tuple(int(math.ceil(h / w - 0.5 - 1e-9)) for h, w in zip(self.half_range, self.width))

    @property
    def shape(self) -> tuple:
        return tuple(2 * m + 1 for m in self.m)

    @property
    def half(self) -> np.ndarray:
        """Outer edge of the grid on each axis."""
        return np.array([(m + 0.5) * w for m, w in zip(self.m, self.width)])

    def centers(self, axis: int) -> np.ndarray:
        m = self.m[axis]
        return np.arange(-m, m + 1) * self.width[axis]

    def bin_index(self, dk) -> np.ndarray:
        """Bin indices of ``dk`` rows, -1 on axes where they fall outside."""
        dk = np.atleast_2d(np.asarray(dk, dtype=float))
        idx = np.floor((dk + self.half) / np.asarray(self.width)).astype(np.int64)
        out = (idx < 0) | (idx >= np.asarray(self.shape))
        return np.where(out, -1, idx)


def _kind(kind: str) -> str:
    k = str(kind).upper()
    if k not in KINDS:
        raise ValueError(f"kind must be BB or CL, got {kind!r}")
    return k


def _shot_arrays(data) -> list[np.ndarray]:
    if isinstance(data, Dataset):
        return data.shot_arrays()
    return [np.ascontiguousarray(np.asarray(getattr(s, "k", s), dtype=float).reshape(-1, 3)) for s in data]


class _Prepared:
    """Per-shot arrays sorted by kz, reused by raw and normalization passes."""

    def __init__(self, shots):
        self.k = [np.ascontiguousarray(s, dtype=float) for s in shots]
        self.order = [np.argsort(s[:, 2], kind="stable") for s in self.k]
        self.sorted = [np.ascontiguousarray(s[o]) for s, o in zip(self.k, self.order)]
        self.counts = np.array([len(s) for s in self.k], dtype=np.int64)


def _grid_args(grid: BinGrid):
    return grid.half, np.asarray(grid.width), np.asarray(grid.shape, dtype=np.int64)


def _chunks(n: int, workers: int) -> list[np.ndarray]:
    return [c for c in np.array_split(np.arange(n), max(1, min(n, 8 * max(workers, 1)))) if len(c)]


def _run_chunks(func, n, workers):
    chunks = _chunks(n, workers)
    if workers > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(func, chunks))
    else:
        parts = [func(c) for c in chunks]
    # integer sums: merge order cannot change the result
    total = parts[0]
    for p in parts[1:]:
        total = total + p
    return total


def _accumulate_raw(prep: _Prepared, kind: str, grid: BinGrid, workers: int) -> np.ndarray:
    half, width, nbins = _grid_args(grid)
    sign = -1.0 if kind == "BB" else 1.0

    def work(idx):
        hist = np.zeros(int(np.prod(grid.shape)), dtype=np.int64)
        for s in idx:
            if prep.counts[s] < 2:
                continue
            a = np.ascontiguousarray(sign * prep.k[s])
            pair_histogram(a, prep.sorted[s], prep.order[s], True, half, width, nbins, hist)
        return hist

    if len(prep.k) == 0:
        return np.zeros(grid.shape, dtype=np.int64)
    return _run_chunks(work, len(prep.k), workers).reshape(grid.shape)


def accumulate_bb(data, grid: BinGrid | None = None, workers: int = 1) -> np.ndarray:
    """Same-shot ordered pairs of distinct events binned in ``k_i + k_j``."""
    return _accumulate_raw(_Prepared(_shot_arrays(data)), "BB", grid or BinGrid.bb_default(), workers)


def accumulate_cl(data, grid: BinGrid | None = None, workers: int = 1) -> np.ndarray:
    """Same-shot ordered pairs of distinct events binned in ``k_j - k_i``."""
    return _accumulate_raw(_Prepared(_shot_arrays(data)), "CL", grid or BinGrid.cl_default(), workers)


def partner_shots(n_shots: int, shot: int, n_partners: int, seed: int) -> np.ndarray:
    """Shots mixed with ``shot`` for the normalization; all others if few."""
    if n_partners >= n_shots - 1:
        return np.array([s for s in range(n_shots) if s != shot], dtype=np.int64)
    rng = np.random.default_rng([int(seed), int(shot)])
    pick = np.sort(rng.choice(n_shots - 1, size=n_partners, replace=False))
    return pick + (pick >= shot)


@dataclass
class NormHistogram:
    counts: np.ndarray
    same_slots: int
    cross_slots: int

    @property
    def scale(self) -> float:
        """Multiply cross-shot counts by this to compare with same-shot counts."""
        return self.same_slots / self.cross_slots if self.cross_slots else math.nan


def _accumulate_norm(prep: _Prepared, kind: str, grid: BinGrid, n_partners: int,
                     seed: int, workers: int) -> NormHistogram:
    n = len(prep.k)
    if n < 2:
        raise ValueError("normalization needs at least two shots")
    half, width, nbins = _grid_args(grid)
    sign = -1.0 if kind == "BB" else 1.0
    dummy = np.zeros(0, dtype=np.int64)

    def work(idx):
        hist = np.zeros(int(np.prod(grid.shape)), dtype=np.int64)
        cross = 0
        for s in idx:
            partners = partner_shots(n, s, n_partners, seed)
            cross += int(prep.counts[s]) * int(prep.counts[partners].sum())
            if prep.counts[s] == 0:
                continue
            b = np.concatenate([prep.k[p] for p in partners])
            if len(b) == 0:
                continue
            b = np.ascontiguousarray(b[np.argsort(b[:, 2], kind="stable")])
            a = np.ascontiguousarray(sign * prep.k[s])
            pair_histogram(a, b, dummy, False, half, width, nbins, hist)
        return np.append(hist, cross)

    merged = _run_chunks(work, n, workers)
    same = int(np.sum(prep.counts * (prep.counts - 1)))
    return NormHistogram(merged[:-1].reshape(grid.shape), same, int(merged[-1]))


def accumulate_norm(data, grid: BinGrid | None = None, kind: str = "CL", n_partners: int = 50,
                    seed: int = 0, workers: int = 1) -> NormHistogram:
    """Cross-shot pair counts plus the same/cross slot totals used for scaling."""
    kind = _kind(kind)
    return _accumulate_norm(_Prepared(_shot_arrays(data)), kind, grid or BinGrid.default(kind),
                            n_partners, seed, workers)


def reference_histogram(a, b, kind: str, grid: BinGrid, same: bool) -> np.ndarray:
    """Plain O(N^2) pair histogram between event arrays ``a`` and ``b``.

    ``same`` drops the ``i == j`` self-pairs. Slow; used to check the kernels.
    """
    kind = _kind(kind)
    a = np.asarray(a, dtype=float).reshape(-1, 3)
    b = np.asarray(b, dtype=float).reshape(-1, 3)
    hist = np.zeros(grid.shape, dtype=np.int64)
    for i in range(len(a)):
        for j in range(len(b)):
            if same and i == j:
                continue
            d = b[j] + a[i] if kind == "BB" else b[j] - a[i]
            idx = grid.bin_index(d)[0]
            if np.all(idx >= 0):
                hist[tuple(idx)] += 1
    return hist


def normalize(raw, norm, scale: float = 1.0):
    """``g2 = raw / (norm * scale)``; NaN where ``norm == 0``.

    Returns ``(g2, err, n_undefined)``; ``err`` propagates Poisson errors of
    both histograms through the ratio.
    """
    raw = np.asarray(raw, dtype=float)
    norm = np.asarray(norm, dtype=float)
    if raw.shape != norm.shape:
        raise ValueError(f"grid mismatch: {raw.shape} vs {norm.shape}")
    defined = norm > 0
    with np.errstate(divide="ignore", invalid="ignore"):
        g2 = np.where(defined, raw / (norm * scale), np.nan)
        err = np.where(defined, np.sqrt(np.maximum(raw, 1.0)) / (norm * scale), np.nan)
        err = np.where(defined, np.hypot(err, g2 / np.sqrt(np.where(defined, norm, 1.0))), np.nan)
    n_undef = int(np.count_nonzero(~defined))
    if n_undef:
        log.info("%d bins have zero normalization counts and are undefined", n_undef)
    return g2, err, n_undef


@dataclass
class CorrelationEstimate:
    kind: str
    grid: BinGrid
    raw: np.ndarray
    norm: np.ndarray
    same_slots: int
    cross_slots: int
    n_shots: int
    n_partners: int = 50

    @property
    def scale(self) -> float:
        return self.same_slots / self.cross_slots if self.cross_slots else math.nan

    def _normalized(self):
        return normalize(self.raw, self.norm, self.scale)

    @property
    def g2(self) -> np.ndarray:
        return self._normalized()[0]

    @property
    def g2_err(self) -> np.ndarray:
        return self._normalized()[1]

    @property
    def n_undefined(self) -> int:
        return int(np.count_nonzero(self.norm == 0))

    @property
    def center_index(self) -> tuple:
        return self.grid.m

    @property
    def peak(self) -> float:
        return float(self.g2[self.center_index])


def correlate(data, kind: str, grid: BinGrid | None = None, n_partners: int = 50,
              seed: int = 0, workers: int = 1) -> CorrelationEstimate:
    kind = _kind(kind)
    grid = grid or BinGrid.default(kind)
    prep = _Prepared(_shot_arrays(data))
    raw = _accumulate_raw(prep, kind, grid, workers)
    nh = _accumulate_norm(prep, kind, grid, n_partners, seed, workers)
    return CorrelationEstimate(kind, grid, raw, nh.counts, nh.same_slots, nh.cross_slots,
                               len(prep.k), n_partners)


# -- projection ----------------------------------------------------------------

def _radial_groups(grid: BinGrid):
    if grid.width[0] != grid.width[1] or grid.shape[0] != grid.shape[1]:
        raise ValueError("projection needs identical x and y binning")
    m = grid.m[0]
    off = np.arange(-m, m + 1)
    r2 = off[:, None] ** 2 + off[None, :] ** 2
    uniq, inverse = np.unique(r2, return_inverse=True)
    return np.sqrt(uniq) * grid.width[0], inverse.reshape(r2.shape)


def project_2d(arr, grid: BinGrid, smooth: bool = False):
    """Average a 3D ``(x, y, z)`` array over transverse azimuth.

    Returns ``(rho, dkz, proj)`` with ``proj[r, z]``. The radial grid is the
    set of distinct transverse distances of bin centres, so no interpolation
    is involved. ``smooth`` applies a 3-point running mean (display only).
    """
    arr = np.asarray(arr, dtype=float)
    rho, groups = _radial_groups(grid)
    flat = arr.reshape(-1, arr.shape[2])
    g = groups.ravel()
    valid = np.isfinite(flat)
    sums = np.zeros((len(rho), arr.shape[2]))
    cnts = np.zeros_like(sums)
    np.add.at(sums, g, np.where(valid, flat, 0.0))
    np.add.at(cnts, g, valid)
    with np.errstate(invalid="ignore"):
        proj = np.where(cnts > 0, sums / np.maximum(cnts, 1), np.nan)
    if smooth:
        proj = uniform_filter(np.nan_to_num(proj, nan=1.0), size=3, mode="nearest")
    return rho, grid.centers(2), proj


# -- Gaussian fits -------------------------------------------------------------

@dataclass
class AxisFit:
    h: float
    sigma: float
    h_err: float
    sigma_err: float
    residual_norm: float
    success: bool
    message: str
    nfev: int = 0

    @property
    def ok(self) -> bool:
        return self.success and self.h > 0 and self.sigma > 0


def _initial_guess(x, y):
    ax = np.abs(x)
    order = np.argsort(ax)
    h0 = y[order[0]] - 1.0
    if not np.isfinite(h0) or h0 <= 0:
        # noisy origin bin: fall back to the highest of the innermost points
        inner = y[order[:5]]
        h0 = np.nanmax(inner) - 1.0 if np.any(np.isfinite(inner)) else math.nan
        if not np.isfinite(h0) or h0 <= 0:
            return h0, math.nan
    half = 1.0 + h0 / 2
    below = [ax[i] for i in order if ax[i] > 0 and np.isfinite(y[i]) and y[i] < half]
    if below:
        sigma0 = below[0] / math.sqrt(2 * math.log(2))
    else:
        sigma0 = ax.max() / 2 if ax.max() > 0 else 1.0
    return h0, max(sigma0, 1e-12)


def fit_gaussian(x, y, err=None, max_iter: int = 200, xtol: float = 1e-6) -> AxisFit:
    """Least-squares fit of ``1 + h exp(-x**2 / (2 sigma**2))``.

    With ``err`` the residuals are weighted and the parameter errors use
    those absolute uncertainties; otherwise they are scaled by the residual
    variance.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    w = np.ones_like(y) if err is None else 1.0 / np.asarray(err, dtype=float)
    keep = np.isfinite(x) & np.isfinite(y) & np.isfinite(w) & (w > 0)
    x, y, w = x[keep], y[keep], w[keep]
    if len(x) < 3:
        return AxisFit(math.nan, math.nan, math.nan, math.nan, math.nan, False, "fewer than 3 usable points")
    h0, s0 = _initial_guess(x, y)
    if not (h0 > 0):
        return AxisFit(h0, math.nan, math.nan, math.nan, math.nan, False, "no peak above 1 at the origin")

    def resid(p):
        return (1.0 + p[0] * np.exp(-x * x / (2 * p[1] * p[1])) - y) * w

    res = least_squares(resid, [h0, s0], method="lm", xtol=xtol, ftol=1e-10, max_nfev=max_iter * 3)
    h, s = res.x[0], abs(res.x[1])
    dof = max(len(x) - 2, 1)
    try:
        cov = np.linalg.inv(res.jac.T @ res.jac)
        if err is None:
            cov *= 2 * res.cost / dof
        h_err, s_err = np.sqrt(np.clip(np.diag(cov), 0, None))
    except np.linalg.LinAlgError:
        h_err = s_err = math.nan
    success = bool(res.success) and np.isfinite(h) and h >= 0
    msg = res.message if res.success else f"did not converge: {res.message}"
    if h < 0:
        msg = "negative peak height"
    return AxisFit(float(h), float(s), float(h_err), float(s_err), float(np.sqrt(2 * res.cost)),
                   success, msg, int(res.nfev))


def _deviance_residuals(counts, mu):
    mu = np.maximum(mu, 1e-300)
    with np.errstate(divide="ignore", invalid="ignore"):
        term = np.where(counts > 0, counts * np.log(counts / mu), 0.0)
    return np.sign(counts - mu) * np.sqrt(np.maximum(2.0 * (mu - counts + term), 0.0))


def fit_gaussian_counts(x, counts, exposure, max_iter: int = 200, xtol: float = 1e-6) -> AxisFit:
    """Fit ``counts ~ Poisson(exposure * (1 + h exp(-x**2 / (2 sigma**2))))``.

    Same model as ``fit_gaussian`` but with Poisson deviance residuals, which
    stay unbiased when bins hold a handful of pairs. ``exposure`` is the
    scaled normalization count of each bin.
    """
    x = np.asarray(x, dtype=float)
    counts = np.asarray(counts, dtype=float)
    exposure = np.asarray(exposure, dtype=float)
    keep = np.isfinite(x) & (exposure > 0)
    x, counts, exposure = x[keep], counts[keep], exposure[keep]
    if len(x) < 3:
        return AxisFit(math.nan, math.nan, math.nan, math.nan, math.nan, False, "fewer than 3 usable points")
    h0, s0 = _initial_guess(x, counts / exposure)
    if not (h0 > 0):
        # a single empty centre bin should not veto the fit
        h0 = max(float(np.sum(counts) / np.sum(exposure) - 1.0), 0.1)

    def resid(p):
        return _deviance_residuals(counts, exposure * (1.0 + p[0] * np.exp(-x * x / (2 * p[1] * p[1]))))

    # sparse profiles have a spurious optimum on a lone high centre bin, so
    # restart from widths spread over the profile and keep the best deviance
    ax = np.unique(np.abs(x[x != 0]))
    starts = [s0]
    if len(ax):
        starts += list(np.geomspace(ax[0], max(ax[-1] / 2, ax[0]), 5))
    res = None
    for start in starts:
        r = least_squares(resid, [h0, start], method="lm", xtol=xtol, ftol=1e-10, max_nfev=max_iter * 3)
        if res is None or (r.x[0] >= 0 and (res.x[0] < 0 or r.cost < res.cost - 1e-9)):
            res = r
    h, s = res.x[0], abs(res.x[1])
    # Fisher information of the Poisson model
    g = np.exp(-x * x / (2 * s * s))
    mu = exposure * (1.0 + h * g)
    J = np.column_stack([exposure * g, exposure * h * g * x * x / s**3])
    try:
        cov = np.linalg.inv(J.T @ (J / mu[:, None]))
        h_err, s_err = np.sqrt(np.clip(np.diag(cov), 0, None))
    except np.linalg.LinAlgError:
        h_err = s_err = math.nan
    success = bool(res.success) and np.isfinite(h) and h >= 0
    msg = res.message if res.success else f"did not converge: {res.message}"
    if h < 0:
        msg = "negative peak height"
    return AxisFit(float(h), float(s), float(h_err), float(s_err), float(np.sqrt(2 * res.cost)),
                   success, msg, int(res.nfev))


@dataclass
class GaussianFit:
    """Per-axis fits of a correlation peak; ``transverse`` uses the 2D projection."""

    kind: str
    x: AxisFit
    y: AxisFit
    z: AxisFit
    transverse: AxisFit
    peak: float
    peak_err: float
    clipped_fraction: float
    warnings: list = field(default_factory=list)

    @property
    def h(self) -> float:
        return self.transverse.h

    @property
    def sigma(self) -> tuple:
        return (self.x.sigma, self.y.sigma, self.z.sigma)

    @property
    def sigma_transverse(self) -> float:
        return self.transverse.sigma

    @property
    def ok(self) -> bool:
        return all(f.ok for f in (self.x, self.y, self.z, self.transverse))


def _slab_profile(est: CorrelationEstimate, axis: int, slab: tuple):
    """Raw and scaled norm counts summed over ``|offset| <= slab`` bins of the other axes."""
    m = est.grid.m
    sl = [slice(m[i] - slab[i], m[i] + slab[i] + 1) for i in range(3)]
    sl[axis] = slice(None)
    others = tuple(i for i in range(3) if i != axis)
    raw = est.raw[tuple(sl)].sum(axis=others)
    norm = est.norm[tuple(sl)].sum(axis=others)
    return est.grid.centers(axis), raw, norm * est.scale


def _radial_profile(est: CorrelationEstimate, slab_z: int):
    m = est.grid.m[2]
    rho, groups = _radial_groups(est.grid)
    raw = est.raw[:, :, m - slab_z:m + slab_z + 1].sum(axis=2).ravel()
    norm = est.norm[:, :, m - slab_z:m + slab_z + 1].sum(axis=2).ravel()
    g = groups.ravel()
    rs = np.bincount(g, weights=raw, minlength=len(rho))
    ns = np.bincount(g, weights=norm, minlength=len(rho))
    return rho, rs, ns * est.scale


def _slab_bins(sigma: float, width: float, limit: int, previous: int) -> int:
    # keep the previous slab when the fit gave nothing usable
    if not np.isfinite(sigma) or sigma <= 0:
        return previous
    return int(min(limit, max(1, round(sigma / width))))


def fit_correlation(est: CorrelationEstimate, iterations: int = 3) -> GaussianFit:
    """Fit Gaussian slices through the origin of a correlation estimate.

    Each slice sums pairs over a slab of the orthogonal axes whose half-width
    follows the widths fitted in the previous pass. The first pass uses a
    third of the grid half-range, about one width when the range spans the
    intended three widths.
    Ordered pairs fill mirror bins twice, so parameter errors are scaled
    by sqrt(2).
    """
    grid = est.grid
    slab = [max(1, m // 3) for m in grid.m]
    fits = {}
    for _ in range(iterations):
        for axis in range(3):
            s = list(slab)
            s[axis] = 0
            fits[axis] = fit_gaussian_counts(*_slab_profile(est, axis, tuple(s)))
        fits["t"] = fit_gaussian_counts(*_radial_profile(est, slab[2]))
        sig_t = fits["t"].sigma if fits["t"].ok else math.nan
        sig_z = fits[2].sigma if fits[2].ok else math.nan
        slab = [_slab_bins(sig_t, grid.width[0], grid.m[0], slab[0]),
                _slab_bins(sig_t, grid.width[1], grid.m[1], slab[1]),
                _slab_bins(sig_z, grid.width[2], grid.m[2], slab[2])]
    g2, err, _ = normalize(est.raw, est.norm, est.scale)
    c = est.center_index
    notes = []
    sig = np.array([fits[0].sigma, fits[1].sigma, fits[2].sigma])
    clipped = math.nan
    if np.all(np.isfinite(sig)) and np.all(sig > 0):
        clipped = float(1.0 - np.prod(erf(grid.half / (math.sqrt(2) * sig))))
        if np.any(grid.half < 3 * sig):
            notes.append(f"grid half-range {np.round(grid.half, 5).tolist()} covers less than 3 fitted "
                         f"widths; clipped pair fraction {clipped:.3g}")
    for name, f in (("x", fits[0]), ("y", fits[1]), ("z", fits[2]), ("transverse", fits["t"])):
        if not f.ok:
            notes.append(f"{name} fit failed: {f.message}")
    for f in fits.values():
        f.h_err *= math.sqrt(2)
        f.sigma_err *= math.sqrt(2)
    for n in notes:
        warnings.warn(n, stacklevel=2)
    return GaussianFit(est.kind, fits[0], fits[1], fits[2], fits["t"], float(g2[c]), float(err[c]),
                       clipped, notes)


# -- export --------------------------------------------------------------------

def _header(meta: dict | None) -> str:
    return "".join(f"# {k}={v}\n" for k, v in (meta or {}).items())


def export_g2_csv(est: CorrelationEstimate, path, meta: dict | None = None) -> Path:
    g2, err, _ = normalize(est.raw, est.norm, est.scale)
    cx, cy, cz = (est.grid.centers(i) for i in range(3))
    X, Y, Z = np.meshgrid(cx, cy, cz, indexing="ij")
    lines = [_header(meta) + "dkx,dky,dkz,raw,norm,g2,err"]
    for row in zip(X.ravel(), Y.ravel(), Z.ravel(), est.raw.ravel(), est.norm.ravel(), g2.ravel(), err.ravel()):
        lines.append("{:.6g},{:.6g},{:.6g},{},{},{:.9g},{:.9g}".format(*row))
    path = Path(path)
    path.write_text("\n".join(lines) + "\n")
    return path


def export_projection_csv(est: CorrelationEstimate, path, meta: dict | None = None, smooth: bool = False) -> Path:
    g2, err, _ = normalize(est.raw, est.norm, est.scale)
    rho, z, proj = project_2d(g2, est.grid, smooth=smooth)
    _, _, perr = project_2d(err, est.grid)
    lines = [_header(meta) + "dkxy,dkz,g2,err"]
    for i, r in enumerate(rho):
        for j, zz in enumerate(z):
            lines.append(f"{r:.6g},{zz:.6g},{proj[i, j]:.9g},{perr[i, j]:.9g}")
    path = Path(path)
    path.write_text("\n".join(lines) + "\n")
    return path


def fit_report(fit: GaussianFit) -> dict:
    out = {"kind": fit.kind, "peak_g2": fit.peak, "peak_g2_err": fit.peak_err}
    for name in ("x", "y", "z", "transverse"):
        f = getattr(fit, name)
        out.update({f"{name}.h": f.h, f"{name}.h_err": f.h_err, f"{name}.sigma": f.sigma,
                    f"{name}.sigma_err": f.sigma_err, f"{name}.residual_norm": f.residual_norm,
                    f"{name}.status": "ok" if f.ok else "failed", f"{name}.message": f.message})
    out["clipped_pair_fraction"] = fit.clipped_fraction
    out["warnings"] = " | ".join(fit.warnings) if fit.warnings else "none"
    return out


def export_fit_report(fit: GaussianFit, path, meta: dict | None = None) -> Path:
    return write_kv(path, {**(meta or {}), **fit_report(fit)})
