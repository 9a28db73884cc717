"""Exact references: two-mode squeezed vacuum, Gaussian-state Wick moments,
and box-integrated Gaussian correlations for zone-pair predictions."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.special import ndtr

from .geometry import HaloGeometry, ZonePartition

MASS_TOL = 1e-12


# -- two-mode squeezed vacuum ---------------------------------------------------

def thermal_cutoff(n_bar: float, tol: float = MASS_TOL) -> int:
    """Smallest N whose neglected tail holds less than ``tol`` of the mass and of ``<n^2>``.

    Beyond N the geometric law restarts, so the tail of ``n^2`` is
    ``q**(N+1) * <(N + 1 + m)**2>`` with ``m`` thermal again.
    """
    if n_bar <= 0:
        raise ValueError(f"n_bar must be positive, got {n_bar}")
    q = n_bar / (1.0 + n_bar)
    n = max(int(math.ceil(math.log(tol) / math.log(q))), 1)
    second = 2 * n_bar**2 + n_bar
    while q ** (n + 1) * ((n + 1) ** 2 + 2 * (n + 1) * n_bar + second) > tol * second:
        n += 1
    return n


def thermal_distribution(n_bar: float, tol: float = MASS_TOL) -> np.ndarray:
    """``P(n) = n_bar**n / (1 + n_bar)**(n + 1)`` for ``n <= cutoff``."""
    n = np.arange(thermal_cutoff(n_bar, tol) + 1)
    q = n_bar / (1.0 + n_bar)
    return np.exp(n * math.log(q)) / (1.0 + n_bar)


@dataclass(frozen=True)
class TMSVMoments:
    n_bar: float
    G12: float
    G11: float
    C: float
    G12_closed: float
    G11_closed: float
    C_closed: float
    n_max: int


def tmsv_moments(n_bar: float) -> TMSVMoments:
    """Normally ordered two-mode moments of a squeezed vacuum by Fock sum.

    Both modes carry the same photon number ``n`` with thermal weights, so
    ``<:N1 N2:> = <n^2>`` and ``<:N1^2:> = <n(n-1)>``.
    """
    p = thermal_distribution(n_bar)
    n = np.arange(len(p), dtype=float)
    G12 = math.fsum(p * n * n)
    G11 = math.fsum(p * n * (n - 1))
    return TMSVMoments(n_bar, G12, G11, G12 / G11, 2 * n_bar**2 + n_bar, 2 * n_bar**2,
                       1 + 1 / (2 * n_bar), len(p) - 1)


def classical_bound(G11: float, G22: float) -> float:
    """Largest cross moment a classical field allows."""
    return math.sqrt(G11 * G22)


# -- Fock enumeration ------------------------------------------------------------

def tmsv_joint_distribution(n_bar: float) -> np.ndarray:
    p = thermal_distribution(n_bar)
    return np.diag(p)


def product_distribution(*marginals) -> np.ndarray:
    out = np.asarray(marginals[0], dtype=float)
    for m in marginals[1:]:
        out = np.multiply.outer(out, np.asarray(m, dtype=float))
    return out


def fock_zone_moments(joint: np.ndarray, zones) -> np.ndarray:
    """``<:N_i N_j:>`` from a joint number distribution ``joint[n_1, ..., n_K]``.

    ``zones[k]`` is the zone of mode ``k``. Exact up to the truncation of
    ``joint``.
    """
    joint = np.asarray(joint, dtype=float)
    zones = np.asarray(zones, dtype=int)
    if joint.ndim != len(zones):
        raise ValueError("one zone label per mode required")
    n_zones = int(zones.max()) + 1
    grids = np.meshgrid(*[np.arange(s) for s in joint.shape], indexing="ij")
    N = [sum((grids[k] for k in np.flatnonzero(zones == z)), np.zeros(joint.shape)) for z in range(n_zones)]
    G = np.empty((n_zones, n_zones))
    for i in range(n_zones):
        for j in range(n_zones):
            prod = N[i] * (N[i] - 1) if i == j else N[i] * N[j]
            G[i, j] = math.fsum((joint * prod).ravel())
    return G


# -- Gaussian states via Wick's theorem ---------------------------------------------

@dataclass(frozen=True)
class GaussianStateSpec:
    """Zero-mean bosonic Gaussian state.

    ``normal[i, j] = <a_i^dag a_j>`` (Hermitian) and
    ``anomalous[i, j] = <a_i a_j>`` (symmetric).
    """

    normal: np.ndarray
    anomalous: np.ndarray

    def __post_init__(self):
        N = np.atleast_2d(np.asarray(self.normal, dtype=complex))
        M = np.atleast_2d(np.asarray(self.anomalous, dtype=complex))
        object.__setattr__(self, "normal", N)
        object.__setattr__(self, "anomalous", M)
        n = N.shape[0]
        if N.shape != (n, n) or M.shape != (n, n):
            raise ValueError("normal and anomalous matrices must be square and equal-sized")
        if not np.allclose(N, N.conj().T, atol=1e-12):
            raise ValueError("normal correlation matrix must be Hermitian")
        if not np.allclose(M, M.T, atol=1e-12):
            raise ValueError("anomalous correlation matrix must be symmetric")
        ev = np.linalg.eigvalsh(self.quadrature_moments())
        if ev.min() < -1e-10:
            raise ValueError(f"unphysical Gaussian state: uncertainty matrix has eigenvalue {ev.min():.3g}")

    @property
    def n_modes(self) -> int:
        return self.normal.shape[0]

    def quadrature_moments(self) -> np.ndarray:
        """``<r r^T>`` for ``r = (x_1..x_n, p_1..p_n)``; PSD iff the state is physical."""
        n = self.n_modes
        N, M = self.normal, self.anomalous
        eye = np.eye(n)
        # xi = (a, a^dag); K[i, j] = <xi_i xi_j>
        K = np.block([[M, eye + N.T], [N, M.conj()]])
        T = np.block([[eye, eye], [-1j * eye, 1j * eye]]) / math.sqrt(2)
        return T @ K @ T.T

    @classmethod
    def vacuum(cls, n_modes: int) -> "GaussianStateSpec":
        z = np.zeros((n_modes, n_modes))
        return cls(z, z)

    @classmethod
    def thermal(cls, occupations) -> "GaussianStateSpec":
        occ = np.asarray(occupations, dtype=float)
        return cls(np.diag(occ), np.zeros((len(occ), len(occ))))

    @classmethod
    def tmsv(cls, n_bar: float) -> "GaussianStateSpec":
        m = math.sqrt(n_bar * (n_bar + 1))
        return cls(np.diag([n_bar, n_bar]), np.array([[0.0, m], [m, 0.0]]))


def gaussian_wick_moments(spec: GaussianStateSpec, zones) -> np.ndarray:
    """``<:N_i N_j:>`` for zones built from the modes of a Gaussian state.

    Wick's theorem gives, for modes ``p`` in zone i and ``q`` in zone j,
    ``<a_p^dag a_q^dag a_q a_p> = N_pp N_qq + |N_pq|^2 + |M_pq|^2``.
    """
    if spec.n_modes > 12:
        raise ValueError("Wick enumeration limited to 12 modes")
    zones = np.asarray(zones, dtype=int)
    if len(zones) != spec.n_modes:
        raise ValueError("one zone label per mode required")
    N, M = spec.normal, spec.anomalous
    occ = np.real(np.diag(N))
    pair = np.outer(occ, occ) + np.abs(N) ** 2 + np.abs(M) ** 2
    n_zones = int(zones.max()) + 1
    onehot = np.zeros((spec.n_modes, n_zones))
    onehot[np.arange(spec.n_modes), zones] = 1.0
    return onehot.T @ pair @ onehot


# -- box-integrated Gaussian correlations -------------------------------------------

def axis_overlap(length: float, sigma: float, offset: float = 0.0) -> float:
    """Closed form of ``int_0^L int_d^{d+L} phi_sigma(x - y) dy dx``."""
    def F(u):
        # antiderivative of the triangle-weighted Gaussian
        return u * ndtr(u / sigma) + sigma * math.exp(-0.5 * (u / sigma) ** 2) / math.sqrt(2 * math.pi)
    d, L = offset, length
    return F(d + L) - 2 * F(d) + F(d - L)


def _axis_quadrature(length: float, sigma: float, offset: float, n_nodes: int) -> float:
    # reduce the double integral to int (L - |u - d|)_+ phi(u) du and split at the kinks
    lo, hi = offset - length, offset + length
    cut = 12.0 * sigma
    lo, hi = max(lo, -cut), min(hi, cut)
    if hi <= lo:
        return 0.0
    pts = sorted({lo, hi, *(p for p in (offset, 0.0) if lo < p < hi)})
    x, w = leggauss(n_nodes)
    total = 0.0
    for a, b in zip(pts[:-1], pts[1:]):
        u = 0.5 * (b - a) * x + 0.5 * (b + a)
        f = np.clip(length - np.abs(u - offset), 0, None) * np.exp(-0.5 * (u / sigma) ** 2)
        total += 0.5 * (b - a) * np.dot(w, f)
    return total / (sigma * math.sqrt(2 * math.pi))


def box_overlap(dims, sigma, offset=(0.0, 0.0, 0.0), n_nodes: int = 32, rtol: float = 1e-6,
                max_nodes: int = 4096) -> tuple[float, int, float]:
    """Integral of a normalized separable Gaussian ``phi(x - y)`` over two boxes.

    Gauss-Legendre per axis; nodes are doubled until successive products
    agree to ``rtol``. Returns ``(value, nodes, relative_delta)``.
    """
    def product(n):
        return math.prod(_axis_quadrature(L, s, d, n) for L, s, d in zip(dims, sigma, offset))

    n = max(n_nodes, 32)
    prev = product(n)
    while True:
        cur = product(2 * n)
        delta = abs(cur - prev) / abs(cur) if cur else abs(cur - prev)
        if delta <= rtol:
            return cur, 2 * n, delta
        if 2 * n >= max_nodes:
            raise RuntimeError(f"quadrature did not converge: delta {delta:.3g} at {2 * n} nodes")
        n, prev = 2 * n, cur



@dataclass(frozen=True)
class GaussianTerm:
    """Excess pair density ``amplitude * phi(dk; widths)`` per unit volume.

    ``spread`` optionally gives, per axis, ``(var_u, var_v, cov)`` of the
    two members' displacements from a common centre. It is only needed on
    axes where the centres are confined (see ``box_integrated_c``); there
    ``widths**2 == var_u + var_v - 2 cov``.
    """

    amplitude: float
    widths: tuple
    spread: tuple | None = None


def _psi(t):
    # antiderivative of the standard normal CDF
    return t * ndtr(t) + np.exp(-0.5 * t * t) / math.sqrt(2 * math.pi)


def _interval_overlap(a0, a1, b0, b1, sigma) -> float:
    """``int_{a0}^{a1} int_{b0}^{b1} phi_sigma(x - y) dy dx``."""
    def F(u):
        return sigma * _psi(u / sigma)
    return float(F(a1 - b0) - F(a1 - b1) - F(a0 - b0) + F(a0 - b1))


def pair_capture(window, centers, var_u: float, var_v: float, cov: float = 0.0,
                 n_nodes: int = 32, rtol: float = 1e-8, max_nodes: int = 4096) -> float:
    """``int_B dc P(c + u in W, c + v in W)`` for centres uniform on ``B``.

    ``(u, v)`` is a zero-mean Gaussian pair. With ``B`` unbounded this is
    ``axis_overlap(|W|, sqrt(var_u + var_v - 2 cov))``.
    """
    w0, w1 = window
    b0, b1 = centers
    su = math.sqrt(var_u)
    m = cov / var_u
    sd = math.sqrt(max(var_v - cov * cov / var_u, 1e-300))
    lo, hi = max(w0 - b1, -12 * su), min(w1 - b0, 12 * su)
    if hi <= lo:
        return 0.0
    pts = sorted({lo, hi, *(p for p in (w0 - b0, w1 - b1, 0.0) if lo < p < hi)})

    def integral(n):
        x, w = leggauss(n)
        total = 0.0
        for a, b in zip(pts[:-1], pts[1:]):
            u = 0.5 * (b - a) * x + 0.5 * (b + a)
            c0 = np.maximum(b0, w0 - u)
            c1 = np.minimum(b1, w1 - u)
            shift = m * u
            inner = sd * ((_psi((w1 - shift - c0) / sd) - _psi((w1 - shift - c1) / sd))
                          - (_psi((w0 - shift - c0) / sd) - _psi((w0 - shift - c1) / sd)))
            inner = np.where(c1 > c0, inner, 0.0)
            dens = np.exp(-0.5 * (u / su) ** 2) / (su * math.sqrt(2 * math.pi))
            total += 0.5 * (b - a) * np.dot(w, dens * inner)
        return total

    n, prev = n_nodes, integral(n_nodes)
    while True:
        cur = integral(2 * n)
        if abs(cur - prev) <= rtol * abs(cur) or 2 * n >= max_nodes:
            return float(cur)
        n, prev = 2 * n, cur


def single_capture(window, centers, var: float) -> float:
    """``int_B dc P(c + u in W)`` for ``u ~ N(0, var)``."""
    return _interval_overlap(window[0], window[1], centers[0], centers[1], math.sqrt(var))


@dataclass
class ModelPrediction:
    zone_dims: tuple
    mean_count: float
    bb_terms: list
    cl_terms: list
    I_BB: float
    I_CL: float
    G12: float
    G11: float
    C: float
    nodes: int
    max_delta: float
    offset: tuple = (0.0, 0.0, 0.0)

    @property
    def violates(self) -> bool:
        return self.C > 1.0


def box_integrated_c(zone_dims, mean_count: float, bb_terms, cl_terms, offset=(0.0, 0.0, 0.0),
                     confined=(None, None, None), n_nodes: int = 32, rtol: float = 1e-6) -> ModelPrediction:
    """Zone-pair moments from Gaussian excess correlations.

    ``G12 = mu^2 + I_BB`` and ``G11 = mu^2 + I_CL`` where ``mu`` is the mean
    count per zone and each ``I`` integrates its Gaussian terms over the box
    pair. Back-to-back terms are written in the reflected coordinates of the
    second zone, which turns the opposite zone into the same box; ``offset``
    displaces that box (e.g. an adjacent sector). ``confined[axis]``, if
    given, is the interval (box coordinates) to which pair centres are
    restricted on that axis; otherwise they extend indefinitely.
    """
    dims = tuple(float(d) for d in zone_dims)
    if min(dims) <= 0 or mean_count < 0:
        raise ValueError("zone dimensions must be positive and the mean count non-negative")
    nodes, delta = 0, 0.0

    def integrate(terms, off):
        nonlocal nodes, delta
        total = 0.0
        for t in terms:
            flat = [a for a in range(3) if confined[a] is None]
            if flat:
                v, n, d = box_overlap([dims[a] for a in flat], [t.widths[a] for a in flat],
                                      [off[a] for a in flat], n_nodes, rtol)
                nodes, delta = max(nodes, n), max(delta, d)
            else:
                v = 1.0
            for a in range(3):
                if confined[a] is None:
                    continue
                if t.spread is None:
                    raise ValueError("terms need per-axis spreads on confined axes")
                if off[a]:
                    raise ValueError("offsets are only supported on unconfined axes")
                v *= pair_capture((0.0, dims[a]), confined[a], *t.spread[a], rtol=rtol * 1e-2)
            total += t.amplitude * v
        return total

    I_BB = integrate(bb_terms, offset)
    I_CL = integrate(cl_terms, (0.0, 0.0, 0.0))
    mu2 = mean_count**2
    G12, G11 = mu2 + I_BB, mu2 + I_CL
    C = G12 / G11 if G11 > 0 else math.nan
    return ModelPrediction(dims, mean_count, list(bb_terms), list(cl_terms), I_BB, I_CL, G12, G11, C,
                           nodes, delta, tuple(offset))


# -- matching the Monte Carlo source -------------------------------------------------

def _pair_prob(c, w0, w1, var_u, var_v, cov, n_nodes=64):
    """``P(c + u in [w0, w1], c + v in [w0, w1])`` for arrays of centres ``c``."""
    c, w0, w1 = np.broadcast_arrays(*(np.asarray(v, dtype=float) for v in (c, w0, w1)))
    su, sv = math.sqrt(var_u), math.sqrt(var_v)
    if cov == 0.0:
        return ((ndtr((w1 - c) / su) - ndtr((w0 - c) / su))
                * (ndtr((w1 - c) / sv) - ndtr((w0 - c) / sv)))
    m = cov / var_u
    sd = math.sqrt(max(var_v - cov * cov / var_u, 1e-300))
    x, w = leggauss(n_nodes)
    lo = np.maximum(w0 - c, -10 * su)[:, None]
    hi = np.maximum(np.minimum(w1 - c, 10 * su)[:, None], lo)
    u = 0.5 * (hi - lo) * x + 0.5 * (hi + lo)
    dens = np.exp(-0.5 * (u / su) ** 2) / (su * math.sqrt(2 * math.pi))
    cond = ndtr(((w1 - c)[:, None] - m * u) / sd) - ndtr(((w0 - c)[:, None] - m * u) / sd)
    return 0.5 * (hi - lo)[:, 0] * ((dens * cond) @ w)


def _single_prob(c, w0, w1, var):
    s = math.sqrt(var)
    return ndtr((w1 - c) / s) - ndtr((w0 - c) / s)


@dataclass(frozen=True)
class Rings:
    """Distinct (layer z, ring radius) of a mode lattice with cell counts."""

    z: np.ndarray
    rho: np.ndarray
    count: np.ndarray

    @classmethod
    def from_lattice(cls, lattice) -> "Rings":
        pts = lattice.all_centers
        key = np.column_stack([np.round(pts[:, 2], 9), np.round(np.hypot(pts[:, 0], pts[:, 1]), 9)])
        uniq, count = np.unique(key, axis=0, return_counts=True)
        return cls(uniq[:, 0], uniq[:, 1], count)


@dataclass(frozen=True)
class BandModel:
    """Per-ring factors that turn the Gaussian source terms into zone moments."""

    theta: float
    mean_count: float
    bb_terms: list
    cl_terms: list
    weights: np.ndarray
    rho: np.ndarray
    factors: dict

    def integral(self, terms, offset: float = 0.0) -> float:
        """Excess ``<:N_1 N_2:>`` for a sector and its copy displaced by ``offset`` radians."""
        total = 0.0
        for t in terms:
            sig = t.widths[1] / self.rho
            ang = np.array([_interval_overlap(0.0, self.theta, offset, offset + self.theta, s) for s in sig])
            total += t.amplitude * float(np.sum(self.weights * self.factors[id(t)] * ang))
        return total


def band_model(params, geometry: HaloGeometry, partition: ZonePartition, band: int,
               lattice=None, rings: Rings | None = None) -> BandModel:
    """Match the pair source of ``pairgen`` to one polar band of a partition.

    Every lattice position hosts one side of a pair: the narrow ``k1`` side or,
    mirrored, the broad ``k2`` side, in equal numbers. In coordinates where the
    opposite zone is reflected onto the first, both members of a pair sit about
    the same position. Radial and axial captures use the discrete ring radii and
    layer heights; cells are taken as uniform in azimuth.
    """
    from .pairgen import build_lattice

    if rings is None:
        rings = Rings.from_lattice(lattice or build_lattice(geometry, params))
    dz = 2 * geometry.z_cut / partition.n_polar
    z0 = -geometry.z_cut + band * dz
    z1 = z0 + dz
    s2 = np.asarray(params.sigma_cl, dtype=float) ** 2 / 2.0
    b2 = np.asarray(params.sigma_bb, dtype=float) ** 2
    reach = 12 * math.sqrt(s2[2] + b2[2])
    sel = (rings.z > z0 - reach) & (rings.z < z1 + reach)
    z, rho, count = rings.z[sel], rings.rho[sel], rings.count[sel].astype(float)
    zc = np.clip(z, z0, z1)
    w0 = np.sqrt(np.maximum(geometry.r_min**2 - zc**2, 0.0))
    w1 = np.sqrt(np.maximum(geometry.r_max**2 - zc**2, 0.0))
    theta = 2 * math.pi / partition.n_azim
    weights = count / (2 * math.pi)      # cells per radian

    eta, nb = params.efficiency, params.n_bar

    def term(amp, spreads):
        widths = tuple(math.sqrt(vu + vv - 2 * c) for vu, vv, c in spreads)
        return GaussianTerm(amp, widths, tuple(spreads))

    own = [(s2[a], s2[a] + b2[a], s2[a]) for a in range(3)]
    cross = [(s2[a], s2[a] + b2[a], 0.0) for a in range(3)]
    narrow = [(s2[a], s2[a], 0.0) for a in range(3)]
    broad = [(s2[a] + b2[a], s2[a] + b2[a], 0.0) for a in range(3)]
    # per position: thermal <n1 n2> - n^2 = n + n^2 across the pair, <n(n-1)> - n^2 = n^2 within a mode
    bb = [term(eta**2 * nb, own), term(eta**2 * nb**2, cross)]
    cl = [term(0.5 * eta**2 * nb**2, narrow), term(0.5 * eta**2 * nb**2, broad)]

    factors = {}
    for t in bb + cl:
        r, _, a = t.spread
        factors[id(t)] = _pair_prob(rho, w0, w1, *r) * _pair_prob(z, z0, z1, *a)

    def single(var):
        return _single_prob(rho, w0, w1, var[0]) * _single_prob(z, z0, z1, var[2])

    mu = 0.5 * eta * nb * theta * float(np.sum(weights * (single(s2) + single(s2 + b2))))
    return BandModel(theta, mu, bb, cl, weights, rho, factors)


@dataclass
class SweepPrediction:
    M: np.ndarray
    C_opp: np.ndarray
    C_nbr: np.ndarray
    per_band: list


def predict_sweep(params, geometry: HaloGeometry = HaloGeometry(), n_polar: int = 8,
                  azim_list=(2, 4, 8, 16, 40, 80), lattice=None) -> SweepPrediction:
    """Opposite- and neighbour-zone C per partition, averaged over bands.

    Each band's moments are sums of box integrals of the Gaussian source terms
    over the lattice rings, i.e. ``box_integrated_c`` evaluated with centre
    positions matched to the generator instead of a uniform density.
    """
    from .pairgen import build_lattice

    rings = Rings.from_lattice(lattice or build_lattice(geometry, params))
    Ms, opp, nbr, per_band = [], [], [], []
    for n_azim in azim_list:
        part = ZonePartition(n_polar, n_azim)
        c_o, c_n = [], []
        for band in range(n_polar):
            bm = band_model(params, geometry, part, band, rings=rings)
            mu2 = bm.mean_count**2
            I_BB, I_CL = bm.integral(bm.bb_terms), bm.integral(bm.cl_terms)
            # neighbouring sector: only collinear pairs straddle the shared face(s)
            faces = [bm.theta] + ([-bm.theta] if n_azim == 2 else [])
            straddle = sum(bm.integral(bm.cl_terms, f) for f in faces)
            G11 = mu2 + I_CL
            c_o.append((mu2 + I_BB) / G11)
            c_n.append((mu2 + straddle) / G11)
            per_band.append(dict(M=part.n_zones, band=band, mean_count=bm.mean_count,
                                 I_BB=I_BB, I_CL=I_CL, I_nbr=straddle))
        Ms.append(part.n_zones)
        opp.append(float(np.mean(c_o)))
        nbr.append(float(np.mean(c_n)))
    return SweepPrediction(np.array(Ms), np.array(opp), np.array(nbr), per_band)


def prediction_report(pred: ModelPrediction) -> dict:
    return {
        "zone_dims": ",".join(f"{d:.9g}" for d in pred.zone_dims),
        "mean_count": pred.mean_count,
        "bb_terms": ";".join(f"{t.amplitude:.6g}@{','.join(f'{w:.6g}' for w in t.widths)}" for t in pred.bb_terms),
        "cl_terms": ";".join(f"{t.amplitude:.6g}@{','.join(f'{w:.6g}' for w in t.widths)}" for t in pred.cl_terms),
        "I_BB": pred.I_BB, "I_CL": pred.I_CL, "G12": pred.G12, "G11": pred.G11, "C": pred.C,
        "quadrature_nodes": pred.nodes, "quadrature_delta": pred.max_delta,
    }
