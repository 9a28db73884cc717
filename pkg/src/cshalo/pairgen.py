"""Monte Carlo generator of synthetic detection datasets.

The halo is tiled with mode cells (cylindrical coordinates, so the cell
extents line up with the transverse/axial anisotropy of the correlation
widths). Each cell is paired with its antipodal cell. In every shot a mode
pair receives a thermal (geometric) occupation ``n``, the exact single-mode
marginal of a two-mode squeezed vacuum, and emits ``n`` back-to-back atom
pairs:

* ``k1`` scatters around the centre of one of the two cells with per-axis
  standard deviation ``sigma_cl / sqrt(2)``, so two quanta of the same mode
  differ by a Gaussian of width ``sigma_cl``;
* ``k2 = -k1 + N(0, sigma_bb)``, which makes the back-to-back correlation a
  Gaussian of width ``sigma_bb``.

Which cell of a pair hosts the ``k1`` side is fixed per mode and alternates
across the lattice, so half the narrow sides lie in each hemisphere. A
per-shot coin would forbid narrow quanta on both cells in the same shot and
carve a spurious dip into the back-to-back correlation at ``dk = 0``.
"""

from __future__ import annotations

import io
import logging
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .geometry import HaloGeometry, Shot, in_data_volume, sample_data_volume
from .kvio import config_hash, read_kv, write_kv

log = logging.getLogger(__name__)

FORMAT_VERSION = "cshalo-dataset/1"

# Quantities quoted for the experiment that the surrogate does not consume;
# recorded in metadata for provenance.
PROVENANCE = {
    "v_rec_cm_per_s": 9.2,
    "trap_frequencies_hz": "1500,1500,7.5",
    "atom_number": 85000,
    "temperature_nk": 200,
}


@dataclass(frozen=True)
class SourceParams:
    """Parameters of the multimode pair source.

    ``sigma_r`` is the half-thickness of the radial band populated with mode
    cells, centred on ``shell_radius``; the default matches the analysed band. ``cell_scale`` is the
    cell extent in units of ``sigma_cl``. ``background_rate`` is the mean
    number of uncorrelated events per shot, uniform over the data volume.
    """

    n_bar: float = 0.02
    sigma_cl: tuple = (0.036, 0.036, 0.002)
    sigma_bb: tuple = (0.21, 0.21, 0.019)
    sigma_r: float = 0.10
    efficiency: float = 0.10
    n_shots: int = 3600
    seed: int = 20120901
    shell_radius: float = 1.0
    cell_scale: float = 2.0
    background_rate: float = 0.0
    allow_narrow_bb: bool = False

    def __post_init__(self):
        object.__setattr__(self, "sigma_cl", tuple(float(s) for s in self.sigma_cl))
        object.__setattr__(self, "sigma_bb", tuple(float(s) for s in self.sigma_bb))
        if len(self.sigma_cl) != 3 or len(self.sigma_bb) != 3:
            raise ValueError("sigma_cl and sigma_bb need three components")
        if not self.n_bar > 0:
            raise ValueError(f"n_bar must be positive, got {self.n_bar}")
        if min(self.sigma_cl + self.sigma_bb) <= 0 or self.sigma_r <= 0:
            raise ValueError("all widths must be positive")
        if not 0 < self.efficiency <= 1:
            raise ValueError(f"efficiency must lie in (0, 1], got {self.efficiency}")
        if int(self.n_shots) != self.n_shots or self.n_shots < 1:
            raise ValueError(f"n_shots must be a positive integer, got {self.n_shots}")
        if self.cell_scale <= 0 or self.shell_radius <= 0 or self.background_rate < 0:
            raise ValueError("cell_scale, shell_radius must be positive; background_rate >= 0")
        if any(b < c for b, c in zip(self.sigma_bb, self.sigma_cl)):
            msg = f"sigma_bb {self.sigma_bb} narrower than sigma_cl {self.sigma_cl} on some axis"
            if not self.allow_narrow_bb:
                raise ValueError(msg + " (set allow_narrow_bb to override)")
            warnings.warn(msg, stacklevel=3)

    @property
    def mode_scatter(self) -> np.ndarray:
        """Per-axis spread of one quantum around its cell centre."""
        return np.asarray(self.sigma_cl) / math.sqrt(2.0)

    def replace(self, **changes) -> "SourceParams":
        return SourceParams(**{**asdict(self), **changes})


@dataclass(frozen=True)
class ModeLattice:
    """Centres of the ``k1`` (narrow) cell of every mode pair; partners sit at ``-centers``."""

    centers: np.ndarray
    cell_size: tuple
    n_layers: int
    populated_volume: float = field(default=0.0)

    @property
    def n_pairs(self) -> int:
        return len(self.centers)

    @property
    def all_centers(self) -> np.ndarray:
        return np.concatenate([self.centers, -self.centers])

    @property
    def cell_volume(self) -> float:
        return self.populated_volume / (2 * self.n_pairs)


def build_lattice(geometry: HaloGeometry, params: SourceParams) -> ModeLattice:
    """Tile the populated band with cells of extent ``cell_scale * sigma_cl``.

    Only the ``kz > 0`` half of the cells is enumerated; their antipodes
    complete the lattice, so pairing is closed by construction. The
    enumerated cell or its antipode becomes the ``k1`` side in a
    checkerboard pattern.
    """
    cell_t = params.cell_scale * math.sqrt(params.sigma_cl[0] * params.sigma_cl[1])
    cell_z = params.cell_scale * params.sigma_cl[2]
    r_lo = max(params.shell_radius - params.sigma_r, 0.0)
    r_hi = params.shell_radius + params.sigma_r
    z_top = min(geometry.z_cut, r_hi)
    n_half = int(math.floor(z_top / cell_z + 1e-9))
    if n_half < 1:
        raise ValueError(f"axial cell size {cell_z:.4g} exceeds the band half-height {z_top:.4g}")

    blocks = []
    volume = 0.0
    for layer in range(n_half):
        z = (layer + 0.5) * cell_z
        rho_lo = math.sqrt(max(r_lo * r_lo - z * z, 0.0))
        rho_hi = math.sqrt(max(r_hi * r_hi - z * z, 0.0))
        if rho_hi <= rho_lo:
            continue
        n_rho = max(1, int(round((rho_hi - rho_lo) / cell_t)))
        d_rho = (rho_hi - rho_lo) / n_rho
        for j in range(n_rho):
            rho = rho_lo + (j + 0.5) * d_rho
            n_phi = int(math.floor(2 * math.pi * rho / cell_t + 1e-9))
            if n_phi < 1:
                continue
            a = np.arange(n_phi)
            phi = (a + 0.5) * (2 * math.pi / n_phi)
            ring = np.column_stack([rho * np.cos(phi), rho * np.sin(phi), np.full(n_phi, z)])
            sign = np.where((a + j + layer) % 2 == 0, 1.0, -1.0)
            blocks.append(ring * sign[:, None])
            volume += 2 * (2 * math.pi * rho * d_rho * cell_z)
    if not blocks:
        raise ValueError("mode cells do not fit in the populated band")
    centers = np.concatenate(blocks)
    return ModeLattice(centers, (cell_t, cell_t, cell_z), n_half, volume)


def draw_occupations(rng: np.random.Generator, n_bar: float, size: int) -> np.ndarray:
    """Thermal occupations, ``P(n) = n_bar**n / (1 + n_bar)**(n + 1)``."""
    return rng.geometric(1.0 / (1.0 + n_bar), size=size) - 1


def shot_rng(seed: int, shot_index: int) -> np.random.Generator:
    # independent substream per (seed, shot): order- and worker-independent
    return np.random.default_rng([int(seed) & (2**64 - 1), int(shot_index)])


def generate_shot(lattice: ModeLattice, params: SourceParams, shot_index: int,
                  geometry: HaloGeometry = HaloGeometry(), excise: bool = True) -> Shot:
    rng = shot_rng(params.seed, shot_index)
    n = draw_occupations(rng, params.n_bar, lattice.n_pairs)
    occupied = np.flatnonzero(n)
    base = np.repeat(lattice.centers[occupied], n[occupied], axis=0)
    q = len(base)
    k1 = base + rng.standard_normal((q, 3)) * params.mode_scatter
    k2 = -k1 + rng.standard_normal((q, 3)) * np.asarray(params.sigma_bb)
    events = np.stack([k1, k2], axis=1).reshape(-1, 3)
    events = events[rng.random(len(events)) < params.efficiency]
    n_excised = 0
    if excise:
        inside = in_data_volume(events, geometry)
        n_excised = int(len(events) - np.count_nonzero(inside))
        events = events[inside]
    if params.background_rate > 0:
        extra = sample_data_volume(rng.poisson(params.background_rate), geometry, rng)
        events = np.concatenate([events, extra])
    return Shot(shot_index, events, n_excised)


@dataclass
class Dataset:
    """Events of all shots, stored flat and sorted by shot index."""

    geometry: HaloGeometry
    params: SourceParams
    shot: np.ndarray
    k: np.ndarray
    n_shots: int
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.shot = np.asarray(self.shot, dtype=np.int64)
        self.k = np.asarray(self.k, dtype=float).reshape(-1, 3)
        if len(self.shot) and (self.shot.min() < 0 or self.shot.max() >= self.n_shots):
            raise ValueError("event shot index out of range")
        if np.any(np.diff(self.shot) < 0):
            order = np.argsort(self.shot, kind="stable")
            self.shot, self.k = self.shot[order], self.k[order]

    @property
    def offsets(self) -> np.ndarray:
        return np.searchsorted(self.shot, np.arange(self.n_shots + 1))

    @property
    def counts(self) -> np.ndarray:
        return np.diff(self.offsets)

    def shot_arrays(self) -> list[np.ndarray]:
        off = self.offsets
        return [self.k[off[i]:off[i + 1]] for i in range(self.n_shots)]

    @property
    def shots(self) -> list[Shot]:
        return [Shot(i, k) for i, k in enumerate(self.shot_arrays())]

    @classmethod
    def from_shots(cls, shots, geometry=HaloGeometry(), params=None, n_shots=None):
        arrays = [np.asarray(s.k if isinstance(s, Shot) else s, dtype=float).reshape(-1, 3) for s in shots]
        n = len(arrays) if n_shots is None else n_shots
        idx = np.concatenate([np.full(len(a), i) for i, a in enumerate(arrays)]) if arrays else np.zeros(0)
        k = np.concatenate(arrays) if arrays else np.zeros((0, 3))
        if params is None:
            params = SourceParams(n_shots=max(n, 1))
        return cls(geometry, params, idx, k, n)


def generate_dataset(geometry: HaloGeometry, params: SourceParams, workers: int = 1,
                     lattice: ModeLattice | None = None) -> Dataset:
    """Generate ``params.n_shots`` shots. Output does not depend on ``workers``."""
    lattice = lattice or build_lattice(geometry, params)

    def run(idx):
        return [generate_shot(lattice, params, i, geometry) for i in idx]

    chunks = np.array_split(np.arange(params.n_shots), max(1, min(workers * 4, params.n_shots)))
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(run, chunks))
    else:
        parts = [run(c) for c in chunks]
    shots = [s for part in parts for s in part]
    ds = Dataset.from_shots(shots, geometry, params)
    ds.metadata = {"n_mode_pairs": lattice.n_pairs, "n_excised": sum(s.n_excised for s in shots)}
    log.info("generated %d shots, %d events", params.n_shots, len(ds.k))
    return ds


def generate_uniform_dataset(geometry: HaloGeometry, mean_per_shot: float, n_shots: int,
                             seed: int = 0) -> Dataset:
    """Uncorrelated Poisson events, uniform over the data volume."""
    arrays = []
    for i in range(n_shots):
        rng = shot_rng(seed, i)
        arrays.append(sample_data_volume(rng.poisson(mean_per_shot), geometry, rng))
    params = SourceParams(n_shots=n_shots, seed=seed, background_rate=mean_per_shot)
    return Dataset.from_shots(arrays, geometry, params)


# -- serialization -----------------------------------------------------------

def dataset_metadata(ds: Dataset) -> dict:
    meta = {"format_version": FORMAT_VERSION}
    for f in fields(ds.params):
        v = getattr(ds.params, f.name)
        meta[f"source.{f.name}"] = ",".join(repr(x) for x in v) if isinstance(v, tuple) else v
    for f in fields(ds.geometry):
        meta[f"geometry.{f.name}"] = getattr(ds.geometry, f.name)
    meta["n_shots"] = ds.n_shots
    meta["n_events"] = len(ds.k)
    for key in ("n_mode_pairs", "n_excised"):
        if key in ds.metadata:
            meta[key] = int(ds.metadata[key])
    for key, v in PROVENANCE.items():
        meta[f"provenance.{key}"] = v
    meta["config_hash"] = config_hash({k: v for k, v in meta.items() if k.startswith(("source.", "geometry."))})
    return meta


def save_dataset(ds: Dataset, path) -> tuple[Path, Path]:
    """Write ``<path>`` (events CSV) and ``<path>.meta`` (key=value metadata)."""
    path = Path(path)
    rows = "".join(
        f"{s},{x:.9g},{y:.9g},{z:.9g}\n" for s, (x, y, z) in zip(ds.shot.tolist(), ds.k.tolist())
    )
    path.write_text("shot,kx,ky,kz\n" + rows)
    meta_path = path.with_name(path.name + ".meta")
    write_kv(meta_path, dataset_metadata(ds))
    return path, meta_path


def _params_from_meta(meta: dict) -> tuple[SourceParams, HaloGeometry]:
    kw = {}
    for f in fields(SourceParams):
        raw = meta.get(f"source.{f.name}")
        if raw is None:
            continue
        if f.name in ("sigma_cl", "sigma_bb"):
            kw[f.name] = tuple(float(x) for x in raw.split(","))
        elif f.name == "allow_narrow_bb":
            kw[f.name] = raw.strip() == "True"
        elif f.name in ("n_shots", "seed"):
            kw[f.name] = int(raw)
        else:
            kw[f.name] = float(raw)
    geo = {f.name: float(meta[f"geometry.{f.name}"]) for f in fields(HaloGeometry)
           if f"geometry.{f.name}" in meta}
    return SourceParams(**kw), HaloGeometry(**geo)


def load_dataset(path) -> Dataset:
    path = Path(path)
    meta_path = path.with_name(path.name + ".meta")
    meta = read_kv(meta_path) if meta_path.exists() else {}
    with open(path) as fh:
        header = fh.readline().strip()
        if header != "shot,kx,ky,kz":
            raise ValueError(f"unexpected header {header!r} in {path}")
        rest = fh.read()
    data = np.loadtxt(io.StringIO(rest), delimiter=",", ndmin=2) if rest.strip() else np.zeros((0, 4))
    data = data.reshape(-1, 4)
    shot = data[:, 0].astype(np.int64)
    if meta:
        params, geometry = _params_from_meta(meta)
        n_shots = int(meta.get("n_shots", params.n_shots))
    else:
        n_shots = int(shot.max()) + 1 if len(shot) else 1
        params, geometry = SourceParams(n_shots=n_shots), HaloGeometry()
    ds = Dataset(geometry, params, shot, data[:, 1:], n_shots, metadata=meta)
    return ds
