"""Halo geometry: data-volume membership and the zone partition of the shell.

All momenta are dimensionless, in units of the recoil momentum ``k_rec``.
Functions accept either a single 3-vector or an ``(n, 3)`` array of them.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

TWO_PI = 2.0 * np.pi


class WaveVector(NamedTuple):
    """A point in momentum space, in recoil units."""

    kx: float
    ky: float
    kz: float

    @property
    def kr(self) -> float:
        return float(np.sqrt(self.kx**2 + self.ky**2 + self.kz**2))

    def __neg__(self) -> "WaveVector":
        return WaveVector(-self.kx, -self.ky, -self.kz)


class DetectionEvent(NamedTuple):
    shot_index: int
    k: WaveVector


@dataclass(frozen=True)
class Shot:
    """One experimental run: the detected momenta as an ``(n, 3)`` array.

    ``n_excised`` counts detected atoms dropped outside the data volume.
    """

    index: int
    k: np.ndarray
    n_excised: int = 0

    def __len__(self) -> int:
        return len(self.k)

    @property
    def events(self) -> list[DetectionEvent]:
        return [DetectionEvent(self.index, WaveVector(*map(float, row))) for row in self.k]


@dataclass(frozen=True)
class HaloGeometry:
    """Radial band ``r_min <= |k| <= r_max`` with the poles cut at ``|kz| < z_cut``."""

    r_min: float = 0.9
    r_max: float = 1.1
    z_cut: float = 0.5

    def __post_init__(self):
        if not (0 < self.r_min < self.r_max):
            raise ValueError(f"need 0 < r_min < r_max, got {self.r_min}, {self.r_max}")
        if not self.z_cut > 0:
            raise ValueError(f"z_cut must be positive, got {self.z_cut}")

    @property
    def volume(self) -> float:
        """Exact volume of the analysed region (shell minus the two polar caps)."""
        return _band_volume(self.r_max, self.z_cut) - _band_volume(self.r_min, self.z_cut)


def _band_volume(r: float, z: float) -> float:
    # volume of the ball of radius r restricted to |kz| < z
    z = min(z, r)
    return 2.0 * np.pi * (r * r * z - z**3 / 3.0)


class ZoneId(NamedTuple):
    polar_index: int
    azim_index: int


@dataclass(frozen=True)
class ZonePartition:
    """Cut of the data volume into ``n_polar`` equal-kz bands and ``n_azim`` sectors.

    Equal-kz bands on a spherical shell have equal volume, so all
    ``n_polar * n_azim`` zones are the same size.
    """

    n_polar: int = 8
    n_azim: int = 2

    def __post_init__(self):
        if self.n_polar < 1:
            raise ValueError("n_polar must be >= 1")
        if self.n_azim < 2 or self.n_azim % 2:
            raise ValueError(f"n_azim must be even and >= 2, got {self.n_azim}")

    @property
    def n_zones(self) -> int:
        return self.n_polar * self.n_azim

    def flat_index(self, z: ZoneId) -> int:
        self._check(z)
        return z.polar_index * self.n_azim + z.azim_index

    def zone_id(self, flat: int) -> ZoneId:
        return ZoneId(*divmod(int(flat), self.n_azim))

    def zone_ids(self) -> list[ZoneId]:
        return [self.zone_id(i) for i in range(self.n_zones)]

    def _check(self, z: ZoneId):
        if not (0 <= z.polar_index < self.n_polar and 0 <= z.azim_index < self.n_azim):
            raise ValueError(f"{z} outside partition {self.n_polar}x{self.n_azim}")


def in_data_volume(k, geometry: HaloGeometry = HaloGeometry()):
    """True where ``r_min <= |k| <= r_max`` and ``|kz| < z_cut``."""
    k = np.asarray(k, dtype=float)
    kr = np.sqrt(np.sum(k * k, axis=-1))
    inside = (kr >= geometry.r_min) & (kr <= geometry.r_max) & (np.abs(k[..., 2]) < geometry.z_cut)
    return bool(inside) if inside.ndim == 0 else inside


def zone_indices(k, partition: ZonePartition, geometry: HaloGeometry = HaloGeometry()) -> np.ndarray:
    """Flat zone index of every row of ``k``; -1 outside the data volume."""
    k = np.atleast_2d(np.asarray(k, dtype=float))
    inside = in_data_volume(k, geometry)
    dz = 2.0 * geometry.z_cut / partition.n_polar
    polar = np.floor((k[:, 2] + geometry.z_cut) / dz).astype(np.int64)
    polar = np.clip(polar, 0, partition.n_polar - 1)
    angle = np.mod(np.arctan2(k[:, 1], k[:, 0]), TWO_PI)
    azim = np.floor(angle / (TWO_PI / partition.n_azim)).astype(np.int64)
    azim = np.clip(azim, 0, partition.n_azim - 1)
    return np.where(inside, polar * partition.n_azim + azim, -1)


def zone_of(k, partition: ZonePartition, geometry: HaloGeometry = HaloGeometry()) -> ZoneId | None:
    flat = int(zone_indices(k, partition, geometry)[0])
    return None if flat < 0 else partition.zone_id(flat)


def opposite_zone(z: ZoneId, partition: ZonePartition) -> ZoneId:
    """Zone containing ``-k`` for every ``k`` in ``z`` (point reflection)."""
    partition._check(z)
    return ZoneId(
        partition.n_polar - 1 - z.polar_index,
        (z.azim_index + partition.n_azim // 2) % partition.n_azim,
    )


def neighbor_zone(z: ZoneId, partition: ZonePartition) -> ZoneId:
    """Next sector in azimuth within the same polar band."""
    partition._check(z)
    return ZoneId(z.polar_index, (z.azim_index + 1) % partition.n_azim)


def sample_data_volume(n: int, geometry: HaloGeometry = HaloGeometry(), rng=None) -> np.ndarray:
    """Uniform random points inside the data volume (rejection from the bounding box)."""
    rng = np.random.default_rng(rng)
    lo = np.array([-geometry.r_max, -geometry.r_max, -geometry.z_cut])
    out = np.empty((0, 3))
    # acceptance of the bounding box is ~0.3 for the default band
    while len(out) < n:
        trial = lo + (-2 * lo) * rng.random((2 * (n - len(out)) + 64, 3))
        out = np.concatenate([out, trial[in_data_volume(trial, geometry)]])
    return out[:n]


def zone_volumes_mc(partition: ZonePartition, geometry: HaloGeometry = HaloGeometry(),
                    n_samples: int = 1_000_000, rng=None) -> np.ndarray:
    """Monte Carlo estimate of every zone's volume."""
    pts = sample_data_volume(n_samples, geometry, rng)
    counts = np.bincount(zone_indices(pts, partition, geometry), minlength=partition.n_zones)
    return geometry.volume * counts / n_samples
