"""Synthetic pair-halo datasets and multimode Cauchy-Schwarz analysis."""

from .geometry import (
    DetectionEvent, HaloGeometry, Shot, WaveVector, ZoneId, ZonePartition,
    in_data_volume, neighbor_zone, opposite_zone, zone_indices, zone_of,
)
from .pairgen import (
    Dataset, ModeLattice, SourceParams, build_lattice, generate_dataset,
    generate_shot, generate_uniform_dataset, load_dataset, save_dataset,
)

__version__ = "0.1.0"

__all__ = [
    "DetectionEvent", "HaloGeometry", "Shot", "WaveVector", "ZoneId", "ZonePartition",
    "in_data_volume", "neighbor_zone", "opposite_zone", "zone_indices", "zone_of",
    "Dataset", "ModeLattice", "SourceParams", "build_lattice", "generate_dataset",
    "generate_shot", "generate_uniform_dataset", "load_dataset", "save_dataset",
]
