"""Discrete hypersurfaces: structured sheets, triangle meshes, variations and stability."""
from .gridsurface import GridSurface
from .mesh import FIXED, FREE, TriMesh, read_off, write_off
from .variation import (DensityReport, StabilityReport, VariationField, fd_area_variation, first_variation,
                        second_variation_density, second_variation_normal, stability_report)

__all__ = [
    "GridSurface", "TriMesh", "FIXED", "FREE", "read_off", "write_off", "VariationField", "DensityReport",
    "StabilityReport", "fd_area_variation", "first_variation", "second_variation_density",
    "second_variation_normal", "stability_report",
]
