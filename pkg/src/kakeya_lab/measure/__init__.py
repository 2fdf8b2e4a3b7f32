"""Tube rasterization, box counting, maximal functions and Nikodym coverage."""
from .boxcount import BoxCountReport, box_count, fit_slope
from .coverage import (CoverageReport, axis_lines, direction_lines, geodesic_lines,
                       nikodym_coverage)
from .grid import (BOURGAIN_SOURCE, STRAIGHT_SOURCE, OccupancyGrid, TubeFamily,
                   compression_family, phase_curve_family, rasterize_tubes, segment_family,
                   straight_family, straight_lattice_family, y_lattice)
from .maximal import (MaximalScanResult, ScalingFit, curved_maximal, direction_net,
                      kakeya_maximal, lp_scaling_fit, nikodym_maximal, omega_lattice,
                      tube_mask, tube_sums)

__all__ = [
    "BoxCountReport", "box_count", "fit_slope", "CoverageReport", "axis_lines",
    "direction_lines", "geodesic_lines", "nikodym_coverage", "BOURGAIN_SOURCE",
    "STRAIGHT_SOURCE", "OccupancyGrid", "TubeFamily", "compression_family",
    "phase_curve_family", "rasterize_tubes", "segment_family", "straight_family",
    "straight_lattice_family", "y_lattice", "MaximalScanResult", "ScalingFit",
    "curved_maximal", "direction_net", "kakeya_maximal", "lp_scaling_fit",
    "nikodym_maximal", "omega_lattice", "tube_mask", "tube_sums",
]
