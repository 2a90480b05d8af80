"""
color_export.py - Map colors for reconstructed densities

Densities are binned in steps of bin_width: [0, 0.05) is black, [0.05, 0.10)
blue, then green, yellow and red. Everything above the last band stays red.
"""

import logging
import math
from dataclasses import dataclass

import numpy as np
import pandas as pd

from . import settings
from .errors import DomainError, ValidationError

logger = logging.getLogger(__name__)

POSITION_COLORS = {0: "red", 1: "black"}
EDGE_TOLERANCE = 1e-12


@dataclass(frozen=True)
class ColorBinning:
    bin_width: float = settings.BIN_WIDTH
    palette: tuple = settings.PALETTE

    def __post_init__(self):
        object.__setattr__(self, "palette", tuple(self.palette))
        if not (np.isfinite(self.bin_width) and self.bin_width > 0):
            raise ValidationError(f"bin_width must be positive, got {self.bin_width}")
        if not self.palette:
            raise ValidationError("palette must name at least one color")

    def bin_index(self, value):
        if not np.isfinite(value) or value < 0:
            raise DomainError(f"Cannot color density {value}")
        ratio = value / self.bin_width
        edge = round(ratio)
        # a value on a band edge (0.15 / 0.05 = 2.9999999999999996) belongs to the band above
        if abs(ratio - edge) <= EDGE_TOLERANCE * max(1.0, edge):
            index = int(edge)
        else:
            index = int(math.floor(ratio))
        return min(index, len(self.palette) - 1)

    def color(self, value):
        return self.palette[self.bin_index(value)]


def export_colors(reconstruction, binning=None, coordinates=None):
    """Bin every road of a reconstruction frame.

    Args:
        reconstruction: DataFrame with road_id and estimate columns
        binning: ColorBinning (defaults apply when None)
        coordinates: Optional {road_id: [x, y]} added as x, y columns

    Returns:
        DataFrame with road_id, value, bin_index, color (and x, y)
    """
    binning = binning or ColorBinning()
    values = reconstruction["estimate"].astype(float).tolist()
    indices = [binning.bin_index(v) for v in values]
    df = pd.DataFrame({
        "road_id": reconstruction["road_id"].astype(str).tolist(),
        "value": values,
        "bin_index": indices,
        "color": [binning.palette[i] for i in indices],
    })
    if coordinates:
        _attach_coordinates(df, coordinates)
    logger.info(f"Colored {len(df)} roads with bin width {binning.bin_width}")
    return df


def position_colors(reconstruction, coordinates=None):
    """Color roads by observation status: unobserved red, observed black."""
    observed = reconstruction["observed"].astype(int).tolist()
    df = pd.DataFrame({
        "road_id": reconstruction["road_id"].astype(str).tolist(),
        "observed": observed,
        "color": [POSITION_COLORS[flag] for flag in observed],
    })
    if coordinates:
        _attach_coordinates(df, coordinates)
    return df


def _attach_coordinates(df, coordinates):
    missing = [road for road in df["road_id"] if road not in coordinates]
    if missing:
        logger.warning(f"{len(missing)} road(s) have no coordinates; leaving x, y empty")
    df["x"] = [coordinates[road][0] if road in coordinates else np.nan for road in df["road_id"]]
    df["y"] = [coordinates[road][1] if road in coordinates else np.nan for road in df["road_id"]]
