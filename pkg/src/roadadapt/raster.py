"""Grid primitives: neighborhoods and connected components.

Rasters are numpy arrays indexed ``(row, col)`` with the origin at the
top-left corner.
"""

from typing import NamedTuple

import numpy as np
from scipy import ndimage

from ._validation import check_binary_mask, check_connectivity
from .exceptions import UsageError

OFFSETS_4 = ((-1, 0), (0, -1), (0, 1), (1, 0))
OFFSETS_8 = ((-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1))


class GridDims(NamedTuple):
    height: int
    width: int

    @classmethod
    def of(cls, arr):
        h, w = np.shape(arr)[:2]
        return cls(int(h), int(w))


def neighbors(coord, dims, connectivity=8):
    """In-bounds 4- or 8-neighbors of ``coord`` in raster order."""
    check_connectivity(connectivity)
    h, w = dims
    r, c = coord
    if not (0 <= r < h and 0 <= c < w):
        raise UsageError(f"coordinate {coord} outside grid {h}x{w}")
    offsets = OFFSETS_8 if connectivity == 8 else OFFSETS_4
    return [
        (r + dr, c + dc)
        for dr, dc in offsets
        if 0 <= r + dr < h and 0 <= c + dc < w
    ]


def connected_components(mask, connectivity=8):
    """Label the foreground of ``mask``.

    Returns ``(labels, count)``: label 0 is background, labels ``1..count``
    number the components in raster order of their first pixel.
    """
    mask = check_binary_mask(mask)
    check_connectivity(connectivity)
    structure = ndimage.generate_binary_structure(2, 2 if connectivity == 8 else 1)
    labels, count = ndimage.label(mask, structure=structure)
    return labels.astype(np.int64), int(count)
