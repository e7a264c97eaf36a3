"""Tri-state pseudo-label selection and connectivity-based refinement (CBR).

A tri-state mask stores both the pseudo-label and the selection mask used by
the target-domain losses: ``ROAD`` and ``BACKGROUND`` pixels are selected
with labels 1 and 0, ``NOT_SELECTED`` pixels are ignored.
"""

from collections import deque
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from ._validation import (
    BACKGROUND,
    NOT_SELECTED,
    ROAD,
    check_prob_map,
    check_same_shape,
    check_tristate,
)
from .exceptions import UsageError
from .raster import OFFSETS_8

__all__ = [
    "BACKGROUND",
    "ROAD",
    "NOT_SELECTED",
    "ThresholdPair",
    "ROAD_THRESHOLDS",
    "SKELETON_THRESHOLDS",
    "select_pseudo_labels",
    "cbr_refine",
    "selection_mask",
    "pseudo_labels",
    "PseudoLabelSelector",
]


@dataclass(frozen=True)
class ThresholdPair:
    """Upper (seed) and lower (band floor) probability thresholds."""

    t_high: float
    t_low: float

    def __post_init__(self):
        if not (0.0 < self.t_high <= 1.0):
            raise UsageError(f"t_high must lie in (0, 1], got {self.t_high}")
        if not (0.0 <= self.t_low < 1.0):
            raise UsageError(f"t_low must lie in [0, 1), got {self.t_low}")
        if not self.t_low < self.t_high:
            raise UsageError(f"t_low ({self.t_low}) must be < t_high ({self.t_high})")

    @classmethod
    def from_background(cls, t_road, t_background):
        """Build the pair from the road/background confidences ``T_r``, ``T_b``."""
        return cls(t_high=t_road, t_low=1.0 - t_background)


ROAD_THRESHOLDS = ThresholdPair.from_background(0.9, 0.3)
SKELETON_THRESHOLDS = ThresholdPair.from_background(0.5, 0.9)


def select_pseudo_labels(prob, th=ROAD_THRESHOLDS, rule="partition"):
    """Assign ROAD / BACKGROUND / NOT_SELECTED per pixel.

    ``rule="partition"`` (default): ROAD iff ``p > t_high``, BACKGROUND iff
    ``p < t_low``, NOT_SELECTED otherwise.

    ``rule="argmax"``: the label is ``p >= 0.5`` and the pixel is selected iff
    ``p > t_high`` or ``1 - p > 1 - t_low``. Selected pixels with
    ``0.5 <= p < t_low`` then become ROAD.
    """
    prob = check_prob_map(prob)
    if not isinstance(th, ThresholdPair):
        raise UsageError("th must be a ThresholdPair")
    tri = np.full(prob.shape, NOT_SELECTED, dtype=np.uint8)
    if rule == "partition":
        tri[prob > th.t_high] = ROAD
        tri[prob < th.t_low] = BACKGROUND
    elif rule == "argmax":
        selected = (prob > th.t_high) | ((1.0 - prob) > (1.0 - th.t_low))
        label = prob >= 0.5
        tri[selected & label] = ROAD
        tri[selected & ~label] = BACKGROUND
    else:
        raise UsageError(f"unknown selection rule {rule!r}")
    return tri


def cbr_refine(prob, tri, th=ROAD_THRESHOLDS):
    """Grow ROAD labels into the uncertain band along 8-connected chains.

    Seeds are the ROAD pixels with ``p > t_high``. Every NOT_SELECTED pixel
    with ``t_low < p < t_high`` that is 8-connected to a seed through band
    pixels becomes ROAD. Growth runs
    to a fixpoint; BACKGROUND pixels never change.
    """
    prob = check_prob_map(prob)
    tri = check_tristate(tri)
    check_same_shape(prob, tri, names=["prob", "tri"])
    h, w = prob.shape
    band = (tri == NOT_SELECTED) & (prob > th.t_low) & (prob < th.t_high)
    out = tri.copy()
    queue = deque(zip(*np.nonzero((tri == ROAD) & (prob > th.t_high))))
    while queue:
        r, c = queue.popleft()
        for dr, dc in OFFSETS_8:
            rr, cc = r + dr, c + dc
            if 0 <= rr < h and 0 <= cc < w and band[rr, cc]:
                band[rr, cc] = False
                out[rr, cc] = ROAD
                queue.append((rr, cc))
    return out


def selection_mask(tri):
    """Selection mask ``m``: 1 where a pseudo-label was assigned."""
    return (check_tristate(tri) != NOT_SELECTED).astype(np.uint8)


def pseudo_labels(tri):
    """Binary pseudo-label: 1 where the tri-state value is ROAD."""
    return (check_tristate(tri) == ROAD).astype(np.uint8)


class PseudoLabelSelector(TransformerMixin, BaseEstimator):
    """Threshold probability maps into tri-state pseudo-labels.

    Parameters
    ----------
    t_high, t_low : float
        Seed and band-floor thresholds (defaults are the road-head values).
    refine : bool
        Apply :func:`cbr_refine` after selection.
    rule : {"partition", "argmax"}
        Selection rule, see :func:`select_pseudo_labels`.
    """

    def __init__(self, t_high=0.9, t_low=0.7, refine=True, rule="partition"):
        self.t_high = t_high
        self.t_low = t_low
        self.refine = refine
        self.rule = rule

    def fit(self, X=None, y=None):
        self.thresholds_ = ThresholdPair(self.t_high, self.t_low)
        return self

    def _transform_one(self, prob):
        th = ThresholdPair(self.t_high, self.t_low)
        tri = select_pseudo_labels(prob, th, rule=self.rule)
        if self.refine:
            tri = cbr_refine(prob, tri, th)
        return tri

    def transform(self, X):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 3:
            return np.stack([self._transform_one(p) for p in X])
        return self._transform_one(X)
