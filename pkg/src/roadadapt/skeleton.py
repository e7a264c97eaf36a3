"""Two-subiteration parallel thinning (Zhang-Suen) with a topology guard.

Each subiteration marks deletion candidates from a snapshot of the image,
exactly like the classical parallel algorithm. Candidates are then
committed in raster order, re-checking the deletion conditions on the live
image. On inputs where the parallel rule is topology-safe this commits every
candidate; where it is not (2x2 squares, two-pixel-thick diagonals) the
re-check keeps the pixel that would have broken a component.

Zhang-Suen never deletes a pixel with seven foreground neighbors, which can
leave 2x2 blocks at junctions. Once both subiterations are stable, a
block-breaking pass deletes block pixels whose foreground neighbors stay
8-connected without them (this may merge holes, never components), and the
main loop resumes.

Pixels outside the grid are background.
"""

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from ._validation import check_binary_mask

# Ring order P2..P9 starting north, clockwise, as (dr, dc).
_RING = ((-1, 0), (-1, 1), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1))


def _ring_stack(padded):
    h, w = padded.shape[0] - 2, padded.shape[1] - 2
    return np.stack(
        [padded[1 + dr : 1 + dr + h, 1 + dc : 1 + dc + w] for dr, dc in _RING]
    )


def _deletable(ring, first):
    """Zhang-Suen conditions on a (8, ...) stack of ring values P2..P9."""
    p2, _, p4, _, p6, _, p8, _ = ring
    count = ring.sum(axis=0)
    transitions = ((ring == 0) & (np.roll(ring, -1, axis=0) == 1)).sum(axis=0)
    if first:
        directional = (p2 * p4 * p6 == 0) & (p4 * p6 * p8 == 0)
    else:
        directional = (p2 * p4 * p8 == 0) & (p2 * p6 * p8 == 0)
    return (count >= 2) & (count <= 6) & (transitions == 1) & directional


def _ring_components(bits):
    # 8-connected components among the set positions of a 3x3 ring
    cells = [_RING[i] for i in range(8) if bits >> i & 1]
    seen = set()
    count = 0
    for cell in cells:
        if cell in seen:
            continue
        count += 1
        stack = [cell]
        seen.add(cell)
        while stack:
            r, c = stack.pop()
            for other in cells:
                if other not in seen and max(abs(other[0] - r), abs(other[1] - c)) == 1:
                    seen.add(other)
                    stack.append(other)
    return count


_RING_COMPONENTS = np.array([_ring_components(b) for b in range(256)])
_RING_WEIGHTS = 1 << np.arange(8)


def _pixel_ring(padded, r, c):
    # r, c are padded coordinates
    return np.array([padded[r + dr, c + dc] for dr, dc in _RING], dtype=np.int64)


def _subiteration(padded, first):
    core = padded[1:-1, 1:-1]
    ring = _ring_stack(padded).astype(np.int64)
    candidates = (core == 1) & _deletable(ring, first)
    removed = 0
    for r, c in zip(*np.nonzero(candidates)):
        live = _pixel_ring(padded, r + 1, c + 1)
        if _deletable(live[:, None], first)[0]:
            padded[r + 1, c + 1] = 0
            removed += 1
    return removed


def _break_blocks(padded):
    core = padded[1:-1, 1:-1]
    block = core[:-1, :-1] & core[1:, :-1] & core[:-1, 1:] & core[1:, 1:]
    in_block = np.zeros_like(core)
    for dr in (0, 1):
        for dc in (0, 1):
            in_block[dr : dr + block.shape[0], dc : dc + block.shape[1]] |= block
    removed = 0
    for r, c in zip(*np.nonzero(in_block)):
        live = _pixel_ring(padded, r + 1, c + 1)
        connected = _RING_COMPONENTS[int(live @ _RING_WEIGHTS)] == 1
        if connected and _in_live_block(padded, r + 1, c + 1):
            padded[r + 1, c + 1] = 0
            removed += 1
    return removed


def _in_live_block(padded, r, c):
    for dr in (-1, 0):
        for dc in (-1, 0):
            if padded[r + dr : r + dr + 2, c + dc : c + dc + 2].all():
                return True
    return False


def skeletonize(mask):
    """Thin a binary mask to a one-pixel-wide, topology-preserving skeleton.

    The result is a subset of ``mask`` with the same number of 8-connected
    components; applying it twice gives the same result as applying it once.
    """
    mask = check_binary_mask(mask)
    padded = np.pad(mask.astype(np.uint8), 1)
    while True:
        removed = _subiteration(padded, first=True)
        removed += _subiteration(padded, first=False)
        if removed == 0:
            removed = _break_blocks(padded)
        if removed == 0:
            break
    return padded[1:-1, 1:-1].copy()


class Skeletonizer(TransformerMixin, BaseEstimator):
    """Stateless transformer wrapping :func:`skeletonize`.

    Accepts a single (H, W) mask or a stack of shape (n, H, W).
    """

    def fit(self, X, y=None):
        return self

    def transform(self, X):
        X = np.asarray(X)
        if X.ndim == 3:
            return np.stack([skeletonize(m) for m in X])
        return skeletonize(X)
