"""Input validation helpers in the spirit of ``sklearn.utils.validation``."""

import numpy as np

from .exceptions import UsageError

BACKGROUND = 0
ROAD = 1
NOT_SELECTED = 2


def check_grid(arr, name="array", dtype=None):
    arr = np.asarray(arr, dtype=dtype)
    if arr.ndim != 2:
        raise UsageError(f"{name} must be 2-D (H, W), got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise UsageError(f"{name} must have positive height and width, got {arr.shape}")
    return arr


def check_prob_map(prob, name="prob"):
    """Return ``prob`` as a float64 (H, W) array with values in [0, 1]."""
    prob = check_grid(prob, name, dtype=np.float64)
    if not np.all(np.isfinite(prob)):
        raise UsageError(f"{name} contains non-finite values")
    if prob.min() < 0.0 or prob.max() > 1.0:
        raise UsageError(f"{name} values must lie in [0, 1]")
    return prob


def check_binary_mask(mask, name="mask"):
    """Return ``mask`` as a uint8 (H, W) array over {0, 1}.

    Boolean arrays are accepted as-is; numeric arrays must already be 0/1.
    """
    mask = np.asarray(mask)
    if mask.dtype != bool:
        check_grid(mask, name)
        if not np.isin(mask, (0, 1)).all():
            raise UsageError(f"{name} must only contain 0 and 1")
    return check_grid(mask, name).astype(np.uint8)


def check_tristate(tri, name="tri"):
    tri = check_grid(tri, name)
    if not np.isin(tri, (BACKGROUND, ROAD, NOT_SELECTED)).all():
        raise UsageError(f"{name} must only contain {BACKGROUND}, {ROAD}, {NOT_SELECTED}")
    return tri.astype(np.uint8)


def check_same_shape(*arrays, names=None):
    shapes = {np.shape(a) for a in arrays}
    if len(shapes) > 1:
        names = names or [f"arg{i}" for i in range(len(arrays))]
        desc = ", ".join(f"{n}={np.shape(a)}" for n, a in zip(names, arrays))
        raise UsageError(f"dimension mismatch: {desc}")


def check_connectivity(connectivity):
    if connectivity not in (4, 8):
        raise UsageError(f"connectivity must be 4 or 8, got {connectivity!r}")
    return connectivity
