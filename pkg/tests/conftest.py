import numpy as np
import pytest
from scipy import ndimage


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_blob(rng, h=40, w=40):
    """Smooth random blob mask: thresholded low-pass noise."""
    noise = ndimage.gaussian_filter(rng.random((h, w)), rng.uniform(1.5, 4.0))
    return (noise > np.quantile(noise, rng.uniform(0.5, 0.85))).astype(np.uint8)


def union_find_components(mask, connectivity):
    """Independent component count: union-find over explicit pixel pairs."""
    h, w = mask.shape
    parent = {}

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    pixels = [(r, c) for r in range(h) for c in range(w) if mask[r, c]]
    for p in pixels:
        parent[p] = p
    for r, c in pixels:
        for dr in (-1, 0, 1):
            for dc in (-1, 0, 1):
                if (dr, dc) == (0, 0) or (connectivity == 4 and dr and dc):
                    continue
                q = (r + dr, c + dc)
                if q in parent:
                    parent[find(q)] = find((r, c))
    return len({find(p) for p in pixels})


# one line per acceptance criterion, printed in the terminal summary
ACCEPTANCE_RESULTS = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_RESULTS):
        terminalreporter.write_line(ACCEPTANCE_RESULTS[key])
