"""Handcrafted per-pixel features standing in for a deep encoder's input."""

import numpy as np
from scipy import ndimage
from sklearn.preprocessing import StandardScaler

FEATURE_NAMES = ("intensity", "local_mean", "local_std", "grad_x", "grad_y")
WINDOW = 5


def pixel_features(image, window=WINDOW):
    """(H, W, 5) features: intensity, window mean/std, |d/dx|, |d/dy|."""
    image = np.asarray(image, dtype=np.float64)
    mean = ndimage.uniform_filter(image, window, mode="reflect")
    sq = ndimage.uniform_filter(image * image, window, mode="reflect")
    std = np.sqrt(np.maximum(sq - mean * mean, 0.0))
    gy, gx = np.gradient(image)
    return np.stack([image, mean, std, np.abs(gx), np.abs(gy)], axis=-1)


class DomainScaler(StandardScaler):
    """Standardize pixel features with statistics pooled over a domain's tiles."""

    def fit_images(self, images):
        stacked = np.concatenate([pixel_features(im).reshape(-1, len(FEATURE_NAMES)) for im in images])
        return self.fit(stacked)

    def features(self, image):
        raw = pixel_features(image)
        h, w, d = raw.shape
        return self.transform(raw.reshape(-1, d)).reshape(h, w, d)
