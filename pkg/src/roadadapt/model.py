"""Two-head linear predictor with a shared encoder, and a feature discriminator.

Parameters live in plain numpy arrays so every gradient can be written out
by hand and checked against finite differences.
"""

from dataclasses import dataclass

import numpy as np

from .features import FEATURE_NAMES


def sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


@dataclass
class ToyModel:
    enc_w: np.ndarray  # (d_f, d_in)
    enc_b: np.ndarray  # (d_f,)
    road_w: np.ndarray  # (d_f,)
    road_b: np.ndarray  # (1,)
    skel_w: np.ndarray
    skel_b: np.ndarray

    PARAMS = ("enc_w", "enc_b", "road_w", "road_b", "skel_w", "skel_b")

    @classmethod
    def init(cls, d_f=8, d_in=len(FEATURE_NAMES), seed=0, scale=0.1):
        rng = np.random.default_rng(seed)
        return cls(
            enc_w=rng.normal(0.0, scale, (d_f, d_in)),
            enc_b=np.zeros(d_f),
            road_w=rng.normal(0.0, scale, d_f),
            road_b=np.zeros(1),
            skel_w=rng.normal(0.0, scale, d_f),
            skel_b=np.zeros(1),
        )

    @classmethod
    def zeros(cls, d_f=8, d_in=len(FEATURE_NAMES)):
        return cls(np.zeros((d_f, d_in)), np.zeros(d_f), np.zeros(d_f), np.zeros(1), np.zeros(d_f), np.zeros(1))

    @property
    def d_f(self):
        return self.enc_w.shape[0]

    def params(self):
        return {k: getattr(self, k) for k in self.PARAMS}

    def copy(self):
        return type(self)(**{k: v.copy() for k, v in self.params().items()})

    def encode(self, feats):
        return feats @ self.enc_w.T + self.enc_b

    def forward(self, feats):
        """Return ``(p_road, p_skel, encoded)`` for (..., d_in) features."""
        enc = self.encode(feats)
        p_road = sigmoid(enc @ self.road_w + self.road_b[0])
        p_skel = sigmoid(enc @ self.skel_w + self.skel_b[0])
        return p_road, p_skel, enc

    def backward(self, feats, enc, dz_road, dz_skel, d_enc_extra=None):
        """Parameter gradients given gradients w.r.t. the two head logits.

        ``d_enc_extra`` is an additional gradient w.r.t. the encoder output
        (the adversarial path).
        """
        x = feats.reshape(-1, feats.shape[-1])
        e = enc.reshape(-1, enc.shape[-1])
        gr = dz_road.reshape(-1)
        gs = dz_skel.reshape(-1)
        d_enc = np.outer(gr, self.road_w) + np.outer(gs, self.skel_w)
        if d_enc_extra is not None:
            d_enc = d_enc + d_enc_extra.reshape(d_enc.shape)
        return {
            "enc_w": d_enc.T @ x,
            "enc_b": d_enc.sum(axis=0),
            "road_w": e.T @ gr,
            "road_b": np.array([gr.sum()]),
            "skel_w": e.T @ gs,
            "skel_b": np.array([gs.sum()]),
        }


@dataclass
class ToyDiscriminator:
    w: np.ndarray  # (d_f,)
    b: np.ndarray  # (1,)

    PARAMS = ("w", "b")

    @classmethod
    def init(cls, d_f=8, seed=0, scale=0.1):
        rng = np.random.default_rng(seed)
        return cls(w=rng.normal(0.0, scale, d_f), b=np.zeros(1))

    def params(self):
        return {k: getattr(self, k) for k in self.PARAMS}

    def copy(self):
        return type(self)(self.w.copy(), self.b.copy())

    def forward(self, enc):
        return sigmoid(enc @ self.w + self.b[0])

    def backward(self, enc, dz):
        """Gradients w.r.t. (w, b) and w.r.t. the encoder output."""
        e = enc.reshape(-1, enc.shape[-1])
        g = dz.reshape(-1)
        return {"w": e.T @ g, "b": np.array([g.sum()])}, np.outer(g, self.w).reshape(enc.shape)


def flatten(params):
    return np.concatenate([np.ravel(v) for v in params.values()])


def unflatten(template, flat):
    out, i = {}, 0
    for k, v in template.items():
        n = v.size
        out[k] = np.asarray(flat[i : i + n], dtype=np.float64).reshape(v.shape)
        i += n
    if i != len(flat):
        raise ValueError(f"flat parameter vector has {len(flat)} values, expected {i}")
    return out
