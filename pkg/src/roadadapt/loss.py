"""Losses over probability maps, each returned with its analytic gradient.

All functions take probabilities, not logits; the predictor applies the
sigmoid chain rule itself. Reductions use a fixed summation order
(``math.fsum`` over a flattened row-major array) so values are
bit-reproducible.
"""

import math
from dataclasses import dataclass, fields

import numpy as np

from ._validation import check_binary_mask, check_prob_map, check_same_shape
from .exceptions import NumericalError, UsageError

EPS = 1e-7


@dataclass(frozen=True)
class LossWeights:
    beta: float = 0.1
    lambda_adv: float = 0.01

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not (math.isfinite(v) and v >= 0):
                raise UsageError(f"{f.name} must be finite and >= 0, got {v}")


@dataclass(frozen=True)
class LossReport:
    seg_src: float = 0.0
    seg_tgt: float = 0.0
    skel_src: float = 0.0
    skel_tgt: float = 0.0
    conformity: float = 0.0
    adversarial: float = 0.0
    discriminator: float = 0.0
    composite: float = 0.0
    total: float = 0.0

    def as_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}


def _sum(values):
    return math.fsum(np.ravel(values).tolist())


def _clamp(p):
    return np.clip(p, EPS, 1.0 - EPS)


def _clamp_grad(p):
    # derivative of the clamp itself
    return ((p >= EPS) & (p <= 1.0 - EPS)).astype(np.float64)


def masked_bce(prob, labels, mask=None, normalize="pixels"):
    """Masked binary cross-entropy and its gradient w.r.t. ``prob``.

    ``normalize="pixels"`` divides by H*W (all pixels); ``"selected"``
    divides by the number of selected pixels instead.
    """
    prob = check_prob_map(prob)
    labels = check_binary_mask(labels, "labels").astype(np.float64)
    mask = np.ones_like(prob) if mask is None else check_binary_mask(mask).astype(np.float64)
    check_same_shape(prob, labels, mask, names=["prob", "labels", "mask"])
    if normalize == "pixels":
        denom = prob.size
    elif normalize == "selected":
        denom = max(int(mask.sum()), 1)
    else:
        raise UsageError(f"unknown normalization {normalize!r}")
    p = _clamp(prob)
    terms = mask * (labels * np.log(p) + (1.0 - labels) * np.log1p(-p))
    loss = -_sum(terms) / denom
    grad = -mask * (labels / p - (1.0 - labels) / (1.0 - p)) * _clamp_grad(prob) / denom
    return loss, grad


def conformity_loss(p_road, p_skel, skel_labels, detach_skeleton=False, reduction="sum"):
    """Squared difference of the two heads on skeleton pixels.

    Returns ``(loss, grad_road, grad_skel)``. ``reduction="sum"`` gives the
    unnormalized sum; ``"mean"`` divides by H*W and ``"gated"`` by the number
    of gated pixels. With ``detach_skeleton`` the
    skeleton-side gradient is zero.
    """
    p_road = check_prob_map(p_road, "p_road")
    p_skel = check_prob_map(p_skel, "p_skel")
    gate = check_binary_mask(skel_labels, "skel_labels").astype(np.float64)
    check_same_shape(p_road, p_skel, gate, names=["p_road", "p_skel", "skel_labels"])
    if reduction == "sum":
        scale = 1.0
    elif reduction == "mean":
        scale = 1.0 / gate.size
    elif reduction == "gated":
        scale = 1.0 / max(float(gate.sum()), 1.0)
    else:
        raise UsageError(f"unknown reduction {reduction!r}")
    diff = gate * (p_road - p_skel)
    loss = _sum(diff * diff) * scale
    diff = diff * scale
    grad_road = 2.0 * diff
    grad_skel = np.zeros_like(diff) if detach_skeleton else -2.0 * diff
    return loss, grad_road, grad_skel


def discriminator_loss(d_out, domain_label):
    """Mean cross-entropy of the discriminator against a constant domain label."""
    if domain_label not in (0, 1):
        raise UsageError(f"domain_label must be 0 or 1, got {domain_label!r}")
    d_out = check_prob_map(d_out, "d_out")
    d = _clamp(d_out)
    n = d.size
    if domain_label == 1:
        loss = -_sum(np.log(d)) / n
        grad = -1.0 / d / n
    else:
        loss = -_sum(np.log1p(-d)) / n
        grad = 1.0 / (1.0 - d) / n
    return loss, grad * _clamp_grad(d_out)


def adversarial_loss(d_out_target):
    """Loss pushing the discriminator towards the source label on target features."""
    return discriminator_loss(d_out_target, 1)


def total_loss(parts, weights=LossWeights()):
    """Fill ``composite`` and ``total`` of a :class:`LossReport`.

    ``parts`` is a LossReport or a mapping with the component losses.
    """
    if isinstance(parts, LossReport):
        parts = parts.as_dict()
    keys = ("seg_src", "seg_tgt", "skel_src", "skel_tgt", "conformity", "adversarial", "discriminator")
    vals = {k: float(parts.get(k, 0.0)) for k in keys}
    bad = [k for k, v in vals.items() if not math.isfinite(v)]
    if bad:
        raise NumericalError(f"non-finite loss component(s): {', '.join(bad)}")
    composite = vals["seg_src"] + vals["skel_src"] + vals["seg_tgt"] + vals["skel_tgt"]
    total = composite + weights.beta * vals["conformity"] + weights.lambda_adv * vals["adversarial"]
    return LossReport(**vals, composite=composite, total=total)
