"""Round-based self-training with CBR, conformity and adversarial alignment.

Round 0 trains both heads on labelled source tiles. Each later round freezes
the model, generates tri-state pseudo-labels for every target tile, and then
trains on (source tile, target tile) pairs with the total objective while a
per-pixel discriminator is updated on the detached encoder features.
"""

import logging
import math
import warnings
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from sklearn.base import BaseEstimator

from .exceptions import NumericalError, UsageError
from .features import DomainScaler
from .loss import (
    LossReport,
    LossWeights,
    adversarial_loss,
    conformity_loss,
    discriminator_loss,
    masked_bce,
    total_loss,
)
from .metrics import MetricReport, apls, extract_graph, iou_f1
from .model import ToyDiscriminator, ToyModel
from .pseudo import (
    NOT_SELECTED,
    ROAD,
    ThresholdPair,
    cbr_refine,
    select_pseudo_labels,
)
from .skeleton import skeletonize

log = logging.getLogger(__name__)

SOURCE_LABEL = 1
TARGET_LABEL = 0


@dataclass(frozen=True)
class AdaptConfig:
    road_thresholds: ThresholdPair = ThresholdPair(0.9, 0.7)
    skel_thresholds: ThresholdPair = ThresholdPair(0.5, 0.1)
    weights: LossWeights = LossWeights()
    lr_selftrain: float = 2e-4
    lr_adv: float = 1e-4
    rounds: int = 2
    epochs_per_round: int = 2
    batch_size: int = 2
    use_cbr: bool = True
    use_conformity: bool = True
    use_adversarial: bool = True
    seed: int = 0
    # round-0 (source-only) schedule
    lr_source: float = 2e-4
    epochs_round0: int = 2
    # artifact knobs
    feature_dim: int = 8
    selection_rule: str = "partition"
    normalize: str = "pixels"
    detach_skeleton: bool = False
    conformity_reduction: str = "sum"
    eval_threshold: float = 0.5
    snap_radius: float = 4.0

    def __post_init__(self):
        for name in ("lr_selftrain", "lr_adv", "lr_source"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise UsageError(f"{name} must be a positive number, got {v}")
        for name in ("rounds", "epochs_round0"):
            if getattr(self, name) < 0:
                raise UsageError(f"{name} must be >= 0")
        for name in ("epochs_per_round", "batch_size", "feature_dim"):
            if getattr(self, name) < 1:
                raise UsageError(f"{name} must be >= 1")

    def as_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        for key in ("road_thresholds", "skel_thresholds"):
            if isinstance(d.get(key), dict):
                d[key] = ThresholdPair(**d[key])
        if isinstance(d.get("weights"), dict):
            d["weights"] = LossWeights(**d["weights"])
        return cls(**d)


# Learning rates and schedule for the desk benchmark. Plain SGD at the
# default rates barely moves the tiny linear predictor within a few epochs.
BENCHMARK_OVERRIDES = {
    "lr_source": 0.5,
    "epochs_round0": 10,
    "lr_selftrain": 0.5,
    "lr_adv": 0.25,
    "conformity_reduction": "gated",
}


def benchmark_config(**overrides):
    """AdaptConfig used by the synthetic benchmark, with optional overrides."""
    return AdaptConfig(**{**BENCHMARK_OVERRIDES, **overrides})


# ---------------------------------------------------------------- objectives


@dataclass
class SourceBatch:
    feats: np.ndarray  # (H, W, d_in)
    mask: np.ndarray
    skeleton: np.ndarray


@dataclass
class TargetBatch:
    feats: np.ndarray
    road_tri: np.ndarray
    skel_tri: np.ndarray


def _bce_logit_grad(p, dp):
    return dp * p * (1.0 - p)


def _forward(model, feats, where):
    with np.errstate(over="ignore", invalid="ignore"):
        p_r, p_s, enc = model.forward(feats)
    if not (np.all(np.isfinite(p_r)) and np.all(np.isfinite(p_s))):
        raise NumericalError(f"non-finite predictions on the {where} tile; training diverged")
    return p_r, p_s, enc


def source_objective(model, batch, config, conformity=False):
    """Supervised source losses and their parameter gradients."""
    p_r, p_s, enc = _forward(model, batch.feats, "source")
    seg, g_r = masked_bce(p_r, batch.mask, normalize=config.normalize)
    skel, g_s = masked_bce(p_s, batch.skeleton, normalize=config.normalize)
    conf = 0.0
    if conformity:
        conf, c_r, c_s = conformity_loss(
            p_r, p_s, batch.skeleton, config.detach_skeleton, config.conformity_reduction
        )
        g_r = g_r + config.weights.beta * c_r
        g_s = g_s + config.weights.beta * c_s
    grads = model.backward(batch.feats, enc, _bce_logit_grad(p_r, g_r), _bce_logit_grad(p_s, g_s))
    return {"seg_src": seg, "skel_src": skel, "conformity": conf}, grads


def target_objective(model, disc, batch, config):
    """Pseudo-label, conformity and adversarial target losses with gradients."""
    p_r, p_s, enc = _forward(model, batch.feats, "target")
    road_sel = batch.road_tri != NOT_SELECTED
    skel_sel = batch.skel_tri != NOT_SELECTED
    seg, g_r = masked_bce(p_r, batch.road_tri == ROAD, road_sel, normalize=config.normalize)
    skel, g_s = masked_bce(p_s, batch.skel_tri == ROAD, skel_sel, normalize=config.normalize)
    parts = {"seg_tgt": seg, "skel_tgt": skel, "conformity": 0.0, "adversarial": 0.0}
    if config.use_conformity:
        conf, c_r, c_s = conformity_loss(
            p_r, p_s, batch.skel_tri == ROAD, config.detach_skeleton, config.conformity_reduction
        )
        parts["conformity"] = conf
        g_r = g_r + config.weights.beta * c_r
        g_s = g_s + config.weights.beta * c_s
    d_enc = None
    if config.use_adversarial and disc is not None:
        d_out = disc.forward(enc)
        adv, g_d = adversarial_loss(d_out)
        parts["adversarial"] = adv
        _, d_enc = disc.backward(enc, config.weights.lambda_adv * _bce_logit_grad(d_out, g_d))
    grads = model.backward(batch.feats, enc, _bce_logit_grad(p_r, g_r), _bce_logit_grad(p_s, g_s), d_enc)
    return parts, grads


def discriminator_objective(disc, enc_src, enc_tgt):
    """Discriminator loss on detached features of one source and one target tile."""
    d_s = disc.forward(enc_src)
    d_t = disc.forward(enc_tgt)
    l_s, g_s = discriminator_loss(d_s, SOURCE_LABEL)
    l_t, g_t = discriminator_loss(d_t, TARGET_LABEL)
    grads_s, _ = disc.backward(enc_src, _bce_logit_grad(d_s, g_s))
    grads_t, _ = disc.backward(enc_tgt, _bce_logit_grad(d_t, g_t))
    return l_s + l_t, {k: grads_s[k] + grads_t[k] for k in grads_s}


def total_objective(model, disc, src, tgt, config):
    """LossReport of the full predictor objective and its parameter gradients.

    ``tgt`` may be None, in which case only the source terms contribute.
    """
    src_parts, grads = source_objective(model, src, config, conformity=config.use_conformity)
    parts = dict(src_parts)
    if tgt is not None:
        tgt_parts, tgt_grads = target_objective(model, disc, tgt, config)
        parts["seg_tgt"] = tgt_parts["seg_tgt"]
        parts["skel_tgt"] = tgt_parts["skel_tgt"]
        parts["conformity"] = src_parts["conformity"] + tgt_parts["conformity"]
        parts["adversarial"] = tgt_parts["adversarial"]
        grads = {k: grads[k] + tgt_grads[k] for k in grads}
    report = total_loss(parts, config.weights)
    return report, grads


def _sgd(params, grads, lr):
    for k, g in grads.items():
        params[k] -= lr * g


def _check_finite(report, where):
    if not all(math.isfinite(v) for v in report.as_dict().values()):
        raise NumericalError(f"non-finite loss during {where}: {report.as_dict()}")


# ------------------------------------------------------------------ protocol


def predictor_forward(model, image, scaler):
    """Road and skeleton probabilities plus encoder features for one image."""
    image = np.asarray(image, dtype=np.float64)
    if not np.all(np.isfinite(image)):
        raise UsageError("image contains non-finite values")
    return model.forward(scaler.features(image))


def train_round0(model, source_tiles, config, scaler=None):
    """Supervised training of both heads on labelled source tiles.

    Returns ``(model, epoch_losses)``; the input model is not modified.
    """
    model = model.copy()
    scaler = scaler or DomainScaler().fit_images([t.image for t in source_tiles])
    batches = [SourceBatch(scaler.features(t.image), t.gt_mask, t.gt_skeleton) for t in source_tiles]
    rng = np.random.default_rng([config.seed, 0])
    params = model.params()
    history = []
    for epoch in range(config.epochs_round0):
        order = rng.permutation(len(batches))
        epoch_loss = 0.0
        for start in range(0, len(order), config.batch_size):
            chunk = order[start : start + config.batch_size]
            acc = None
            for i in chunk:
                parts, grads = source_objective(model, batches[i], config)
                report = total_loss(parts, config.weights)
                _check_finite(report, "round 0")
                epoch_loss += report.total
                acc = grads if acc is None else {k: acc[k] + grads[k] for k in acc}
            _sgd(params, {k: g / len(chunk) for k, g in acc.items()}, config.lr_source)
        history.append(epoch_loss / len(batches))
        log.debug("round 0 epoch %d loss %.6f", epoch, history[-1])
    return model, history


def generate_pseudo_labels(model, images, config, scaler):
    """Per-image (road, skeleton) tri-state masks from one frozen model."""
    frozen = model.copy()
    out = []
    for image in images:
        p_r, p_s, _ = predictor_forward(frozen, image, scaler)
        road = select_pseudo_labels(p_r, config.road_thresholds, rule=config.selection_rule)
        skel = select_pseudo_labels(p_s, config.skel_thresholds, rule=config.selection_rule)
        if config.use_cbr:
            road = cbr_refine(p_r, road, config.road_thresholds)
            skel = cbr_refine(p_s, skel, config.skel_thresholds)
        out.append((road, skel))
    return out


def predict_masks(model, images, scaler, threshold=0.5):
    return [(predictor_forward(model, im, scaler)[0] > threshold).astype(np.uint8) for im in images]


def evaluate_tiles(model, tiles, scaler, config):
    """Pooled IoU/F1 and mean APLS of thresholded road predictions."""
    preds = predict_masks(model, [t.image for t in tiles], scaler, config.eval_threshold)
    inter = union = total = 0
    scores = []
    for pred, tile in zip(preds, tiles):
        p, g = pred.astype(bool), tile.gt_mask.astype(bool)
        inter += int(np.count_nonzero(p & g))
        union += int(np.count_nonzero(p | g))
        total += int(np.count_nonzero(p)) + int(np.count_nonzero(g))
        scores.append(apls(extract_graph(tile.gt_skeleton), extract_graph(skeletonize(pred)), config.snap_radius))
    iou = inter / union if union else 1.0
    f1 = 2.0 * inter / total if total else 1.0
    return MetricReport(iou=iou, f1=f1, apls=math.fsum(scores) / len(scores))


@dataclass
class AdaptResult:
    model: ToyModel
    discriminator: ToyDiscriminator
    metrics: list = field(default_factory=list)  # MetricReport per round, index 0 = round 0
    losses: list = field(default_factory=list)  # mean LossReport dict per round >= 1


def adapt_rounds(model, source_tiles, target_tiles, config, round0=True, evaluate=True, scalers=None):
    """Run round 0 (optional) followed by ``config.rounds`` adaptation rounds.

    Target tiles only contribute their images to training; their ground
    truth is used for the per-round metrics when ``evaluate`` is set.
    """
    src_scaler, tgt_scaler = scalers or (
        DomainScaler().fit_images([t.image for t in source_tiles]),
        DomainScaler().fit_images([t.image for t in target_tiles]),
    )
    if round0:
        model, _ = train_round0(model, source_tiles, config, src_scaler)
    else:
        model = model.copy()
    disc = ToyDiscriminator.init(model.d_f, seed=config.seed + 1)
    result = AdaptResult(model=model, discriminator=disc)
    if evaluate:
        result.metrics.append(evaluate_tiles(model, target_tiles, tgt_scaler, config))

    src_batches = [SourceBatch(src_scaler.features(t.image), t.gt_mask, t.gt_skeleton) for t in source_tiles]
    tgt_feats = [tgt_scaler.features(t.image) for t in target_tiles]
    rng = np.random.default_rng([config.seed, 1])
    params, disc_params = model.params(), disc.params()

    for rnd in range(1, config.rounds + 1):
        labels = generate_pseudo_labels(model, [t.image for t in target_tiles], config, tgt_scaler)
        empty = all(not (r != NOT_SELECTED).any() and not (s != NOT_SELECTED).any() for r, s in labels)
        if empty:
            warnings.warn(f"round {rnd}: empty pseudo-label set, training on source terms only")
        tgt_batches = [TargetBatch(f, r, s) for f, (r, s) in zip(tgt_feats, labels)]
        sums, steps = {}, 0
        for epoch in range(config.epochs_per_round):
            tgt_order = rng.permutation(len(tgt_batches))
            src_order = rng.permutation(len(src_batches))
            for step, ti in enumerate(tgt_order):
                src = src_batches[src_order[step % len(src_order)]]
                tgt = None if empty else tgt_batches[ti]
                disc_loss = 0.0
                if config.use_adversarial and tgt is not None:
                    enc_s = model.encode(src.feats)
                    enc_t = model.encode(tgt.feats)
                    disc_loss, d_grads = discriminator_objective(disc, enc_s, enc_t)
                    _sgd(disc_params, d_grads, config.lr_adv)
                report, grads = total_objective(model, disc, src, tgt, config)
                report = replace(report, discriminator=disc_loss)
                _check_finite(report, f"round {rnd}")
                _sgd(params, grads, config.lr_selftrain)
                for k, v in report.as_dict().items():
                    sums[k] = sums.get(k, 0.0) + v
                steps += 1
        result.losses.append({k: v / max(steps, 1) for k, v in sums.items()})
        if evaluate:
            result.metrics.append(evaluate_tiles(model, target_tiles, tgt_scaler, config))
            log.info("round %d target %s", rnd, result.metrics[-1])
    result.model, result.discriminator = model, disc
    return result


# ---------------------------------------------------------------- estimators


class TopologyAwareAdapter(BaseEstimator):
    """Estimator front-end for the full adaptation protocol.

    ``fit(source_tiles, target_tiles)`` runs round 0 and the adaptation
    rounds; ``predict_proba`` / ``predict`` score target-domain images.
    Target tiles may carry ground truth, used only for ``history_``.
    """

    def __init__(
        self,
        t_high=0.9,
        t_low=0.7,
        t_high_skel=0.5,
        t_low_skel=0.1,
        beta=0.1,
        lambda_adv=0.01,
        lr_selftrain=2e-4,
        lr_adv=1e-4,
        lr_source=2e-4,
        rounds=2,
        epochs_per_round=2,
        epochs_round0=2,
        batch_size=2,
        use_cbr=True,
        use_conformity=True,
        use_adversarial=True,
        feature_dim=8,
        seed=0,
    ):
        self.t_high = t_high
        self.t_low = t_low
        self.t_high_skel = t_high_skel
        self.t_low_skel = t_low_skel
        self.beta = beta
        self.lambda_adv = lambda_adv
        self.lr_selftrain = lr_selftrain
        self.lr_adv = lr_adv
        self.lr_source = lr_source
        self.rounds = rounds
        self.epochs_per_round = epochs_per_round
        self.epochs_round0 = epochs_round0
        self.batch_size = batch_size
        self.use_cbr = use_cbr
        self.use_conformity = use_conformity
        self.use_adversarial = use_adversarial
        self.feature_dim = feature_dim
        self.seed = seed

    def to_config(self):
        return AdaptConfig(
            road_thresholds=ThresholdPair(self.t_high, self.t_low),
            skel_thresholds=ThresholdPair(self.t_high_skel, self.t_low_skel),
            weights=LossWeights(self.beta, self.lambda_adv),
            lr_selftrain=self.lr_selftrain,
            lr_adv=self.lr_adv,
            lr_source=self.lr_source,
            rounds=self.rounds,
            epochs_per_round=self.epochs_per_round,
            epochs_round0=self.epochs_round0,
            batch_size=self.batch_size,
            use_cbr=self.use_cbr,
            use_conformity=self.use_conformity,
            use_adversarial=self.use_adversarial,
            feature_dim=self.feature_dim,
            seed=self.seed,
        )

    def fit(self, source_tiles, target_tiles):
        config = self.to_config()
        self.source_scaler_ = DomainScaler().fit_images([t.image for t in source_tiles])
        self.target_scaler_ = DomainScaler().fit_images([t.image for t in target_tiles])
        has_gt = all(getattr(t, "gt_mask", None) is not None for t in target_tiles)
        model = ToyModel.init(config.feature_dim, seed=config.seed)
        result = adapt_rounds(
            model,
            source_tiles,
            target_tiles,
            config,
            evaluate=has_gt,
            scalers=(self.source_scaler_, self.target_scaler_),
        )
        self.model_ = result.model
        self.discriminator_ = result.discriminator
        self.history_ = result.metrics
        self.losses_ = result.losses
        return self

    def _scaler(self, domain):
        if not hasattr(self, "model_"):
            from sklearn.exceptions import NotFittedError

            raise NotFittedError("TopologyAwareAdapter is not fitted yet")
        return self.target_scaler_ if domain == "target" else self.source_scaler_

    def predict_proba(self, images, domain="target"):
        scaler = self._scaler(domain)
        return np.stack([predictor_forward(self.model_, im, scaler)[0] for im in images])

    def predict_skeleton_proba(self, images, domain="target"):
        scaler = self._scaler(domain)
        return np.stack([predictor_forward(self.model_, im, scaler)[1] for im in images])

    def predict(self, images, domain="target"):
        return (self.predict_proba(images, domain) > 0.5).astype(np.uint8)

    def score(self, tiles, domain="target"):
        """Pooled IoU of thresholded predictions against the tiles' masks."""
        preds = self.predict([t.image for t in tiles], domain)
        inter = sum(int(np.count_nonzero(p & t.gt_mask)) for p, t in zip(preds, tiles))
        union = sum(int(np.count_nonzero(p | t.gt_mask)) for p, t in zip(preds, tiles))
        return inter / union if union else 1.0
