"""Command-line interface.

Exit codes: 0 success, 2 usage or configuration error (including missing
inputs), 3 malformed input file, 4 numerical failure.
"""

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import jsonschema
import numpy as np

from . import io
from .adapt import AdaptConfig, adapt_rounds, predict_masks, train_round0
from .exceptions import FormatError, NumericalError, UsageError
from .features import DomainScaler
from .loss import LossWeights, conformity_loss, discriminator_loss, masked_bce, total_loss
from .metrics import evaluate
from .model import ToyDiscriminator, ToyModel
from .pseudo import (
    NOT_SELECTED,
    ROAD,
    ROAD_THRESHOLDS,
    SKELETON_THRESHOLDS,
    ThresholdPair,
    cbr_refine,
    select_pseudo_labels,
)
from .skeleton import skeletonize
from .synth import PRESETS, DomainParams, generate_domain, preset

log = logging.getLogger("roadadapt")

EXIT_OK, EXIT_USAGE, EXIT_FORMAT, EXIT_NUMERICAL = 0, 2, 3, 4


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        # argparse already exits with 2; route through UsageError for one code path
        raise UsageError(f"{self.prog}: {message}")


# ------------------------------------------------------------------ helpers


def _add_adapt_flags(p, epochs_help):
    d = AdaptConfig()
    p.add_argument("--t-high", type=float, default=d.road_thresholds.t_high)
    p.add_argument("--t-low", type=float, default=d.road_thresholds.t_low)
    p.add_argument("--t-high-skel", type=float, default=d.skel_thresholds.t_high)
    p.add_argument("--t-low-skel", type=float, default=d.skel_thresholds.t_low)
    p.add_argument("--beta", type=float, default=d.weights.beta)
    p.add_argument("--lambda-adv", type=float, default=d.weights.lambda_adv)
    p.add_argument("--lr-selftrain", type=float, default=d.lr_selftrain)
    p.add_argument("--lr-adv", type=float, default=d.lr_adv)
    p.add_argument("--lr-source", type=float, default=d.lr_source)
    p.add_argument("--rounds", type=int, default=d.rounds)
    p.add_argument("--epochs", type=int, default=None, help=epochs_help)
    p.add_argument("--epochs-round0", type=int, default=d.epochs_round0)
    p.add_argument("--conformity-reduction", choices=["sum", "mean", "gated"], default=d.conformity_reduction)
    p.add_argument("--no-cbr", action="store_true")
    p.add_argument("--no-conformity", action="store_true")
    p.add_argument("--no-adv", action="store_true")
    p.add_argument("--feature-dim", type=int, default=d.feature_dim)
    p.add_argument("--seed", type=int, default=d.seed)


def _config_from_args(args, epochs_field):
    cfg = AdaptConfig(
        road_thresholds=ThresholdPair(args.t_high, args.t_low),
        skel_thresholds=ThresholdPair(args.t_high_skel, args.t_low_skel),
        weights=LossWeights(args.beta, args.lambda_adv),
        lr_selftrain=args.lr_selftrain,
        lr_adv=args.lr_adv,
        lr_source=args.lr_source,
        rounds=args.rounds,
        epochs_round0=args.epochs_round0,
        use_cbr=not args.no_cbr,
        use_conformity=not args.no_conformity,
        use_adversarial=not args.no_adv,
        conformity_reduction=args.conformity_reduction,
        feature_dim=args.feature_dim,
        seed=args.seed,
    )
    if args.epochs is not None:
        cfg = replace(cfg, **{epochs_field: args.epochs})
    return cfg


def _config_json(cfg):
    d = cfg.as_dict()
    return json.loads(json.dumps(d))


def _save_model(path, model, disc=None):
    groups = {"model": model.params()}
    if disc is not None:
        groups["discriminator"] = disc.params()
    io.save_params(path, groups)
    return [Path(path), io.sidecar_path(path)]


def load_model(path):
    groups = io.load_params(path)
    if "model" not in groups:
        raise FormatError(f"{path} has no 'model' parameter group")
    try:
        model = ToyModel(**groups["model"])
    except TypeError as exc:
        raise FormatError(f"{path}: unexpected model parameters ({exc})") from None
    disc = ToyDiscriminator(**groups["discriminator"]) if "discriminator" in groups else None
    return model, disc


def _single_file_manifest(out, command, config, seeds=None):
    out = Path(out)
    manifest = {
        "command": command,
        "config": config,
        "seeds": seeds or {},
        "outputs": {out.name: io.sha256_file(out)},
    }
    io.write_json(out.with_name(out.name + ".manifest.json"), manifest)


def _emit_json(obj, out=None):
    text = io.dumps_json(obj)
    if out:
        io.atomic_write(out, text)
    sys.stdout.write(text)


# -------------------------------------------------------------- subcommands


def cmd_synth(args):
    overrides = json.loads(args.params) if args.params else {}
    if not isinstance(overrides, dict):
        raise UsageError("--params must be a JSON object")
    if args.seed is not None:
        overrides["seed"] = args.seed
    try:
        params = preset(args.preset, **overrides)
    except TypeError as exc:
        raise UsageError(f"bad domain parameter: {exc}") from None
    tiles = generate_domain(params, args.n_tiles)
    out = Path(args.out)
    written = io.save_tiles(out, tiles, params.as_dict())
    io.write_manifest(
        out, "synth", {"preset": args.preset, "n_tiles": args.n_tiles, "params": params.as_dict()}, {"domain": params.seed}, written
    )
    log.info("wrote %d tiles to %s", len(tiles), out)


def cmd_train(args):
    cfg = _config_from_args(args, "epochs_round0")
    tiles = io.load_tiles(args.source)
    scaler = DomainScaler().fit_images([t.image for t in tiles])
    model, history = train_round0(ToyModel.init(cfg.feature_dim, seed=cfg.seed), tiles, cfg, scaler)
    out = Path(args.out)
    written = _save_model(out / "model.f64", model)
    history_path = io.write_json(out / "history.json", {"epoch_loss": history})
    io.write_manifest(out, "train", _config_json(cfg), {"model": cfg.seed}, written + [history_path])


def cmd_adapt(args):
    cfg = _config_from_args(args, "epochs_per_round")
    result = _run_adapt(io.load_tiles(args.source), io.load_tiles(args.target), cfg, args.model, Path(args.out))
    for i, m in enumerate(result.metrics):
        log.info("round %d: %s", i, m)


def _run_adapt(source, target, cfg, model_path, out):
    scalers = (
        DomainScaler().fit_images([t.image for t in source]),
        DomainScaler().fit_images([t.image for t in target]),
    )
    if model_path:
        model, _ = load_model(model_path)
        round0 = False
    else:
        model, round0 = ToyModel.init(cfg.feature_dim, seed=cfg.seed), True
    result = adapt_rounds(model, source, target, cfg, round0=round0, scalers=scalers)
    written = _save_model(out / "model.f64", result.model, result.discriminator)
    metrics_path = out / "metrics.jsonl"
    if metrics_path.exists():
        metrics_path.unlink()
    for i, m in enumerate(result.metrics):
        io.append_jsonl(metrics_path, {"round": i, **m.as_dict()})
    written.append(metrics_path)
    preds = predict_masks(result.model, [t.image for t in target], scalers[1], cfg.eval_threshold)
    for i, pred in enumerate(preds):
        written.append(io.write_mask(out / "predictions" / f"tile_{i:04d}_pred.pgm", pred))
    extra = {
        "metrics": [{"round": i, **m.as_dict()} for i, m in enumerate(result.metrics)],
        "losses": result.losses,
    }
    io.write_manifest(out, "adapt", _config_json(cfg), {"model": cfg.seed}, written, extra)
    return result


def cmd_metrics(args):
    pred = io.read_mask(args.pred)
    gt = io.read_mask(args.gt)
    report = evaluate(pred, gt, snap_radius=args.snap_radius)
    _emit_json(report.as_dict(), args.out)


def cmd_skeletonize(args):
    io.write_mask(args.out, skeletonize(io.read_mask(args.mask)))
    _single_file_manifest(args.out, "skeletonize", {"mask": str(args.mask)})


def _head_thresholds(args):
    base = ROAD_THRESHOLDS if args.head == "road" else SKELETON_THRESHOLDS
    return ThresholdPair(
        base.t_high if args.t_high is None else args.t_high,
        base.t_low if args.t_low is None else args.t_low,
    )


def cmd_pseudo_select(args):
    th = _head_thresholds(args)
    prob = io.read_raster(args.prob).astype(np.float64)
    tri = select_pseudo_labels(prob, th, rule=args.rule)
    if args.cbr:
        tri = cbr_refine(prob, tri, th)
    io.write_mask(args.out, tri, tristate=True)
    config = {"head": args.head, "t_high": th.t_high, "t_low": th.t_low, "rule": args.rule, "cbr": args.cbr}
    _single_file_manifest(args.out, "pseudo-select", config)


def cmd_cbr(args):
    th = _head_thresholds(args)
    prob = io.read_raster(args.prob).astype(np.float64)
    tri = io.read_mask(args.tri, tristate=True)
    io.write_mask(args.out, cbr_refine(prob, tri, th), tristate=True)
    _single_file_manifest(args.out, "cbr", {"head": args.head, "t_high": th.t_high, "t_low": th.t_low})


def cmd_losses(args):
    read = lambda p: io.read_raster(p).astype(np.float64)  # noqa: E731
    weights = LossWeights(args.beta, args.lambda_adv)
    p_road, p_skel = read(args.p_road), read(args.p_skel)
    mask, skel = io.read_mask(args.mask), io.read_mask(args.skeleton)
    parts = {
        "seg_src": masked_bce(p_road, mask, normalize=args.normalize)[0],
        "skel_src": masked_bce(p_skel, skel, normalize=args.normalize)[0],
    }
    conf = conformity_loss(p_road, p_skel, skel, reduction=args.conformity_reduction)[0]
    target = [args.p_road_tgt, args.p_skel_tgt, args.tri_road, args.tri_skel]
    if any(target):
        if not all(target):
            raise UsageError("target losses need --p-road-tgt, --p-skel-tgt, --tri-road and --tri-skel")
        t_road, t_skel = read(args.p_road_tgt), read(args.p_skel_tgt)
        tri_r, tri_s = io.read_mask(args.tri_road, True), io.read_mask(args.tri_skel, True)
        parts["seg_tgt"] = masked_bce(t_road, tri_r == ROAD, tri_r != NOT_SELECTED, args.normalize)[0]
        parts["skel_tgt"] = masked_bce(t_skel, tri_s == ROAD, tri_s != NOT_SELECTED, args.normalize)[0]
        conf += conformity_loss(t_road, t_skel, tri_s == ROAD, reduction=args.conformity_reduction)[0]
    parts["conformity"] = conf
    if args.d_tgt:
        d_tgt = read(args.d_tgt)
        parts["adversarial"] = discriminator_loss(d_tgt, 1)[0]
        disc = discriminator_loss(d_tgt, 0)[0]
        if args.d_src:
            disc += discriminator_loss(read(args.d_src), 1)[0]
        parts["discriminator"] = disc
    _emit_json(total_loss(parts, weights).as_dict(), args.out)


# ----------------------------------------------------------------- pipeline

_NUM = {"type": "number"}
_PROB = {"type": "number", "minimum": 0, "maximum": 1}
_POS = {"type": "number", "exclusiveMinimum": 0}
_DOMAIN = {
    "type": "object",
    "properties": {
        "preset": {"enum": sorted(PRESETS)},
        "n_tiles": {"type": "integer", "minimum": 1},
        "params": {"type": "object"},
    },
    "required": ["preset"],
    "additionalProperties": False,
}
PIPELINE_SCHEMA = {
    "type": "object",
    "properties": {
        "seed": {"type": "integer", "minimum": 0},
        "source": _DOMAIN,
        "target": _DOMAIN,
        "adapt": {
            "type": "object",
            "properties": {
                "t_high": _PROB,
                "t_low": _PROB,
                "t_high_skel": _PROB,
                "t_low_skel": _PROB,
                "beta": {"type": "number", "minimum": 0},
                "lambda_adv": {"type": "number", "minimum": 0},
                "lr_selftrain": _POS,
                "lr_adv": _POS,
                "lr_source": _POS,
                "rounds": {"type": "integer", "minimum": 0},
                "epochs_per_round": {"type": "integer", "minimum": 1},
                "epochs_round0": {"type": "integer", "minimum": 0},
                "use_cbr": {"type": "boolean"},
                "use_conformity": {"type": "boolean"},
                "use_adversarial": {"type": "boolean"},
                "conformity_reduction": {"enum": ["sum", "mean", "gated"]},
                "normalize": {"enum": ["pixels", "selected"]},
                "selection_rule": {"enum": ["partition", "argmax"]},
                "detach_skeleton": {"type": "boolean"},
                "feature_dim": {"type": "integer", "minimum": 1},
                "eval_threshold": _PROB,
                "snap_radius": _POS,
            },
            "additionalProperties": False,
        },
    },
    "additionalProperties": False,
}

DEFAULT_PIPELINE = {
    "seed": 0,
    "source": {"preset": "src", "n_tiles": 16},
    "target": {"preset": "tgt", "n_tiles": 16},
    "adapt": {},
}


def _path(parts):
    return "$" + "".join(f"[{p}]" if isinstance(p, int) else f".{p}" for p in parts)


def validate_pipeline_config(config):
    """Check ``config`` against the schema; errors name the JSON path."""
    validator = jsonschema.Draft7Validator(PIPELINE_SCHEMA)
    errors = sorted(validator.iter_errors(config), key=lambda e: list(e.absolute_path))
    if errors:
        e = errors[0]
        raise UsageError(f"config error at {_path(e.absolute_path)}: {e.message}")
    a = config.get("adapt", {})
    for hi, lo in (("t_high", "t_low"), ("t_high_skel", "t_low_skel")):
        d = {"t_high": 0.9, "t_low": 0.7, "t_high_skel": 0.5, "t_low_skel": 0.1}
        if a.get(lo, d[lo]) >= a.get(hi, d[hi]):
            raise UsageError(f"config error at $.adapt.{lo}: must be < {hi} ({a.get(hi, d[hi])})")
    for key in ("source", "target"):
        if key in config:
            try:
                DomainParams.from_dict({**PRESETS[config[key]["preset"]].as_dict(), **config[key].get("params", {})})
            except (TypeError, UsageError) as exc:
                raise UsageError(f"config error at $.{key}.params: {exc}") from None
    return config


def pipeline_adapt_config(config):
    a = dict(config.get("adapt", {}))
    kw = {}
    d = AdaptConfig()
    kw["road_thresholds"] = ThresholdPair(a.pop("t_high", d.road_thresholds.t_high), a.pop("t_low", d.road_thresholds.t_low))
    kw["skel_thresholds"] = ThresholdPair(
        a.pop("t_high_skel", d.skel_thresholds.t_high), a.pop("t_low_skel", d.skel_thresholds.t_low)
    )
    kw["weights"] = LossWeights(a.pop("beta", d.weights.beta), a.pop("lambda_adv", d.weights.lambda_adv))
    return AdaptConfig(seed=config.get("seed", 0), **kw, **a)


def run_pipeline(config, out):
    """synth -> train -> adapt -> metrics, all under ``out``."""
    config = validate_pipeline_config({**DEFAULT_PIPELINE, **config})
    cfg = pipeline_adapt_config(config)
    out = Path(out)
    domains = {}
    for key in ("source", "target"):
        spec = config[key]
        params = preset(spec["preset"], **spec.get("params", {}))
        tiles = generate_domain(params, spec.get("n_tiles", 16))
        written = io.save_tiles(out / key, tiles, params.as_dict())
        io.write_manifest(out / key, "synth", spec, {"domain": params.seed}, written)
        domains[key] = io.load_tiles(out / key)

    train_dir = out / "round0"
    scaler = DomainScaler().fit_images([t.image for t in domains["source"]])
    model, history = train_round0(ToyModel.init(cfg.feature_dim, seed=cfg.seed), domains["source"], cfg, scaler)
    written = _save_model(train_dir / "model.f64", model)
    written.append(io.write_json(train_dir / "history.json", {"epoch_loss": history}))
    io.write_manifest(train_dir, "train", _config_json(cfg), {"model": cfg.seed}, written)

    result = _run_adapt(domains["source"], domains["target"], cfg, train_dir / "model.f64", out / "adapt")
    top = out / "manifest.json"
    outputs = sorted(p for p in out.rglob("*") if p.is_file() and p != top and not p.name.startswith("."))
    extra = {"metrics": [{"round": i, **m.as_dict()} for i, m in enumerate(result.metrics)]}
    io.write_manifest(out, "run", config, {"pipeline": config.get("seed", 0)}, outputs, extra)
    return result


def cmd_run(args):
    if args.config:
        try:
            config = json.loads(Path(args.config).read_text())
        except json.JSONDecodeError as exc:
            raise UsageError(f"config {args.config} is not valid JSON: {exc}") from None
        if not isinstance(config, dict):
            raise UsageError("config error at $: expected an object")
    else:
        config = {}
    if args.seed is not None:
        config["seed"] = args.seed
    result = run_pipeline(config, args.out)
    for i, m in enumerate(result.metrics):
        log.info("round %d: %s", i, m)


# ------------------------------------------------------------------- parser


def build_parser():
    parser = _Parser(prog="roadadapt", description="Topology-aware road segmentation adaptation toolkit.")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="generate a synthetic domain")
    p.add_argument("--preset", choices=sorted(PRESETS), required=True)
    p.add_argument("--n-tiles", type=int, default=16)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--params", help="JSON object of DomainParams overrides")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="round-0 training on a source domain")
    p.add_argument("--source", required=True)
    p.add_argument("--out", required=True)
    _add_adapt_flags(p, "round-0 epochs")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("adapt", help="full adaptation protocol")
    p.add_argument("--source", required=True)
    p.add_argument("--target", required=True)
    p.add_argument("--model", help="round-0 model; trained first when omitted")
    p.add_argument("--out", required=True)
    _add_adapt_flags(p, "epochs per adaptation round")
    p.set_defaults(func=cmd_adapt)

    p = sub.add_parser("metrics", help="IoU, F1 and APLS of a predicted mask")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--snap-radius", type=float, default=4.0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("skeletonize", help="thin a binary mask")
    p.add_argument("--mask", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_skeletonize)

    for name, func in (("pseudo-select", cmd_pseudo_select), ("cbr", cmd_cbr)):
        p = sub.add_parser(name)
        p.add_argument("--prob", required=True)
        if name == "cbr":
            p.add_argument("--tri", required=True)
        else:
            p.add_argument("--rule", choices=["partition", "argmax"], default="partition")
            p.add_argument("--cbr", action="store_true", help="refine the selection")
        p.add_argument("--head", choices=["road", "skel"], default="road")
        p.add_argument("--t-high", type=float)
        p.add_argument("--t-low", type=float)
        p.add_argument("--out", required=True)
        p.set_defaults(func=func)

    p = sub.add_parser("losses", help="evaluate a LossReport from rasters")
    for flag in ("--p-road", "--p-skel", "--mask", "--skeleton"):
        p.add_argument(flag, required=True)
    for flag in ("--p-road-tgt", "--p-skel-tgt", "--tri-road", "--tri-skel", "--d-src", "--d-tgt", "--out"):
        p.add_argument(flag)
    p.add_argument("--beta", type=float, default=0.1)
    p.add_argument("--lambda-adv", type=float, default=0.01)
    p.add_argument("--normalize", choices=["pixels", "selected"], default="pixels")
    p.add_argument("--conformity-reduction", choices=["sum", "mean", "gated"], default="sum")
    p.set_defaults(func=cmd_losses)

    p = sub.add_parser("run", help="synth -> train -> adapt -> metrics from a JSON config")
    p.add_argument("--config")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_run)
    return parser


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(
            level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s"
        )
        args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except FormatError as exc:
        print(f"format error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except NumericalError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except FileNotFoundError as exc:
        print(f"error: missing input: {exc.filename}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
