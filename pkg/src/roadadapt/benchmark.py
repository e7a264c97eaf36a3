"""Synthetic source-to-target benchmark used by the acceptance suite.

``python -m roadadapt.benchmark`` prints the pseudo-label quality before and
after CBR and the per-round target metrics with and without CBR.
"""

import argparse
import json
import time
from dataclasses import replace

import numpy as np

from .adapt import adapt_rounds, benchmark_config, generate_pseudo_labels, train_round0
from .features import DomainScaler
from .metrics import iou_f1
from .model import ToyModel
from .pseudo import ROAD
from .synth import generate_domain, preset


def benchmark_domains(n_tiles=50, **tile_overrides):
    """Source and target tiles from the ``src`` / ``tgt`` presets."""
    src = generate_domain(preset("src", **tile_overrides), n_tiles)
    tgt = generate_domain(preset("tgt", **tile_overrides), n_tiles)
    return src, tgt


def fit_scalers(src, tgt):
    return (
        DomainScaler().fit_images([t.image for t in src]),
        DomainScaler().fit_images([t.image for t in tgt]),
    )


def pseudo_label_iou(model, tiles, config, scaler):
    """Mean per-tile IoU of the ROAD pseudo-labels against ground truth."""
    labels = generate_pseudo_labels(model, [t.image for t in tiles], config, scaler)
    return float(np.mean([iou_f1(road == ROAD, t.gt_mask)[0] for (road, _), t in zip(labels, tiles)]))


def run_benchmark(n_tiles=50, seed=0, config=None):
    config = config or benchmark_config(seed=seed)
    src, tgt = benchmark_domains(n_tiles)
    scalers = fit_scalers(src, tgt)
    t0 = time.perf_counter()
    model0, _ = train_round0(ToyModel.init(config.feature_dim, seed=config.seed), src, config, scalers[0])
    out = {
        "pseudo_label_iou": {
            "raw": pseudo_label_iou(model0, tgt, replace(config, use_cbr=False), scalers[1]),
            "cbr": pseudo_label_iou(model0, tgt, replace(config, use_cbr=True), scalers[1]),
        },
        "target_iou": {},
    }
    for use_cbr in (True, False):
        res = adapt_rounds(model0, src, tgt, replace(config, use_cbr=use_cbr), round0=False, scalers=scalers)
        out["target_iou"]["cbr" if use_cbr else "no_cbr"] = [m.iou for m in res.metrics]
    out["seconds"] = time.perf_counter() - t0
    return out


def main(argv=None):
    parser = argparse.ArgumentParser(prog="python -m roadadapt.benchmark")
    parser.add_argument("--n-tiles", type=int, default=50)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)
    print(json.dumps(run_benchmark(args.n_tiles, args.seed), indent=2))


if __name__ == "__main__":
    main()
