"""Run the full variant matrix on one dataset and emit the comparison table."""

from __future__ import annotations

import json
import os
from dataclasses import replace

from .errors import DataError
from .metrics import THRESHOLDS
from .train import evaluate, train

ABLATION_ORDER = ("baseline", "only_hcam", "only_sfm", "sfm_conv3d",
                  "shnet_no_glove", "shnet_no_pe", "shnet")
DISPLAY_NAMES = {
    "baseline": "Baseline",
    "only_hcam": "Only HCAM",
    "only_sfm": "Only SFM",
    "sfm_conv3d": "SFM+Conv3D",
    "shnet_no_glove": "SHNet w/o Glove",
    "shnet_no_pe": "SHNet w/o P.E",
    "shnet": "SHNet",
}


def resolve_dataset(data_dir):
    """A dataset directory must hold train.jsonl and test.jsonl."""
    train_manifest = os.path.join(data_dir, "train.jsonl")
    test_manifest = os.path.join(data_dir, "test.jsonl")
    for p in (train_manifest, test_manifest):
        if not os.path.exists(p):
            raise DataError(f"{data_dir}: missing manifest {os.path.basename(p)}")
    emb = os.path.join(data_dir, "embeddings.txt")
    return train_manifest, test_manifest, emb if os.path.exists(emb) else ""


def run_ablation(base_cfg, data_dir, variants=ABLATION_ORDER, echo=None):
    """Train + evaluate each variant; returns {variant: metrics dict}."""
    train_manifest, test_manifest, embeddings = resolve_dataset(data_dir)
    results = {}
    for variant in variants:
        cfg = replace(base_cfg, variant=variant, data=train_manifest,
                      embeddings=embeddings or base_cfg.embeddings,
                      out=os.path.join(base_cfg.out, variant))
        if echo:
            echo(f"[{variant}] training {cfg.steps} steps ...")
        result = train(cfg)
        acc = evaluate(cfg, result.checkpoint_path, manifest=test_manifest)
        results[variant] = acc.report_dict()
        if echo:
            echo(f"[{variant}] overall IoU {100 * results[variant]['overall_iou']:.2f}")
    return results


def format_ablation_table(results):
    """Comparison table, percentages, one row per variant."""
    header = f"{'Method':<16}" + "".join(f"{'prec@' + str(t):>10}" for t in THRESHOLDS)
    header += f"{'Overall IoU':>13}"
    lines = [header, "-" * len(header)]
    for variant in ABLATION_ORDER:
        if variant not in results:
            continue
        r = results[variant]
        row = f"{DISPLAY_NAMES[variant]:<16}"
        row += "".join(f"{r[f'prec@{t}']:>10.2f}" for t in THRESHOLDS)
        row += f"{100 * r['overall_iou']:>13.2f}"
        lines.append(row)
    return "\n".join(lines)


def write_ablation_report(results, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    table = format_ablation_table(results)
    with open(os.path.join(out_dir, "ablation.txt"), "w") as f:
        f.write(table + "\n")
    with open(os.path.join(out_dir, "ablation.json"), "w") as f:
        json.dump(results, f, indent=2)
        f.write("\n")
    return table
