"""Overall IoU and Precision@X evaluation.

Overall IoU is the ratio of summed intersections to summed unions across
the whole evaluation set, not the mean of per-sample ratios. Precision@X is
the percentage of samples whose individual IoU strictly exceeds X.
"""

from __future__ import annotations

import json

import numpy as np

THRESHOLDS = (0.5, 0.6, 0.7, 0.8, 0.9)


class EvalAccumulator:
    def __init__(self):
        self.total_intersection = 0
        self.total_union = 0
        self.sample_ious = []

    def accumulate(self, pred, gt):
        pred = np.asarray(pred)
        gt = np.asarray(gt)
        if pred.shape != gt.shape:
            raise ValueError(f"accumulate: shape mismatch {pred.shape} vs {gt.shape}")
        for arr, name in ((pred, "prediction"), (gt, "ground truth")):
            if arr.dtype != bool and not np.isin(arr, (0, 1)).all():
                raise ValueError(f"accumulate: {name} mask is not binary")
        p = pred.astype(bool)
        g = gt.astype(bool)
        inter = int(np.logical_and(p, g).sum())
        union = int(np.logical_or(p, g).sum())
        self.total_intersection += inter
        self.total_union += union
        if union == 0:
            self.sample_ious.append(1.0)  # both empty
        else:
            self.sample_ious.append(inter / union)

    def merge(self, other):
        self.total_intersection += other.total_intersection
        self.total_union += other.total_union
        self.sample_ious.extend(other.sample_ious)
        return self

    def _require_samples(self):
        if not self.sample_ious:
            raise ValueError("no samples accumulated")

    def overall_iou(self):
        self._require_samples()
        if self.total_union == 0:
            return 1.0
        return self.total_intersection / self.total_union

    def precision_at(self, threshold):
        self._require_samples()
        hits = sum(1 for iou in self.sample_ious if iou > threshold)
        return 100.0 * hits / len(self.sample_ious)

    def report_lines(self):
        lines = [f"overall_iou={self.overall_iou():.6f}"]
        lines += [f"prec@{t}={self.precision_at(t):.4f}" for t in THRESHOLDS]
        return lines

    def report_dict(self):
        out = {"overall_iou": self.overall_iou(), "n_samples": len(self.sample_ious)}
        out.update({f"prec@{t}": self.precision_at(t) for t in THRESHOLDS})
        return out

    def write_report(self, text_path, json_path=None):
        with open(text_path, "w") as f:
            f.write("\n".join(self.report_lines()) + "\n")
        if json_path is not None:
            with open(json_path, "w") as f:
                json.dump(self.report_dict(), f, indent=2)
                f.write("\n")
