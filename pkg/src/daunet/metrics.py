"""Segmentation metrics: DSC, HD95, ASD, and the per-sample report.

Boundaries are 4-connectivity inner boundaries with the image border counted
as outside. Directed distances are exact all-pairs Euclidean minima;
percentiles interpolate linearly between closest ranks. HD95 takes the max
of the two directed 95th percentiles by default; `pooled=True` ranks both
directions' distances in one multiset instead (the alternative reading).
"""

import csv
from dataclasses import dataclass, field

import numpy as np


class MetricError(ValueError):
    """A metric precondition failed (e.g. empty mask for a distance metric)."""


def _check_masks(p, g):
    p = np.asarray(p, dtype=bool)
    g = np.asarray(g, dtype=bool)
    if p.shape != g.shape:
        raise MetricError(f"mask dims differ: {p.shape} vs {g.shape}")
    if p.ndim != 2:
        raise MetricError(f"masks must be 2d, got shape {p.shape}")
    return p, g


def dsc(p, g):
    """2|P n G| / (|P| + |G|); both-empty pairs score 1.0 (flag via both_empty)."""
    p, g = _check_masks(p, g)
    sp, sg = int(p.sum()), int(g.sum())
    if sp + sg == 0:
        return 1.0
    return 2.0 * int((p & g).sum()) / (sp + sg)


def both_empty(p, g):
    p, g = _check_masks(p, g)
    return not p.any() and not g.any()


def extract_boundary(mask):
    """(K, 2) int array of (y, x) boundary pixels, row-major order."""
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise MetricError("no boundary: mask is empty")
    padded = np.pad(mask, 1, constant_values=False)
    interior = (padded[:-2, 1:-1] & padded[2:, 1:-1]
                & padded[1:-1, :-2] & padded[1:-1, 2:])
    ys, xs = np.nonzero(mask & ~interior)
    return np.stack([ys, xs], axis=1)


def _directed_min_distances(a, b):
    """Min Euclidean distance from each point of a to the set b; exact all-pairs."""
    diff = a[:, None, :].astype(np.float64) - b[None, :, :].astype(np.float64)
    return np.sqrt((diff ** 2).sum(axis=2)).min(axis=1)


def _boundary_pair(p, g):
    p, g = _check_masks(p, g)
    if not p.any() or not g.any():
        raise MetricError("distance metrics need two nonempty masks")
    return extract_boundary(p), extract_boundary(g)


def hd95(p, g, pooled=False):
    bp, bg = _boundary_pair(p, g)
    d_pg = _directed_min_distances(bp, bg)
    d_gp = _directed_min_distances(bg, bp)
    if pooled:
        return float(np.percentile(np.concatenate([d_pg, d_gp]), 95, method="linear"))
    return float(max(np.percentile(d_pg, 95, method="linear"),
                     np.percentile(d_gp, 95, method="linear")))


def asd(p, g):
    bp, bg = _boundary_pair(p, g)
    d_pg = _directed_min_distances(bp, bg)
    d_gp = _directed_min_distances(bg, bp)
    return float((d_pg.sum() + d_gp.sum()) / (len(bp) + len(bg)))


@dataclass
class MetricsReport:
    """Per-(sample, class) metric rows plus macro means and skip accounting."""

    rows: list = field(default_factory=list)  # (sample_id, cls, dsc, hd95|None, asd|None, skipped)

    def add(self, sample_id, cls, p, g, pooled_hd95=False):
        d = dsc(p, g)
        try:
            h = hd95(p, g, pooled=pooled_hd95)
            a = asd(p, g)
            skipped = False
        except MetricError:
            h = a = None
            skipped = True
        self.rows.append((sample_id, cls, d, h, a, skipped))

    @property
    def skip_count(self):
        return sum(1 for r in self.rows if r[5])

    @property
    def mean_dsc(self):
        vals = [r[2] for r in self.rows]
        return float(np.mean(vals)) if vals else float("nan")

    @property
    def mean_hd95(self):
        vals = [r[3] for r in self.rows if r[3] is not None]
        return float(np.mean(vals)) if vals else float("nan")

    @property
    def mean_asd(self):
        vals = [r[4] for r in self.rows if r[4] is not None]
        return float(np.mean(vals)) if vals else float("nan")

    def per_class_mean_dsc(self):
        by_cls = {}
        for _, cls, d, _, _, _ in self.rows:
            by_cls.setdefault(cls, []).append(d)
        return {cls: float(np.mean(v)) for cls, v in sorted(by_cls.items())}

    def write_csv(self, path):
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["sample_id", "class", "dsc", "hd95", "asd", "skipped"])
            for sample_id, cls, d, h, a, skipped in self.rows:
                w.writerow([sample_id, cls, repr(float(d)),
                            "nan" if h is None else repr(float(h)),
                            "nan" if a is None else repr(float(a)),
                            int(skipped)])
        return path

    @classmethod
    def read_csv(cls, path):
        report = cls()
        with open(path, newline="") as f:
            r = csv.reader(f)
            header = next(r)
            if header != ["sample_id", "class", "dsc", "hd95", "asd", "skipped"]:
                raise ValueError(f"unexpected metrics CSV header in {path}: {header}")
            for sample_id, c, d, h, a, skipped in r:
                hv = float(h)
                av = float(a)
                report.rows.append((sample_id, int(c), float(d),
                                    None if np.isnan(hv) else hv,
                                    None if np.isnan(av) else av,
                                    skipped == "1"))
        return report


def evaluate_masks(pred, gt, sample_ids=None, pooled_hd95=False):
    """Build a MetricsReport from (N, C, H, W) boolean mask stacks."""
    pred = np.asarray(pred, dtype=bool)
    gt = np.asarray(gt, dtype=bool)
    if pred.shape != gt.shape:
        raise MetricError(f"mask stack dims differ: {pred.shape} vs {gt.shape}")
    n, c = pred.shape[0], pred.shape[1]
    if sample_ids is None:
        sample_ids = [str(i) for i in range(n)]
    report = MetricsReport()
    for i in range(n):
        for k in range(c):
            report.add(sample_ids[i], k, pred[i, k], gt[i, k], pooled_hd95=pooled_hd95)
    return report
